//! Small self-contained solver instances for differential tests and the
//! oracle subcommands. Everything a round's subproblems read is owned here,
//! so an instance can be built from a seed without running a simulation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::coordinator::{BaselinePolicy, RoundInputs};
use crate::cost::{CostContext, LayerProfile, RoundDecisions};
use crate::learner::{draw_batches, train_round, SplitModel};
use crate::lyapunov::VirtualQueueState;
use crate::objective::ObjectiveInputs;
use crate::par::Exec;
use crate::scenario::{
    partition_data, path_loss_linear, synthetic_dataset, ChannelDraw, ClientProfile, FadingMode, ScenarioConfig,
};

#[derive(Clone, Debug)]
pub struct Instance {
    pub cfg: ScenarioConfig,
    pub profile: LayerProfile,
    pub clients: Vec<ClientProfile>,
    pub channels: Vec<ChannelDraw>,
    pub inputs: ObjectiveInputs,
    pub powers: Vec<f64>,
    pub counts: Vec<usize>,
    pub cut: usize,
    pub prev_cut: usize,
}

impl Instance {
    pub fn ctx(&self) -> CostContext<'_> {
        CostContext {
            cfg: &self.cfg,
            profile: &self.profile,
            clients: &self.clients,
            channels: &self.channels,
        }
    }
}

/// Random objective scalars with `||w_bar||^2 = 5`.
pub fn random_inputs(n: usize, cut: usize, rng: &mut impl Rng) -> ObjectiveInputs {
    ObjectiveInputs {
        cut,
        iota: 1.0,
        client_terms: (0..n).map(|_| rng.random_range(0.0..1.0)).collect(),
        server_norm_sq: 5.0,
        server_inner: (0..n).map(|_| rng.random_range(3.0..5.0)).collect(),
        server_copy_norm_sq: (0..n).map(|_| rng.random_range(4.0..6.0)).collect(),
    }
}

/// A random instance with `n` clients, `k` RBs and the default six-layer
/// toy widths. Budgets, workloads, channels and powers are all randomized;
/// fading is frozen or on with equal odds.
pub fn random_instance(n: usize, k: usize, seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ScenarioConfig {
        n_clients: n,
        n_rbs: k,
        fading: if rng.random() { FadingMode::On } else { FadingMode::Frozen },
        delay_budget_s: rng.random_range(0.5..20.0),
        energy_budget_j: rng.random_range(0.05..0.5),
        ..ScenarioConfig::default()
    }
    .finalize()
    .expect("randomized fields stay in range");
    let profile = LayerProfile::from_widths(&cfg.model_widths, rng.random_range(1e2..1e4));
    let clients: Vec<ClientProfile> = (0..n)
        .map(|id| ClientProfile {
            id,
            n_samples: rng.random_range(20..200),
            cpu_hz: rng.random_range(1e8..2e9),
            distance_m: rng.random_range(20.0..500.0),
        })
        .collect();
    let channels = clients
        .iter()
        .map(|c| {
            let theta = path_loss_linear(c.distance_m);
            ChannelDraw {
                path_loss_linear: theta,
                fading_gain_sq: 1.0,
                gain_sq: theta,
            }
        })
        .collect();
    let inputs = random_inputs(n, 2, &mut rng);
    let powers = (0..n).map(|_| rng.random_range(1e-3..1.5)).collect();
    let mut counts = vec![0; n];
    for _ in 0..k {
        counts[rng.random_range(0..n)] += 1;
    }
    Instance {
        cfg,
        profile,
        clients,
        channels,
        inputs,
        powers,
        counts,
        cut: 2,
        prev_cut: 3,
    }
}

/// Everything a whole round's decision problem reads, with objective
/// scalars for every candidate cut.
#[derive(Clone, Debug)]
pub struct RoundInstance {
    pub cfg: ScenarioConfig,
    pub profile: LayerProfile,
    pub clients: Vec<ClientProfile>,
    pub channels: Vec<ChannelDraw>,
    pub table: Vec<Option<ObjectiveInputs>>,
    pub queues: VirtualQueueState,
    pub prev_cut: usize,
    pub power_uniforms: Vec<f64>,
    pub rb_seed: u64,
}

impl RoundInstance {
    pub fn inputs(&self, policy: BaselinePolicy) -> RoundInputs<'_> {
        RoundInputs {
            ctx: CostContext {
                cfg: &self.cfg,
                profile: &self.profile,
                clients: &self.clients,
                channels: &self.channels,
            },
            objective: &self.table,
            queues: &self.queues,
            prev_cut: self.prev_cut,
            policy,
            round: 0,
            power_uniforms: &self.power_uniforms,
            rb_seed: self.rb_seed,
        }
    }
}

/// A random round over a network with the given widths. Every cut gets
/// objective scalars; queues are random when `busy_queues` is set.
pub fn random_round(widths: &[usize], n: usize, k: usize, seed: u64, busy_queues: bool) -> RoundInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = widths.len() - 1;
    let cfg = ScenarioConfig {
        n_clients: n,
        n_rbs: k,
        model_widths: widths.to_vec(),
        initial_cut: 1,
        fading: FadingMode::Frozen,
        ..ScenarioConfig::default()
    }
    .finalize()
    .expect("valid widths");
    let profile = LayerProfile::from_widths(widths, rng.random_range(1e3..1e4));
    let clients: Vec<ClientProfile> = (0..n)
        .map(|id| ClientProfile {
            id,
            n_samples: 100,
            cpu_hz: rng.random_range(1e9..1.6e9),
            distance_m: rng.random_range(100.0..500.0),
        })
        .collect();
    let channels = clients
        .iter()
        .map(|c| {
            let theta = path_loss_linear(c.distance_m);
            ChannelDraw {
                path_loss_linear: theta,
                fading_gain_sq: 1.0,
                gain_sq: theta,
            }
        })
        .collect();
    let table = (0..=m)
        .map(|c| (1..=m).contains(&c).then(|| random_inputs(n, c, &mut rng)))
        .collect();
    let mut queues = VirtualQueueState::new(n, cfg.queue_memory, cfg.penalty_weight);
    if busy_queues {
        queues.queues = (0..=n).map(|_| rng.random_range(0.0..5.0)).collect();
    }
    let prev_cut = rng.random_range(1..m);
    RoundInstance {
        power_uniforms: (0..n).map(|_| rng.random()).collect(),
        rb_seed: rng.random(),
        cfg,
        profile,
        clients,
        channels,
        table,
        queues,
        prev_cut,
    }
}

/// Three layers, two clients, two RBs, slack budgets: small enough for a
/// joint search over cut, counts and powers. The objective scalars come
/// from a split model trained for a few rounds on non-IID data at cut 2,
/// so cut 1 sees per-client server copies of layer 2.
pub fn toy_round(seed: u64) -> RoundInstance {
    let widths = [4, 6, 6, 3];
    let mut inst = random_round(&widths, 2, 2, seed, false);
    let cut = 2;
    let cfg = ScenarioConfig {
        samples_per_client: 40,
        dirichlet_alpha: 0.3,
        ..inst.cfg.clone()
    };
    let mut data_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let data = synthetic_dataset(80, widths[0], widths[3], 1.0, &mut data_rng);
    let partition = partition_data(&cfg, &data).expect("80 samples cover two clients");
    let mut model = SplitModel::new(&widths, 2, cut, seed).expect("valid widths");
    let dec = RoundDecisions {
        cut,
        prev_cut: cut,
        rb_counts: vec![1, 1],
        tx_powers: vec![1.0, 1.0],
    };
    for round in 0..5 {
        let batches = draw_batches(&data, &partition, 16, seed, round);
        train_round(&mut model, &dec, &[true, true], &batches, &[40, 40], 0.5, Exec::Sequential)
            .expect("cut matches");
    }
    inst.table = (0..=3)
        .map(|c| (1..=2).contains(&c).then(|| ObjectiveInputs::from_model(&model, c, 1.0, seed, 0)))
        .collect();
    inst.prev_cut = cut;
    inst
}
