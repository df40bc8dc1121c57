use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use super::{stream, Domain, FadingMode, ScenarioConfig};

/// Distances are clamped here so the log-distance model stays finite.
pub const MIN_DISTANCE_M: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientProfile {
    pub id: usize,
    pub n_samples: usize,
    pub cpu_hz: f64,
    pub distance_m: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelDraw {
    pub path_loss_linear: f64,
    pub fading_gain_sq: f64,
    pub gain_sq: f64,
}

/// Everything random about one round.
///
/// Besides channels, the round stream supplies the uniforms that realize
/// packet losses and the baseline policies, in a fixed order (fading, loss
/// uniforms, power uniforms, then one word for the RB baseline) so that
/// every policy sees identical channels and loss draws for a given seed.
#[derive(Clone, Debug, PartialEq)]
pub struct Environment {
    pub round: usize,
    pub clients: Vec<ClientProfile>,
    pub channels: Vec<ChannelDraw>,
    pub loss_uniforms: Vec<f64>,
    pub power_uniforms: Vec<f64>,
    pub rb_seed: u64,
}

pub fn path_loss_db(distance_m: f64) -> f64 {
    -30.0 - 40.0 * distance_m.log10()
}

pub fn path_loss_linear(distance_m: f64) -> f64 {
    10f64.powf(path_loss_db(distance_m) / 10.0)
}

fn draw_distances(cfg: &ScenarioConfig, rng: &mut impl Rng) -> Vec<f64> {
    (0..cfg.n_clients)
        .map(|_| {
            // Uniform over the disk: radius ~ R sqrt(U).
            let u: f64 = rng.random();
            (cfg.coverage_radius_m * u.sqrt()).max(MIN_DISTANCE_M)
        })
        .collect()
}

/// Static client attributes: CPU frequency, sample count and initial position.
pub fn draw_topology(cfg: &ScenarioConfig) -> Vec<ClientProfile> {
    let mut rng = stream(cfg.seeds.env, Domain::Topology, 0);
    let distances = draw_distances(cfg, &mut rng);
    let [lo, hi] = cfg.cpu_freq_range_hz;
    distances
        .into_iter()
        .enumerate()
        .map(|(id, distance_m)| {
            let u: f64 = rng.random();
            ClientProfile {
                id,
                n_samples: cfg.samples_per_client,
                cpu_hz: lo + (hi - lo) * u,
                distance_m,
            }
        })
        .collect()
}

/// Draws the environment of `round`. A pure function of the env seed and
/// the round index.
pub fn draw_environment(cfg: &ScenarioConfig, round: usize) -> Environment {
    let mut clients = draw_topology(cfg);
    if cfg.redraw_positions {
        let mut rng = stream(cfg.seeds.env, Domain::Positions, round as u64);
        for (c, d) in clients.iter_mut().zip(draw_distances(cfg, &mut rng)) {
            c.distance_m = d;
        }
    }
    let n = cfg.n_clients;
    let mut rng = stream(cfg.seeds.env, Domain::Round, round as u64);
    let fading: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let loss_uniforms: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let power_uniforms: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let rb_seed: u64 = rng.random();
    let channels = clients
        .iter()
        .zip(&fading)
        .map(|(c, &chi)| {
            let theta = path_loss_linear(c.distance_m);
            let chi = match cfg.fading {
                FadingMode::On => chi.max(f64::MIN_POSITIVE),
                FadingMode::Frozen => 1.0,
            };
            ChannelDraw {
                path_loss_linear: theta,
                fading_gain_sq: chi,
                gain_sq: theta * chi,
            }
        })
        .collect();
    Environment {
        round,
        clients,
        channels,
        loss_uniforms,
        power_uniforms,
        rb_seed,
    }
}
