use asfl_core::coordinator::{BaselinePolicy, Simulation};
use asfl_core::par::{self, Exec};
use asfl_core::scenario::ScenarioConfig;

fn small() -> ScenarioConfig {
    ScenarioConfig {
        n_clients: 4,
        n_rbs: 4,
        samples_per_client: 40,
        ..ScenarioConfig::default()
    }
    .finalize()
    .unwrap()
}

fn records(cfg: &ScenarioConfig, policy: BaselinePolicy, exec: Exec, rounds: usize) -> Vec<asfl_core::coordinator::RoundRecord> {
    let mut sim = Simulation::new(cfg.clone(), policy, exec).unwrap();
    (0..rounds).map(|_| sim.step().unwrap()).collect()
}

#[test]
fn default_round_is_finite_and_stages_add_up() {
    let cfg = ScenarioConfig::default().finalize().unwrap();
    let rec = &records(&cfg, BaselinePolicy::Asfl, Exec::best(), 1)[0];
    let c = &rec.costs;
    assert!(c.t_total_expected_s.is_finite());
    assert!(c.e_total_expected_j.iter().all(|e| e.is_finite() && *e >= 0.0));
    let sum = c.t_stage1_s + c.t_stage2_s + c.t_stage3_expected_s;
    assert!((c.t_total_expected_s - sum).abs() <= 1e-12 * sum.max(1.0));
    assert!(rec.g_obj_consistent.is_finite() && rec.g_obj_verbatim.is_finite());
    assert!(rec.decisions.rb_counts.iter().sum::<usize>() <= cfg.n_rbs);
}

#[test]
fn random_rb_is_reproducible() {
    let cfg = small();
    let a = records(&cfg, BaselinePolicy::RandRb, Exec::best(), 4);
    let b = records(&cfg, BaselinePolicy::RandRb, Exec::best(), 4);
    assert_eq!(a.iter().map(|r| &r.decisions).collect::<Vec<_>>(), b.iter().map(|r| &r.decisions).collect::<Vec<_>>());
    assert_eq!(a.iter().map(|r| r.train_loss).collect::<Vec<_>>(), b.iter().map(|r| r.train_loss).collect::<Vec<_>>());
}

#[test]
fn execution_mode_does_not_change_results() {
    let cfg = small();
    for policy in [BaselinePolicy::Asfl, BaselinePolicy::RandPower] {
        // Four workers even on a single core, so the pool really interleaves.
        let mut par = par::with_width(Some(4), || records(&cfg, policy, Exec::Parallel, 3));
        let mut seq = records(&cfg, policy, Exec::Sequential, 3);
        for r in par.iter_mut().chain(seq.iter_mut()) {
            r.timings = Default::default();
        }
        assert_eq!(par, seq, "{policy}");
    }
}

#[test]
fn baselines_pin_their_blocks() {
    let cfg = small();
    for r in records(&cfg, BaselinePolicy::FixedSplit(3), Exec::best(), 3) {
        assert_eq!(r.decisions.cut, 3);
    }
    for r in records(&cfg, BaselinePolicy::MaxPower, Exec::best(), 3) {
        assert!(r.decisions.tx_powers.iter().all(|&p| p == cfg.max_tx_power_w));
    }
}
