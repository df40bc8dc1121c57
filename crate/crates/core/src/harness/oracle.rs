//! Differential checks: each solver against an independent reference on
//! generated instances, plus single-round solver dumps.
//!
//! Every report lists one line per case with the solver's answer, the
//! reference answer and their gap, and passes when the largest gap is
//! within the registered tolerance.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coordinator::{joint_brute_force, random_counts, run_bcd_round, BaselinePolicy};
use crate::cost::{self, LayerProfile, RoundDecisions};
use crate::error::{Error, Result};
use crate::instances::{random_instance, random_round, toy_round, RoundInstance};
use crate::learner::SplitModel;
use crate::lyapunov::{drift_plus_penalty, solve_split, VirtualQueueState};
use crate::objective::{g_constraints, g_obj, ObjectiveInputs};
use crate::par::Exec;
use crate::power_solver::{
    self, client_objective_at, grid_oracle, iterate_power, surrogate_grid_oracle, AuxBudgets, PowerBranch,
    PowerProblem, PowerSolution, FALLBACK_RESOLUTION,
};
use crate::radio::{self, error_exponent_scale, fading_expectation_monte_carlo};
use crate::rb_solver::{naive_matrix_oracle, solve_rb, RbProblem, RbSolution};
use crate::scenario::{draw_environment, path_loss_linear, stream, Domain, FadingMode, ScenarioConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleKind {
    /// Packet error rate: closed form against Monte Carlo.
    Per,
    /// Closed-form power against a grid over the same surrogate.
    Power,
    /// RB solver against binary-matrix enumeration.
    Rb,
    /// Split search against direct evaluation of every cut.
    Split,
    /// Full BCD round against joint enumeration.
    Joint,
}

impl fmt::Display for OracleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OracleKind::Per => "per",
            OracleKind::Power => "power",
            OracleKind::Rb => "rb",
            OracleKind::Split => "split",
            OracleKind::Joint => "joint",
        })
    }
}

impl FromStr for OracleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "per" => OracleKind::Per,
            "power" => OracleKind::Power,
            "rb" => OracleKind::Rb,
            "split" => OracleKind::Split,
            "joint" => OracleKind::Joint,
            _ => {
                return Err(Error::Usage(format!(
                    "unknown oracle `{s}` (expected per, power, rb, split or joint)"
                )))
            }
        })
    }
}

/// Instance parameters shared by the oracles; each uses the fields it needs.
#[derive(Clone, Debug)]
pub struct OracleOptions {
    pub config: ScenarioConfig,
    pub seed: u64,
    pub instances: usize,
    pub n_clients: usize,
    pub n_rbs: usize,
    pub layers: usize,
    pub frozen: bool,
    pub draws: usize,
    pub distances_m: Vec<f64>,
    pub power_w: Option<f64>,
    pub rb_count: usize,
    pub grid_points: usize,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            config: ScenarioConfig::default(),
            seed: 1,
            instances: 20,
            n_clients: 2,
            n_rbs: 3,
            layers: 4,
            frozen: false,
            draws: 1_000_000,
            distances_m: vec![100.0, 250.0, 500.0],
            power_w: None,
            rb_count: 1,
            grid_points: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleCase {
    pub label: String,
    pub solver: String,
    pub oracle: String,
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub kind: OracleKind,
    /// What `gap` measures.
    pub gap_unit: String,
    pub tolerance: f64,
    pub max_gap: f64,
    pub passed: bool,
    pub cases: Vec<OracleCase>,
}

impl OracleReport {
    fn new(kind: OracleKind, gap_unit: &str, tolerance: f64, cases: Vec<OracleCase>) -> Self {
        let max_gap = cases.iter().map(|c| c.gap).fold(0.0, |a: f64, g| if g.is_nan() { f64::NAN } else { a.max(g) });
        OracleReport {
            kind,
            gap_unit: gap_unit.into(),
            tolerance,
            max_gap,
            passed: max_gap <= tolerance,
            cases,
        }
    }
}

impl fmt::Display for OracleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.cases {
            writeln!(f, "{}: solver {} | oracle {} | gap {:.3e}", c.label, c.solver, c.oracle, c.gap)?;
        }
        write!(
            f,
            "oracle {}: {} cases, max gap {:.3e} {} (tolerance {:.3e}): {}",
            self.kind,
            self.cases.len(),
            self.max_gap,
            self.gap_unit,
            self.tolerance,
            if self.passed { "PASS" } else { "FAIL" }
        )
    }
}

/// Gap, in standard errors, for [`OracleKind::Per`].
pub const PER_SIGMA_TOLERANCE: f64 = 3.0;
/// Gap, in grid steps, for [`OracleKind::Power`].
pub const POWER_STEP_TOLERANCE: f64 = 1.0;
/// Relative objective gap for [`OracleKind::Joint`].
pub const JOINT_REL_TOLERANCE: f64 = 0.05;
/// Grid points per client power in the joint enumeration.
pub const JOINT_GRID_POINTS: usize = 200;

pub fn run_oracle(kind: OracleKind, opts: &OracleOptions, exec: Exec) -> Result<OracleReport> {
    match kind {
        OracleKind::Per => per_oracle(opts, exec),
        OracleKind::Power => Ok(power_oracle(opts, exec)),
        OracleKind::Rb => rb_oracle(opts, exec),
        OracleKind::Split => split_oracle(opts, exec),
        OracleKind::Joint => joint_oracle(opts, exec),
    }
}

fn per_oracle(opts: &OracleOptions, exec: Exec) -> Result<OracleReport> {
    let cfg = opts.config.clone().finalize()?;
    if opts.rb_count == 0 {
        return Err(Error::Usage("per oracle needs at least one RB".into()));
    }
    let p = opts.power_w.unwrap_or(cfg.max_tx_power_w);
    let a = error_exponent_scale(opts.rb_count, &cfg);
    let mode = if opts.frozen { FadingMode::Frozen } else { FadingMode::On };
    let mut cases = Vec::new();
    for (i, &d) in opts.distances_m.iter().enumerate() {
        let theta = path_loss_linear(d);
        let link = radio::LinkState {
            gain_sq: theta,
            path_loss_linear: theta,
            rb_count: opts.rb_count,
            tx_power_w: p,
        };
        let s = radio::packet_error_rate(&link, &cfg, mode)?;
        let seed = opts.seed.wrapping_add(i as u64);
        let (mc, se) = match mode {
            FadingMode::On => {
                let (mean, se) = fading_expectation_monte_carlo(a / p, theta, opts.draws, seed, exec);
                (1.0 - mean, se)
            }
            FadingMode::Frozen => {
                // Bernoulli losses at the deterministic channel.
                let keep = radio::success_probability(a, p, theta, theta, FadingMode::Frozen);
                let mut rng = stream(seed, Domain::MonteCarlo, 0);
                let lost = (0..opts.draws).filter(|_| rng.random::<f64>() >= keep).count();
                let m = lost as f64 / opts.draws as f64;
                (m, (m * (1.0 - m) / opts.draws as f64).sqrt())
            }
        };
        let gap = if se > 0.0 {
            (s - mc).abs() / se
        } else if s == mc {
            0.0
        } else {
            f64::INFINITY
        };
        cases.push(OracleCase {
            label: format!("d={d} m p={p} W k={}", opts.rb_count),
            solver: format!("s={s:.8}"),
            oracle: format!("s={mc:.8} +- {se:.2e}"),
            gap,
        });
    }
    Ok(OracleReport::new(OracleKind::Per, "standard errors", PER_SIGMA_TOLERANCE, cases))
}

fn instance_power_problem(inst: &crate::instances::Instance) -> PowerProblem<'_> {
    PowerProblem {
        ctx: inst.ctx(),
        inputs: &inst.inputs,
        cut: inst.cut,
        prev_cut: inst.prev_cut,
        counts: &inst.counts,
        mode: inst.cfg.objective_mode,
    }
}

fn power_oracle(opts: &OracleOptions, exec: Exec) -> OracleReport {
    let mut cases = Vec::new();
    for i in 0..opts.instances {
        let inst = random_instance(opts.n_clients.max(1), opts.n_rbs.max(1), opts.seed.wrapping_add(i as u64));
        let problem = instance_power_problem(&inst);
        let aux = AuxBudgets::proportional(&inst.cfg, power_solver::max_fp_energy(&problem));
        let sol = iterate_power(&problem, &inst.powers, aux, 0.0, 1, exec);
        for (n, r) in sol.clients.iter().enumerate() {
            let (Some(b), Some(om)) = (r.bounds, r.omega) else { continue };
            if matches!(r.branch, PowerBranch::Fallback | PowerBranch::Idle) {
                continue;
            }
            let points = opts.grid_points.max(2);
            let step = (b.hi - b.lo) / (points - 1) as f64;
            let g = surrogate_grid_oracle(b.lo, b.hi, om.omega2, om.omega3, points);
            let expected = match r.critical {
                Some(pc) if pc < b.lo => PowerBranch::C1,
                Some(pc) if pc <= b.hi => PowerBranch::C2,
                _ => PowerBranch::Otherwise,
            };
            let gap = if expected != r.branch {
                f64::INFINITY
            } else if step > 0.0 {
                (r.p - g).abs() / step
            } else {
                0.0
            };
            cases.push(OracleCase {
                label: format!("instance {i} client {n} [{:.4e}, {:.4e}]", b.lo, b.hi),
                solver: format!("p={:.6e} {:?}", r.p, r.branch),
                oracle: format!("p={g:.6e} {expected:?}"),
                gap,
            });
        }
    }
    OracleReport::new(OracleKind::Power, "grid steps", POWER_STEP_TOLERANCE, cases)
}

fn rb_oracle(opts: &OracleOptions, exec: Exec) -> Result<OracleReport> {
    let (n, k) = (opts.n_clients, opts.n_rbs);
    if n == 0 || n > 4 || k > 6 {
        return Err(Error::Usage("rb oracle enumerates matrices: use 1 <= n <= 4 and k <= 6".into()));
    }
    let mut cases = Vec::new();
    for i in 0..opts.instances {
        let inst = random_instance(n, k, opts.seed.wrapping_add(i as u64));
        let problem = RbProblem {
            ctx: inst.ctx(),
            inputs: &inst.inputs,
            cut: inst.cut,
            prev_cut: inst.prev_cut,
            powers: &inst.powers,
            mode: inst.cfg.objective_mode,
        };
        let a = solve_rb(&problem, exec);
        let b = naive_matrix_oracle(&problem);
        let same = a.assignment == b.assignment && a.infeasible == b.infeasible;
        cases.push(OracleCase {
            label: format!("instance {i}"),
            solver: format!("{:?} g={:.6e} v={:.3e}", a.assignment.counts, a.score.g_obj, a.score.violation),
            oracle: format!("{:?} g={:.6e} v={:.3e}", b.assignment.counts, b.score.g_obj, b.score.violation),
            gap: if same { 0.0 } else { (a.score.g_obj - b.score.g_obj).abs() + (a.score.violation - b.score.violation).abs() + f64::MIN_POSITIVE },
        });
    }
    Ok(OracleReport::new(OracleKind::Rb, "objective + violation", 0.0, cases))
}

fn split_oracle(opts: &OracleOptions, exec: Exec) -> Result<OracleReport> {
    if opts.layers < 2 {
        return Err(Error::Usage("split oracle needs at least two layers".into()));
    }
    let mut cases = Vec::new();
    for i in 0..opts.instances {
        let seed = opts.seed.wrapping_add(i as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let widths: Vec<usize> = (0..=opts.layers).map(|_| rng.random_range(4..40)).collect();
        let n = opts.n_clients.max(1);
        let k = opts.n_rbs.max(1);
        let inst = random_round(&widths, n, k, seed, true);
        let ctx = inst.inputs(BaselinePolicy::Asfl).ctx;
        let base = RoundDecisions {
            cut: inst.prev_cut,
            prev_cut: inst.prev_cut,
            rb_counts: random_counts(n, k, seed),
            tx_powers: (0..n).map(|_| rng.random_range(0.05..inst.cfg.max_tx_power_w)).collect(),
        };
        let mode = inst.cfg.objective_mode;
        let allowed = inst.cfg.allowed_cut_mask();
        let eval = |cut: usize| {
            let c = cost::round_costs(&RoundDecisions { cut, ..base.clone() }, &ctx).ok()?;
            let (g0, gn) = g_constraints(&c, &inst.cfg);
            let mut g = vec![g0];
            g.extend(gn);
            Some((g, g_obj(inst.table[cut].as_ref()?, &c.s, mode)))
        };
        let (choice, _) = solve_split(&inst.queues, &allowed, eval, exec)?;
        // Reference: a plain loop computing the drift-plus-penalty value.
        let mut best: Option<(usize, f64)> = None;
        let mut dpp_of_choice = f64::NAN;
        for cut in (1..allowed.len()).filter(|&c| allowed[c]) {
            let dec = RoundDecisions { cut, ..base.clone() };
            let Ok(c) = cost::round_costs(&dec, &ctx) else { continue };
            let (g0, gn) = g_constraints(&c, &inst.cfg);
            let g: Vec<f64> = std::iter::once(g0).chain(gn).collect();
            let obj = g_obj(inst.table[cut].as_ref().expect("every cut has inputs"), &c.s, mode);
            let v = drift_plus_penalty(&inst.queues, &g, obj);
            if cut == choice.cut {
                dpp_of_choice = v;
            }
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((cut, v));
            }
        }
        let (cut, v) = best.ok_or_else(|| Error::Infeasible("no cut evaluates".into()))?;
        cases.push(OracleCase {
            label: format!("instance {i} widths {widths:?}"),
            solver: format!("cut {} dpp {dpp_of_choice:.6e}", choice.cut),
            oracle: format!("cut {cut} dpp {v:.6e}"),
            gap: if choice.cut == cut { 0.0 } else { (dpp_of_choice - v).abs().max(f64::MIN_POSITIVE) },
        });
    }
    Ok(OracleReport::new(OracleKind::Split, "drift-plus-penalty", 0.0, cases))
}

fn joint_oracle(opts: &OracleOptions, exec: Exec) -> Result<OracleReport> {
    let mut cases = Vec::new();
    for i in 0..opts.instances {
        let t = toy_round(opts.seed.wrapping_add(i as u64));
        let inputs = t.inputs(BaselinePolicy::Asfl);
        let n = t.cfg.n_clients;
        let init_counts = crate::coordinator::initial_counts(n, t.cfg.n_rbs);
        let out = run_bcd_round(&inputs, &init_counts, &vec![t.cfg.max_tx_power_w; n], exec)?;
        let best = joint_brute_force(&inputs, JOINT_GRID_POINTS);
        let g = *out.g_trace.last().expect("trace has the start point");
        let d = &out.decisions;
        let b = &best.decisions;
        cases.push(OracleCase {
            label: format!("toy {i}"),
            solver: format!("cut {} k {:?} p {:?} g={g:.6e}", d.cut, d.rb_counts, round3(&d.tx_powers)),
            oracle: format!("cut {} k {:?} p {:?} g={:.6e}", b.cut, b.rb_counts, round3(&b.tx_powers), best.g_obj),
            gap: ((g - best.g_obj) / best.g_obj.abs().max(f64::MIN_POSITIVE)).max(0.0),
        });
    }
    Ok(OracleReport::new(OracleKind::Joint, "relative", JOINT_REL_TOLERANCE, cases))
}

fn round3(xs: &[f64]) -> Vec<f64> {
    xs.iter().map(|x| (x * 1e3).round() / 1e3).collect()
}

/// Round `round` of a run from `cfg`, seen from the initial model with empty
/// queues: the environment draw, and objective scalars for every allowed cut.
pub fn snapshot_round(cfg: &ScenarioConfig, round: usize) -> Result<RoundInstance> {
    cfg.validate()?;
    let env = draw_environment(cfg, round);
    let cut = cfg.initial_cut;
    let model = SplitModel::new(&cfg.model_widths, cfg.n_clients, cut, cfg.seeds.model)?;
    let mut mask = cfg.allowed_cut_mask();
    mask[cut] = true;
    let table: Vec<Option<ObjectiveInputs>> = mask
        .iter()
        .enumerate()
        .map(|(c, &on)| on.then(|| ObjectiveInputs::from_model(&model, c, cfg.sampling_ratio, cfg.seeds.sampling, round)))
        .collect();
    Ok(RoundInstance {
        profile: LayerProfile::from_config(cfg),
        clients: env.clients,
        channels: env.channels,
        table,
        queues: VirtualQueueState::new(cfg.n_clients, cfg.queue_memory, cfg.penalty_weight),
        prev_cut: cut,
        power_uniforms: env.power_uniforms,
        rb_seed: env.rb_seed,
        cfg: cfg.clone(),
    })
}

fn round_rb_problem<'a>(inst: &'a RoundInstance, powers: &'a [f64]) -> RbProblem<'a> {
    RbProblem {
        ctx: inst.inputs(BaselinePolicy::Asfl).ctx,
        inputs: inst.table[inst.prev_cut].as_ref().expect("snapshot covers the current cut"),
        cut: inst.prev_cut,
        prev_cut: inst.prev_cut,
        powers,
        mode: inst.cfg.objective_mode,
    }
}

/// The RB subproblem of a snapshot at the current cut and full power.
pub fn solve_round_rb(inst: &RoundInstance, exec: Exec) -> RbSolution {
    let powers = vec![inst.cfg.max_tx_power_w; inst.cfg.n_clients];
    solve_rb(&round_rb_problem(inst, &powers), exec)
}

/// One client's power decision next to the exact-objective grid optimum
/// over the same interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub client: usize,
    pub k: usize,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub branch: PowerBranch,
    pub p: f64,
    pub oracle_p: Option<f64>,
    /// Objective at `p` minus objective at `oracle_p`.
    pub gap: Option<f64>,
}

/// The power subproblem of a snapshot, with counts from the RB solver at
/// full power, and a per-client comparison against the grid optimum.
pub fn solve_round_power(inst: &RoundInstance, exec: Exec) -> (Vec<usize>, PowerSolution, Vec<PowerRow>) {
    let cfg = &inst.cfg;
    let counts = solve_round_rb(inst, exec).assignment.counts;
    let powers = vec![cfg.max_tx_power_w; cfg.n_clients];
    let problem = PowerProblem {
        ctx: inst.inputs(BaselinePolicy::Asfl).ctx,
        inputs: inst.table[inst.prev_cut].as_ref().expect("snapshot covers the current cut"),
        cut: inst.prev_cut,
        prev_cut: inst.prev_cut,
        counts: &counts,
        mode: cfg.objective_mode,
    };
    let mut rng = stream(cfg.seeds.env, Domain::AuxInit, 0);
    let aux = AuxBudgets::initial(&problem, &powers, &mut rng);
    let sol = iterate_power(&problem, &powers, aux, cfg.solver_tol_power, cfg.power_max_iters, exec);
    let rows = sol
        .clients
        .iter()
        .enumerate()
        .map(|(n, r)| {
            let live = r.bounds.filter(|b| !b.empty());
            let oracle_p = live.map(|b| grid_oracle(&problem, n, b.lo, b.hi, FALLBACK_RESOLUTION));
            PowerRow {
                client: n,
                k: counts[n],
                lo: r.bounds.map(|b| b.lo),
                hi: r.bounds.map(|b| b.hi),
                branch: r.branch,
                p: r.p,
                oracle_p,
                gap: oracle_p.map(|q| client_objective_at(&problem, n, r.p) - client_objective_at(&problem, n, q)),
            }
        })
        .collect();
    (counts, sol, rows)
}
