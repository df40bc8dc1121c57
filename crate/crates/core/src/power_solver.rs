//! Transmit power for fixed cut and RB counts.
//!
//! Six auxiliary budgets split the round's delay budget over the three
//! stages and the energy budget (less forward-pass energy) over migration,
//! upload and client back-propagation. Given budgets, each client's power
//! lies in an interval `[lo, hi]` and the objective's closed-form minimizer
//! is clipped to it; budgets are then refreshed to the realized per-stage
//! maxima and the two steps alternate.
//!
//! The closed form treats the objective as `w2 x^2 + w3 x` with
//! `x = exp(1/p)`, where `w2 = E0^2 ||w_n||^2` and
//! `w3 = -2 E0 <w_bar, w_n>` and `E0` is the packet success probability at
//! unit power. On that surrogate the closed form is exact; against the true
//! objective it is an approximation, so both oracles are provided.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cost::{self, client_terms, CostContext};
use crate::objective::{g_obj, ObjectiveInputs};
use crate::par::{self, Exec};
use crate::radio;
use crate::scenario::{AuxInit, BoundForm, ObjectiveMode, ScenarioConfig};

/// Smallest power handed to a client holding RBs; zero power would make its
/// upload take forever.
pub const MIN_POWER_W: f64 = 1e-9;

/// Stage-delay budgets `gamma_1..3` (s) and energy-component budgets
/// `delta_1..3` (J).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuxBudgets {
    pub gamma: [f64; 3],
    pub delta: [f64; 3],
}

impl AuxBudgets {
    /// Each delay budget gets a third of `gamma`, each energy budget a third
    /// of `delta - max E_fp`, clamped at zero.
    pub fn proportional(cfg: &ScenarioConfig, max_fp_energy: f64) -> Self {
        let e = (cfg.energy_budget_j - max_fp_energy).max(0.0) / 3.0;
        let t = cfg.delay_budget_s / 3.0;
        AuxBudgets {
            gamma: [t; 3],
            delta: [e; 3],
        }
    }

    /// Uniform random splits of the same totals.
    pub fn random(cfg: &ScenarioConfig, max_fp_energy: f64, rng: &mut impl Rng) -> Self {
        let mut split = |total: f64| {
            let w: [f64; 3] = [rng.random(), rng.random(), rng.random()];
            let sum: f64 = w.iter().sum::<f64>().max(f64::MIN_POSITIVE);
            w.map(|x| total * x / sum)
        };
        let gamma = split(cfg.delay_budget_s);
        let delta = split((cfg.energy_budget_j - max_fp_energy).max(0.0));
        AuxBudgets { gamma, delta }
    }

    /// Budgets that admit `realized` where the totals allow: each component
    /// keeps its realized value and the leftover is shared evenly. When the
    /// realized components overrun a total they are scaled down to fit.
    pub fn warm(cfg: &ScenarioConfig, max_fp_energy: f64, realized: &AuxBudgets) -> Self {
        let fit = |parts: [f64; 3], total: f64| {
            let used: f64 = parts.iter().sum();
            if used <= total {
                parts.map(|x| x + (total - used) / 3.0)
            } else {
                parts.map(|x| x * total / used)
            }
        };
        AuxBudgets {
            gamma: fit(realized.gamma, cfg.delay_budget_s),
            delta: fit(realized.delta, (cfg.energy_budget_j - max_fp_energy).max(0.0)),
        }
    }

    /// Starting budgets for [`iterate_power`] from `init_powers`, according
    /// to the configured strategy.
    pub fn initial(problem: &PowerProblem, init_powers: &[f64], rng: &mut impl Rng) -> Self {
        let cfg = problem.ctx.cfg;
        let max_fp = max_fp_energy(problem);
        match cfg.power_init {
            AuxInit::Proportional => Self::proportional(cfg, max_fp),
            AuxInit::Random => Self::random(cfg, max_fp, rng),
            AuxInit::Warm => Self::warm(cfg, max_fp, &refresh_budgets(problem, init_powers)),
        }
    }
}

/// The fixed blocks of the power subproblem.
#[derive(Clone, Copy, Debug)]
pub struct PowerProblem<'a> {
    pub ctx: CostContext<'a>,
    pub inputs: &'a ObjectiveInputs,
    pub cut: usize,
    pub prev_cut: usize,
    pub counts: &'a [usize],
    pub mode: ObjectiveMode,
}

/// Power-independent quantities of one client.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientConstants {
    pub k: usize,
    pub gain_sq: f64,
    pub path_loss: f64,
    /// `alpha B N0 k`.
    pub a: f64,
    /// Success probability at unit power.
    pub e0: f64,
    /// Bits uploaded for migration (zero unless the cut shrinks).
    pub migration_up_bits: f64,
    pub t_fp: f64,
    pub e_fp: f64,
    /// Activation bits uploaded in stage 2.
    pub upload_bits: f64,
    /// Stage-3 delay of this client's path when nothing is lost:
    /// its own server work, gradient download and client BP.
    pub omega1: f64,
    /// Client BP energy when nothing is lost.
    pub bp_energy: f64,
}

fn constants(problem: &PowerProblem, n: usize) -> ClientConstants {
    let ctx = &problem.ctx;
    let cfg = ctx.cfg;
    let k = problem.counts[n];
    let ch = &ctx.channels[n];
    let cl = &ctx.clients[n];
    let d = cl.n_samples as f64;
    let prof = ctx.profile;
    let a = radio::error_exponent_scale(k, cfg);
    let e0 = radio::success_probability(a, 1.0, ch.gain_sq, ch.path_loss_linear, ctx.fading());
    let migration_up_bits = if problem.cut < problem.prev_cut {
        prof.migration_bits(problem.prev_cut, problem.cut)
    } else {
        0.0
    };
    let cycles_per_joule = cfg.energy_coeff * cfg.client_cycles_per_flop * cl.cpu_hz * cl.cpu_hz;
    let grad_bits = d * prof.gradient_bits(problem.cut);
    let t_dn_full = if grad_bits == 0.0 { 0.0 } else { grad_bits / radio::downlink_rate(ch.gain_sq, cfg) };
    let t_cbp_full = cfg.client_cycles_per_flop * prof.client_bp(problem.cut) * d / cl.cpu_hz;
    ClientConstants {
        k,
        gain_sq: ch.gain_sq,
        path_loss: ch.path_loss_linear,
        a,
        e0,
        migration_up_bits,
        t_fp: cfg.client_cycles_per_flop * prof.client_fp(problem.cut) * d / cl.cpu_hz,
        e_fp: d * prof.client_fp(problem.cut) * cycles_per_joule,
        upload_bits: d * prof.cut_output_bits(problem.cut),
        omega1: cost::server_seconds_per_sample(ctx, problem.cut) * d + t_dn_full + t_cbp_full,
        bp_energy: d * prof.client_bp(problem.cut) * cycles_per_joule,
    }
}

/// `w1`, `w2`, `w3` and `E0` for one client.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OmegaCoefficients {
    pub omega1: f64,
    pub omega2: f64,
    pub omega3: f64,
    pub e0: f64,
}

pub fn omega_coefficients(problem: &PowerProblem, n: usize) -> OmegaCoefficients {
    let c = constants(problem, n);
    let inp = problem.inputs;
    OmegaCoefficients {
        omega1: c.omega1,
        omega2: c.e0 * c.e0 * inp.server_copy_norm_sq[n],
        omega3: -2.0 * c.e0 * inp.server_inner[n],
        e0: c.e0,
    }
}

/// The six bounds of one client and the resulting interval. `c[0..2]` are
/// lower bounds, `c[2..6]` upper bounds; an inactive bound is `0` (lower)
/// or `+inf` (upper).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientBounds {
    pub c: [f64; 6],
    pub lo: f64,
    pub hi: f64,
}

impl ClientBounds {
    pub fn empty(&self) -> bool {
        !(self.lo <= self.hi)
    }
}

fn success(c: &ClientConstants, p: f64, problem: &PowerProblem) -> f64 {
    radio::success_probability(c.a, p, c.gain_sq, c.path_loss, problem.ctx.fading())
}

fn rate_lower_bound(bits: f64, seconds: f64, c: &ClientConstants, cfg: &ScenarioConfig) -> f64 {
    if bits == 0.0 {
        return 0.0;
    }
    if !(seconds > 0.0) {
        return f64::INFINITY;
    }
    let b = cfg.rb_bandwidth_hz;
    b * cfg.noise_psd_w_per_hz * (2f64.powf(bits / (seconds * b * c.k as f64)) - 1.0) / c.gain_sq
}

/// Largest `p` in `[MIN_POWER_W, p_max]` with `f(p) <= target` for an
/// increasing `f`: `+inf` if `p_max` already satisfies it, `0` if nothing does.
fn upper_from_increasing(f: impl Fn(f64) -> f64, target: f64, p_max: f64) -> f64 {
    if f(p_max) <= target {
        return f64::INFINITY;
    }
    if !(f(MIN_POWER_W) <= target) {
        return 0.0;
    }
    let (mut lo, mut hi) = (MIN_POWER_W.ln(), p_max.ln());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid.exp()) <= target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-10 {
            break;
        }
    }
    lo.exp()
}

fn transmit_energy(bits: f64, p: f64, c: &ClientConstants, cfg: &ScenarioConfig) -> f64 {
    p * bits / radio::uplink_rate_raw(c.k, p, c.gain_sq, cfg)
}

/// Low-SNR energy bound: `2 B N0 / g (1 - bits N0 ln 2 / (budget k g))`.
/// Negative means no power meets the budget.
fn taylor_energy_bound(bits: f64, budget: f64, c: &ClientConstants, cfg: &ScenarioConfig) -> f64 {
    if bits == 0.0 {
        return f64::INFINITY;
    }
    let n0 = cfg.noise_psd_w_per_hz;
    let v = 2.0 * cfg.rb_bandwidth_hz * n0 / c.gain_sq
        * (1.0 - bits * n0 * std::f64::consts::LN_2 / (budget * c.k as f64 * c.gain_sq));
    if v.is_nan() {
        0.0
    } else {
        v.max(0.0)
    }
}

/// `1 / ln(arg)`, inactive when `arg <= 1` (the constraint then holds at
/// every power).
fn log_form_bound(arg: f64) -> f64 {
    if arg > 1.0 {
        1.0 / arg.ln()
    } else {
        f64::INFINITY
    }
}

/// Bounds of client `n` at the given budgets. `other_load` is the expected
/// number of samples the server receives from everyone else, which adds a
/// fixed term to this client's stage-3 path in the exact form.
pub fn client_bounds(problem: &PowerProblem, n: usize, aux: &AuxBudgets, other_load: f64) -> ClientBounds {
    let c = constants(problem, n);
    bounds_from_constants(problem, &c, aux, other_load)
}

fn bounds_from_constants(problem: &PowerProblem, c: &ClientConstants, aux: &AuxBudgets, other_load: f64) -> ClientBounds {
    let cfg = problem.ctx.cfg;
    let p_max = cfg.max_tx_power_w;
    let [g1, g2, g3] = aux.gamma;
    let [d1, d2, d3] = aux.delta;
    let c1 = rate_lower_bound(c.migration_up_bits, g1, c, cfg);
    let c2 = rate_lower_bound(c.upload_bits, g2 - c.t_fp, c, cfg);
    let (c3, c4, c5, c6) = match cfg.power_bounds {
        BoundForm::Exact => {
            let server_other = cost::server_seconds_per_sample(&problem.ctx, problem.cut) * other_load;
            let c3 = if c.omega1 == 0.0 {
                f64::INFINITY
            } else {
                upper_from_increasing(|p| success(c, p, problem), (g3 - server_other) / c.omega1, p_max)
            };
            let energy_cap = |bits: f64, budget: f64| {
                if bits == 0.0 {
                    f64::INFINITY
                } else {
                    upper_from_increasing(|p| transmit_energy(bits, p, c, cfg), budget, p_max)
                }
            };
            let c6 = if c.bp_energy == 0.0 {
                f64::INFINITY
            } else {
                upper_from_increasing(|p| success(c, p, problem), d3 / c.bp_energy, p_max)
            };
            (c3, energy_cap(c.migration_up_bits, d1), energy_cap(c.upload_bits, d2), c6)
        }
        BoundForm::Printed => {
            let c3 = log_form_bound((c.omega1 - g3) / (c.omega1 * c.e0));
            let w = c.bp_energy;
            let c6 = log_form_bound((w * c.k as f64 - d3) / (c.e0 * w));
            (
                c3,
                taylor_energy_bound(c.migration_up_bits, d1, c, cfg),
                taylor_energy_bound(c.upload_bits, d2, c, cfg),
                c6,
            )
        }
    };
    let lo = c1.max(c2).max(MIN_POWER_W);
    let hi = [p_max, c3, c4, c5, c6].into_iter().fold(f64::INFINITY, f64::min);
    ClientBounds {
        c: [c1, c2, c3, c4, c5, c6],
        lo,
        hi,
    }
}

/// Which case of the closed form produced a client's power.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PowerBranch {
    /// Critical point below the interval: the lower end.
    C1,
    /// Critical point inside the interval.
    C2,
    /// The upper end.
    Otherwise,
    /// Empty interval; chosen by the grid fallback.
    Fallback,
    /// No RBs this round; power carried over untouched.
    Idle,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedForm {
    pub p: f64,
    pub branch: PowerBranch,
    /// `1 / ln(-w3 / (2 w2))` when defined and positive.
    pub critical: Option<f64>,
    /// `w2 = 0` or `-w3 / (2 w2) <= 1`: the critical point is undefined.
    pub degenerate: bool,
}

/// The closed-form minimizer on `[lo, hi]`.
pub fn closed_form_power(lo: f64, hi: f64, omega2: f64, omega3: f64) -> ClosedForm {
    let otherwise = |degenerate| ClosedForm {
        p: hi,
        branch: PowerBranch::Otherwise,
        critical: None,
        degenerate,
    };
    if omega3 >= 0.0 {
        return otherwise(!(omega2 > 0.0));
    }
    if !(omega2 > 0.0) {
        return otherwise(true);
    }
    let x = -omega3 / (2.0 * omega2);
    if !(x > 1.0) {
        return otherwise(true);
    }
    let pc = 1.0 / x.ln();
    let (p, branch) = if pc < lo {
        (lo, PowerBranch::C1)
    } else if pc <= hi {
        (pc, PowerBranch::C2)
    } else {
        (hi, PowerBranch::Otherwise)
    };
    ClosedForm {
        p,
        branch,
        critical: Some(pc),
        degenerate: false,
    }
}

/// `w2 e^{2/p} + w3 e^{1/p}`, the objective as the closed form sees it.
pub fn surrogate_objective(p: f64, omega2: f64, omega3: f64) -> f64 {
    let x = (1.0 / p).exp();
    x * (omega2 * x + omega3)
}

fn grid(lo: f64, hi: f64, points: usize) -> impl Iterator<Item = f64> {
    let step = if points > 1 { (hi - lo) / (points - 1) as f64 } else { 0.0 };
    (0..points).map(move |i| if i + 1 == points { hi } else { lo + step * i as f64 })
}

/// Argmin of `f` over an evenly spaced grid; the first point wins ties.
fn grid_argmin(f: impl Fn(f64) -> f64, lo: f64, hi: f64, points: usize) -> (usize, f64, f64) {
    let mut best = (0, lo, f64::INFINITY);
    for (i, p) in grid(lo, hi, points).enumerate() {
        let v = f(p);
        if v < best.2 || (i == 0 && !v.is_nan()) {
            best = (i, p, v);
        }
    }
    best
}

/// `(sign, ln |x|)` of `x`, with sign `0` for zero.
fn signed_log(x: f64) -> (f64, f64) {
    if x == 0.0 {
        (0.0, f64::NEG_INFINITY)
    } else {
        (x.signum(), x.abs().ln())
    }
}

fn signed_log_sum(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    if a.0 == 0.0 {
        return b;
    }
    if b.0 == 0.0 {
        return a;
    }
    let (big, small) = if a.1 >= b.1 { (a, b) } else { (b, a) };
    let d = small.1 - big.1;
    if big.0 == small.0 {
        (big.0, big.1 + d.exp().ln_1p())
    } else if d == 0.0 {
        (0.0, f64::NEG_INFINITY)
    } else {
        (big.0, big.1 + (-d.exp()).ln_1p())
    }
}

/// `sign(f) ln(1 + |f|)` for the surrogate `f`, an order-preserving key
/// computed in log space so that `e^{2/p}` overflowing at small `p` does
/// not flatten the comparison.
fn surrogate_key(p: f64, omega2: f64, omega3: f64) -> f64 {
    let u = 1.0 / p;
    let (w2s, w2l) = signed_log(omega2);
    let (s, l) = signed_log_sum((w2s, w2l + u), signed_log(omega3));
    if s == 0.0 {
        return 0.0;
    }
    let l = l + u;
    let softplus = if l > 0.0 { l + (-l).exp().ln_1p() } else { l.exp().ln_1p() };
    s * softplus
}

/// Grid minimizer of [`surrogate_objective`] over `[lo, hi]`.
pub fn surrogate_grid_oracle(lo: f64, hi: f64, omega2: f64, omega3: f64, points: usize) -> f64 {
    grid_argmin(|p| surrogate_key(p, omega2, omega3), lo, hi, points).1
}

/// Client `n`'s objective contribution at power `p`.
pub fn client_objective_at(problem: &PowerProblem, n: usize, p: f64) -> f64 {
    let c = constants(problem, n);
    let s = if c.k == 0 { 1.0 } else { 1.0 - success(&c, p, problem) };
    problem.inputs.client_objective(n, s, problem.mode)
}

/// Minimizes client `n`'s exact objective over `[lo, hi]`: a dense grid,
/// then golden-section refinement between the neighbours of the best point.
/// A flat objective returns `lo`.
pub fn grid_oracle(problem: &PowerProblem, n: usize, lo: f64, hi: f64, resolution: usize) -> f64 {
    let points = resolution.max(2);
    let f = |p: f64| client_objective_at(problem, n, p);
    let (_, p, v) = grid_argmin(f, lo, hi, points);
    let step = (hi - lo) / (points - 1) as f64;
    if step <= 0.0 {
        return p;
    }
    let (mut a, mut b) = ((p - step).max(lo), (p + step).min(hi));
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let (mut x1, mut x2) = (b - r * (b - a), a + r * (b - a));
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..60 {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = f(x2);
        }
    }
    let (xr, fr) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    if fr < v {
        xr
    } else {
        p
    }
}

/// Per-client outcome of the last power iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientPowerReport {
    pub bounds: Option<ClientBounds>,
    pub omega: Option<OmegaCoefficients>,
    pub branch: PowerBranch,
    pub critical: Option<f64>,
    pub degenerate: bool,
    /// The true migration or upload energy exceeds its budget at the
    /// returned power (possible when the low-SNR bounds are in use).
    pub energy_check_failed: bool,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerSolution {
    pub powers: Vec<f64>,
    pub aux: AuxBudgets,
    pub iterations: usize,
    pub converged: bool,
    pub g_obj: f64,
    pub clients: Vec<ClientPowerReport>,
}

impl PowerSolution {
    pub fn any_fallback(&self) -> bool {
        self.clients.iter().any(|c| c.branch == PowerBranch::Fallback)
    }
}

/// Grid points used when an interval is empty.
pub const FALLBACK_RESOLUTION: usize = 400;

/// The objective at a power vector.
pub fn objective_at(problem: &PowerProblem, powers: &[f64]) -> f64 {
    let s: Vec<f64> = (0..powers.len())
        .map(|n| {
            let c = constants(problem, n);
            if c.k == 0 {
                1.0
            } else {
                1.0 - success(&c, powers[n], problem)
            }
        })
        .collect();
    g_obj(problem.inputs, &s, problem.mode)
}

/// Empty interval: pick the power that least violates this client's own
/// round budgets (relative), then minimizes its objective.
fn fallback_power(problem: &PowerProblem, n: usize, other_load: f64) -> f64 {
    let ctx = &problem.ctx;
    let cfg = ctx.cfg;
    let server = cost::server_seconds_per_sample(ctx, problem.cut) * other_load;
    let key = |p: f64| {
        let t = client_terms(ctx, n, problem.counts[n], p, problem.cut, problem.prev_cut);
        let delay = t.t_migrate + t.stage2() + server + cost::server_seconds_per_sample(ctx, problem.cut) * t.server_load + t.stage3_own();
        let v = ((delay - cfg.delay_budget_s) / cfg.delay_budget_s)
            .max((t.energy() - cfg.energy_budget_j) / cfg.energy_budget_j)
            .max(0.0);
        (v, problem.inputs.client_objective(n, t.s, problem.mode))
    };
    let mut best = (MIN_POWER_W, (f64::INFINITY, f64::INFINITY));
    for p in grid(MIN_POWER_W, cfg.max_tx_power_w, FALLBACK_RESOLUTION) {
        let k = key(p);
        if k.0 < best.1 .0 || (k.0 == best.1 .0 && k.1 < best.1 .1) {
            best = (p, k);
        }
    }
    best.0
}

/// Realized budgets: per-stage delay and per-component energy maxima over
/// clients holding RBs.
pub fn refresh_budgets(problem: &PowerProblem, powers: &[f64]) -> AuxBudgets {
    let ctx = &problem.ctx;
    let terms: Vec<_> = (0..powers.len())
        .map(|n| client_terms(ctx, n, problem.counts[n], powers[n], problem.cut, problem.prev_cut))
        .collect();
    let server = cost::server_seconds_per_sample(ctx, problem.cut);
    let load: f64 = terms.iter().map(|t| t.server_load).sum();
    let mut aux = AuxBudgets {
        gamma: [0.0; 3],
        delta: [0.0; 3],
    };
    for t in terms.iter().filter(|t| t.participating) {
        let stage3 = match ctx.cfg.power_bounds {
            BoundForm::Exact => server * load + t.stage3_own(),
            BoundForm::Printed => server * t.server_load + t.stage3_own(),
        };
        let g = [t.t_migrate, t.stage2(), stage3];
        let d = [t.e_ms, t.e_up, t.e_cbp];
        for j in 0..3 {
            aux.gamma[j] = aux.gamma[j].max(g[j]);
            aux.delta[j] = aux.delta[j].max(d[j]);
        }
    }
    aux
}

/// Largest forward-pass energy among clients holding RBs.
pub fn max_fp_energy(problem: &PowerProblem) -> f64 {
    (0..problem.counts.len())
        .filter(|&n| problem.counts[n] > 0)
        .map(|n| constants(problem, n).e_fp)
        .fold(0.0, f64::max)
}

/// One pass of the per-client update at fixed budgets.
fn update_powers(problem: &PowerProblem, powers: &[f64], aux: &AuxBudgets, exec: Exec) -> Vec<ClientPowerReport> {
    let ctx = &problem.ctx;
    let loads: Vec<f64> = (0..powers.len())
        .map(|n| client_terms(ctx, n, problem.counts[n], powers[n], problem.cut, problem.prev_cut).server_load)
        .collect();
    let total_load: f64 = loads.iter().sum();
    par::map_range(exec, powers.len(), |n| {
        let idle = ClientPowerReport {
            bounds: None,
            omega: None,
            branch: PowerBranch::Idle,
            critical: None,
            degenerate: false,
            energy_check_failed: false,
            p: powers[n],
        };
        if problem.counts[n] == 0 {
            return idle;
        }
        let c = constants(problem, n);
        let other = total_load - loads[n];
        let bounds = bounds_from_constants(problem, &c, aux, other);
        let omega = omega_coefficients(problem, n);
        let (p, branch, critical, degenerate) = if bounds.empty() {
            (fallback_power(problem, n, other), PowerBranch::Fallback, None, false)
        } else {
            let cf = closed_form_power(bounds.lo, bounds.hi, omega.omega2, omega.omega3);
            (cf.p, cf.branch, cf.critical, cf.degenerate)
        };
        let t = client_terms(ctx, n, c.k, p, problem.cut, problem.prev_cut);
        let slack = 1.0 + 1e-9;
        let energy_check_failed = t.e_ms > aux.delta[0] * slack || t.e_up > aux.delta[1] * slack;
        ClientPowerReport {
            bounds: Some(bounds),
            omega: Some(omega),
            branch,
            critical,
            degenerate,
            energy_check_failed,
            p,
        }
    })
}

/// Alternates the closed-form power update and the budget refresh until
/// the objective moves by at most `tol` or `max_iters` passes have run.
/// Clients without RBs keep their incoming power.
pub fn iterate_power(
    problem: &PowerProblem,
    init_powers: &[f64],
    init_aux: AuxBudgets,
    tol: f64,
    max_iters: usize,
    exec: Exec,
) -> PowerSolution {
    let p_max = problem.ctx.cfg.max_tx_power_w;
    let mut powers: Vec<f64> = init_powers
        .iter()
        .zip(problem.counts)
        .map(|(&p, &k)| if k > 0 { p.clamp(MIN_POWER_W, p_max) } else { p })
        .collect();
    let mut aux = init_aux;
    let mut g_prev = objective_at(problem, &powers);
    let mut iterations = 0;
    loop {
        iterations += 1;
        let reports = update_powers(problem, &powers, &aux, exec);
        powers = reports.iter().map(|r| r.p).collect();
        aux = refresh_budgets(problem, &powers);
        let g = objective_at(problem, &powers);
        let converged = (g - g_prev).abs() <= tol;
        if converged || iterations >= max_iters.max(1) {
            return PowerSolution {
                powers,
                aux,
                iterations,
                converged,
                g_obj: g,
                clients: reports,
            };
        }
        g_prev = g;
    }
}
