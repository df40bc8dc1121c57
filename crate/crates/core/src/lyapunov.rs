//! Virtual queues, drift-plus-penalty, the split subproblem, and the
//! stability checks derived from bounded constraint values.

use serde::{Deserialize, Serialize};

use crate::cost::SplitDecision;
use crate::error::{Error, Result};
use crate::par::{self, Exec};
use crate::scenario::ScenarioConfig;

/// Multiplier applied to the observed delay and energy maxima before they
/// are used as the bounds `T_max` and `E_max`.
pub const BOUND_SAFETY_FACTOR: f64 = 1.05;

/// Queue vector `Q = (Q_0, Q_1..Q_N)`: index 0 tracks delay, the rest
/// per-client energy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VirtualQueueState {
    pub queues: Vec<f64>,
    pub mu: f64,
    pub v: f64,
    /// Per-round `(g_0, g_1..g_N)` of the applied decisions.
    pub g_history: Vec<Vec<f64>>,
    /// Queue vector at the start of each recorded round.
    pub queue_history: Vec<Vec<f64>>,
    /// Largest expected delay and per-client energy among all evaluated candidates.
    pub t_seen: f64,
    pub e_seen: f64,
}

impl VirtualQueueState {
    pub fn new(n_clients: usize, mu: f64, v: f64) -> Self {
        VirtualQueueState {
            queues: vec![0.0; n_clients + 1],
            mu,
            v,
            g_history: Vec::new(),
            queue_history: Vec::new(),
            t_seen: 0.0,
            e_seen: 0.0,
        }
    }

    /// Widens the running maxima with a candidate's expected delay and energies.
    pub fn observe(&mut self, delay: f64, energies: &[f64]) {
        if delay.is_finite() {
            self.t_seen = self.t_seen.max(delay);
        }
        for &e in energies.iter().filter(|e| e.is_finite()) {
            self.e_seen = self.e_seen.max(e);
        }
    }

    /// Applies the decisions' constraint values: records history and updates `Q`.
    pub fn advance(&mut self, g: &[f64]) {
        self.queue_history.push(self.queues.clone());
        self.g_history.push(g.to_vec());
        self.queues = queue_update(self, g);
    }
}

/// `Q'_n = max(mu Q_n + (1 - mu) g_n, 0)`.
pub fn queue_update(state: &VirtualQueueState, g: &[f64]) -> Vec<f64> {
    state
        .queues
        .iter()
        .zip(g)
        .map(|(&q, &g)| (state.mu * q + (1.0 - state.mu) * g).max(0.0))
        .collect()
}

/// `1/2 (||Q'||^2 - ||Q||^2) + V g_obj` for a candidate's `g` vector.
pub fn drift_plus_penalty(state: &VirtualQueueState, g: &[f64], g_obj: f64) -> f64 {
    let next = queue_update(state, g);
    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    0.5 * (sq(&next) - sq(&state.queues)) + state.v * g_obj
}

/// One cut's evaluation for the split subproblem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitCandidate {
    pub cut: usize,
    /// `(g_0, g_1..g_N)`.
    pub g: Vec<f64>,
    pub g_obj: f64,
    pub dpp: f64,
}

/// Exhaustive search over allowed cuts. `eval` returns `(g, g_obj)` for a
/// cut or `None` if the cut is infeasible under the fixed RBs and powers.
/// Ties go to the smallest cut.
pub fn solve_split<F>(
    state: &VirtualQueueState,
    allowed: &[bool],
    eval: F,
    exec: Exec,
) -> Result<(SplitDecision, Vec<SplitCandidate>)>
where
    F: Fn(usize) -> Option<(Vec<f64>, f64)> + Sync + Send,
{
    let cuts: Vec<usize> = (1..allowed.len()).filter(|&c| allowed[c]).collect();
    let evaluated = par::map_slice(exec, &cuts, |&cut| {
        eval(cut).map(|(g, g_obj)| SplitCandidate {
            cut,
            dpp: drift_plus_penalty(state, &g, g_obj),
            g,
            g_obj,
        })
    });
    let candidates: Vec<SplitCandidate> = evaluated.into_iter().flatten().collect();
    let best = candidates
        .iter()
        .filter(|c| c.dpp.is_finite())
        .fold(None::<&SplitCandidate>, |best, c| match best {
            Some(b) if b.dpp <= c.dpp => Some(b),
            _ => Some(c),
        })
        .ok_or_else(|| Error::Infeasible("every allowed cut is infeasible".into()))?;
    let decision = SplitDecision::new(best.cut, allowed.to_vec())?;
    Ok((decision, candidates))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeAverageBound {
    pub bound_delay: f64,
    pub bound_energy: f64,
    pub avg_g0: f64,
    /// Largest per-client time average of `g_n`.
    pub max_avg_gn: f64,
    pub holds: bool,
}

/// Bound checks for a finished run. `t_max` and `e_max` are empirical
/// estimates: the largest values seen among all evaluated candidates,
/// times [`BOUND_SAFETY_FACTOR`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub rounds: usize,
    pub t_max: f64,
    pub e_max: f64,
    pub g1: f64,
    pub g2: f64,
    pub max_q0: f64,
    pub max_qn: f64,
    /// Rounds where some queue exceeded its bound.
    pub queue_bound_violations: usize,
    pub queue_bounds_hold: bool,
    pub time_average: Option<TimeAverageBound>,
    pub time_average_skipped: Option<String>,
    /// `W`; the gap bound is `(W + C) / V` with `C` not observable.
    pub w_constant: f64,
}

/// `G1 = max(gamma^2, (T_max - gamma)^2)`, `G2` likewise with `delta`, `E_max`.
pub fn constraint_square_bounds(cfg: &ScenarioConfig, t_max: f64, e_max: f64) -> (f64, f64) {
    let g = cfg.delay_budget_s;
    let d = cfg.energy_budget_j;
    ((g * g).max((t_max - g).powi(2)), (d * d).max((e_max - d).powi(2)))
}

pub fn stability_check(state: &VirtualQueueState, cfg: &ScenarioConfig) -> StabilityReport {
    let rounds = state.g_history.len();
    let n = state.queues.len() - 1;
    let t_max = state.t_seen * BOUND_SAFETY_FACTOR;
    let e_max = state.e_seen * BOUND_SAFETY_FACTOR;
    let (g1, g2) = constraint_square_bounds(cfg, t_max, e_max);
    let (b1, b2) = (g1.sqrt(), g2.sqrt());

    // Every queue vector the run produced, including the final one.
    let all_q = state.queue_history.iter().chain(std::iter::once(&state.queues));
    let mut violations = 0;
    let (mut max_q0, mut max_qn) = (0.0f64, 0.0f64);
    for q in all_q {
        max_q0 = max_q0.max(q[0]);
        let qn = q[1..].iter().copied().fold(0.0, f64::max);
        max_qn = max_qn.max(qn);
        if q[0] > b1 || qn > b2 {
            violations += 1;
        }
    }

    let mu = state.mu;
    let (time_average, skipped) = if rounds == 0 {
        (None, Some("no rounds recorded".to_string()))
    } else if mu >= 1.0 {
        (None, Some("mu = 1 makes the time-average bound undefined".to_string()))
    } else {
        let r = rounds as f64;
        let factor = 1.0 + 1.0 / ((1.0 - mu) * r);
        let avg = |i: usize| state.g_history.iter().map(|g| g[i]).sum::<f64>() / r;
        let avg_g0 = avg(0);
        let max_avg_gn = (1..=n).map(avg).fold(f64::NEG_INFINITY, f64::max);
        let bound_delay = factor * b1;
        let bound_energy = factor * b2;
        (
            Some(TimeAverageBound {
                bound_delay,
                bound_energy,
                avg_g0,
                max_avg_gn,
                holds: avg_g0 <= bound_delay && max_avg_gn <= bound_energy,
            }),
            None,
        )
    };

    let gamma = cfg.delay_budget_s;
    let delta = cfg.energy_budget_j;
    let w_constant = 0.5 * (1.0 - mu).powi(2) * (g1 + n as f64 * g2)
        + mu * (1.0 - mu) * (b1 * (t_max - gamma) + b2 * (e_max - delta) * n as f64);

    StabilityReport {
        rounds,
        t_max,
        e_max,
        g1,
        g2,
        max_q0,
        max_qn,
        queue_bound_violations: violations,
        queue_bounds_hold: violations == 0,
        time_average,
        time_average_skipped: skipped,
        w_constant,
    }
}
