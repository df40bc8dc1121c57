//! Resource-block allocation for fixed cut and powers.
//!
//! All RBs have the same bandwidth, so every cost and objective term depends
//! on the allocation matrix only through each client's RB count. The solver
//! therefore enumerates count vectors `(k_1..k_N)` with `sum k <= K` instead
//! of binary matrices, using per-`(client, k)` tables so a candidate costs
//! `O(N)` to score. A naive matrix enumeration is kept as an oracle.

use serde::{Deserialize, Serialize};

use crate::cost::{self, client_terms, ClientTerms, CostContext, RoundDecisions};
use crate::objective::{g_obj, ObjectiveInputs};
use crate::par::{self, Exec};
use crate::scenario::ObjectiveMode;

/// RB counts per client. Expands to a canonical matrix with
/// [`expand_to_matrix`].
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RbAssignment {
    pub counts: Vec<usize>,
}

impl RbAssignment {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Canonical `N x K` matrix: client 1 takes the first `k_1` RBs, client 2
/// the next `k_2`, and so on.
pub fn expand_to_matrix(assign: &RbAssignment, n_rbs: usize) -> Vec<Vec<u8>> {
    let mut next = 0;
    assign
        .counts
        .iter()
        .map(|&k| {
            let mut row = vec![0u8; n_rbs];
            for cell in row.iter_mut().skip(next).take(k) {
                *cell = 1;
            }
            next += k;
            row
        })
        .collect()
}

/// Row sums of an allocation matrix.
pub fn matrix_counts(u: &[Vec<u8>]) -> Vec<usize> {
    u.iter().map(|row| row.iter().map(|&x| x as usize).sum()).collect()
}

/// The fixed blocks of the RB subproblem.
#[derive(Clone, Copy, Debug)]
pub struct RbProblem<'a> {
    pub ctx: CostContext<'a>,
    pub inputs: &'a ObjectiveInputs,
    pub cut: usize,
    pub prev_cut: usize,
    pub powers: &'a [f64],
    pub mode: ObjectiveMode,
}

/// Score of a count vector: the largest relative constraint excess
/// (`0` when feasible) and the objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RbScore {
    pub violation: f64,
    pub g_obj: f64,
}

impl RbScore {
    pub fn feasible(&self) -> bool {
        self.violation <= 0.0
    }

    /// Strict order: violation first, then objective. NaN never wins.
    fn better_than(&self, other: &RbScore) -> bool {
        if self.violation != other.violation {
            return self.violation < other.violation;
        }
        self.g_obj < other.g_obj
    }
}

fn relative_violation(t: f64, energies: impl Iterator<Item = f64>, gamma: f64, delta: f64) -> f64 {
    let mut v = ((t - gamma) / gamma).max(0.0);
    for e in energies {
        v = v.max((e - delta) / delta);
    }
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// Scores a candidate through the reference cost path.
pub fn score_reference(problem: &RbProblem, counts: &[usize]) -> RbScore {
    let cfg = problem.ctx.cfg;
    let dec = RoundDecisions {
        cut: problem.cut,
        prev_cut: problem.prev_cut,
        rb_counts: counts.to_vec(),
        tx_powers: problem.powers.to_vec(),
    };
    match cost::round_costs(&dec, &problem.ctx) {
        Ok(c) => RbScore {
            violation: relative_violation(
                c.t_total_expected_s,
                c.e_total_expected_j.iter().copied(),
                cfg.delay_budget_s,
                cfg.energy_budget_j,
            ),
            g_obj: g_obj(problem.inputs, &c.s, problem.mode),
        },
        Err(_) => RbScore {
            violation: f64::INFINITY,
            g_obj: f64::INFINITY,
        },
    }
}

/// Per-`(client, k)` tables, `k = 0..=K`.
struct Tables {
    terms: Vec<Vec<ClientTerms>>,
    objective: Vec<Vec<f64>>,
    server_per_sample: f64,
    gamma: f64,
    delta: f64,
    n: usize,
}

impl Tables {
    fn build(problem: &RbProblem) -> Self {
        let cfg = problem.ctx.cfg;
        let n = cfg.n_clients;
        let k_max = cfg.n_rbs;
        let terms: Vec<Vec<ClientTerms>> = (0..n)
            .map(|i| {
                (0..=k_max)
                    .map(|k| client_terms(&problem.ctx, i, k, problem.powers[i], problem.cut, problem.prev_cut))
                    .collect()
            })
            .collect();
        let objective = terms
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .map(|t| problem.inputs.client_objective(i, t.s, problem.mode))
                    .collect()
            })
            .collect();
        Tables {
            terms,
            objective,
            server_per_sample: cost::server_seconds_per_sample(&problem.ctx, problem.cut),
            gamma: cfg.delay_budget_s,
            delta: cfg.energy_budget_j,
            n,
        }
    }

    /// Mirrors `cost::combine` and `objective::g_obj` operation for operation
    /// so scores agree bit for bit with [`score_reference`].
    fn score(&self, counts: &[usize]) -> RbScore {
        let (mut t1, mut t2, mut own3) = (0.0f64, 0.0f64, 0.0f64);
        let mut load = 0.0;
        let mut any = false;
        let mut obj = 0.0;
        for (i, &k) in counts.iter().enumerate() {
            let t = &self.terms[i][k];
            if t.participating {
                any = true;
                t1 = t1.max(t.t_migrate);
                t2 = t2.max(t.stage2());
                own3 = own3.max(t.stage3_own());
            }
            load += t.server_load;
            obj += self.objective[i][k];
        }
        let t3 = if any { self.server_per_sample * load + own3 } else { 0.0 };
        let total = t1 + t2 + t3;
        let energies = counts.iter().enumerate().map(|(i, &k)| self.terms[i][k].energy());
        let violation = if total.is_finite() {
            relative_violation(total, energies, self.gamma, self.delta)
        } else {
            f64::INFINITY
        };
        RbScore {
            violation,
            g_obj: if violation.is_infinite() { f64::INFINITY } else { obj / self.n as f64 },
        }
    }
}

/// How the answer was found.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RbMethod {
    Exact,
    Greedy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RbCandidate {
    pub counts: Vec<usize>,
    pub score: RbScore,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RbSolution {
    pub assignment: RbAssignment,
    pub score: RbScore,
    /// No candidate met both constraints; the answer minimizes the violation.
    pub infeasible: bool,
    pub method: RbMethod,
    pub evaluated: u64,
    /// Best candidates in solver order, at most [`TOP_CANDIDATES`].
    pub top: Vec<RbCandidate>,
}

pub const TOP_CANDIDATES: usize = 5;

/// `C(K + N, N)`, saturating.
pub fn count_space_size(n: usize, k: usize) -> u64 {
    let mut c: u128 = 1;
    for i in 1..=n as u128 {
        c = c * (k as u128 + i) / i;
        if c > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    c as u64
}

/// Running best-`TOP_CANDIDATES` list. Insertion keeps earlier candidates
/// ahead of later ones with equal scores, so the head is the
/// lexicographically smallest minimizer when candidates arrive in
/// lexicographic order.
#[derive(Default)]
struct Top {
    items: Vec<RbCandidate>,
    evaluated: u64,
}

impl Top {
    fn offer(&mut self, counts: &[usize], score: RbScore) {
        self.evaluated += 1;
        self.insert(counts, score);
    }

    fn insert(&mut self, counts: &[usize], score: RbScore) {
        if self.items.len() == TOP_CANDIDATES && !score.better_than(&self.items[TOP_CANDIDATES - 1].score) {
            return;
        }
        let pos = self
            .items
            .iter()
            .position(|c| score.better_than(&c.score))
            .unwrap_or(self.items.len());
        self.items.insert(
            pos,
            RbCandidate {
                counts: counts.to_vec(),
                score,
            },
        );
        self.items.truncate(TOP_CANDIDATES);
    }

    fn merge(mut self, later: Top) -> Top {
        self.evaluated += later.evaluated;
        for c in later.items {
            self.insert(&c.counts, c.score);
        }
        self
    }
}

fn enumerate_tail(tables: &Tables, counts: &mut Vec<usize>, remaining: usize, top: &mut Top) {
    if counts.len() == tables.n {
        let s = tables.score(counts);
        top.offer(counts, s);
        return;
    }
    for k in 0..=remaining {
        counts.push(k);
        enumerate_tail(tables, counts, remaining - k, top);
        counts.pop();
    }
}

fn solve_exact(tables: &Tables, k_max: usize, exec: Exec) -> Top {
    if tables.n == 0 {
        let mut top = Top::default();
        top.offer(&[], tables.score(&[]));
        return top;
    }
    let parts = par::map_range(exec, k_max + 1, |k1| {
        let mut top = Top::default();
        let mut counts = vec![k1];
        enumerate_tail(tables, &mut counts, k_max - k1, &mut top);
        top
    });
    parts.into_iter().reduce(Top::merge).unwrap_or_default()
}

/// Adds one RB at a time to whichever client improves the score most, from
/// the all-zero vector, until no single addition helps.
fn solve_greedy(tables: &Tables, k_max: usize) -> Top {
    let mut counts = vec![0; tables.n];
    let mut top = Top::default();
    let mut current = tables.score(&counts);
    top.offer(&counts, current);
    for _ in 0..k_max {
        let mut best: Option<(usize, RbScore)> = None;
        for i in 0..tables.n {
            counts[i] += 1;
            let s = tables.score(&counts);
            top.offer(&counts, s);
            counts[i] -= 1;
            if best.is_none_or(|(_, b)| s.better_than(&b)) {
                best = Some((i, s));
            }
        }
        match best {
            Some((i, s)) if s.better_than(&current) => {
                counts[i] += 1;
                current = s;
            }
            _ => break,
        }
    }
    // The walk's end point is the answer even if a probe elsewhere tied it.
    let pos = top.items.iter().position(|c| c.counts == counts);
    if let Some(pos) = pos {
        let c = top.items.remove(pos);
        top.items.insert(0, c);
    } else {
        top.items.insert(0, RbCandidate { counts, score: current });
        top.items.truncate(TOP_CANDIDATES);
    }
    top
}

/// Solves the RB subproblem: minimize the objective subject to the round's
/// expected delay and per-client energy budgets. Exact when the count space
/// fits `rb_exact_budget`, greedy otherwise. If nothing is feasible the
/// least-violating vector is returned and flagged.
pub fn solve_rb(problem: &RbProblem, exec: Exec) -> RbSolution {
    let cfg = problem.ctx.cfg;
    let tables = Tables::build(problem);
    let space = count_space_size(cfg.n_clients, cfg.n_rbs);
    let (top, method) = if space <= cfg.rb_exact_budget {
        (solve_exact(&tables, cfg.n_rbs, exec), RbMethod::Exact)
    } else {
        (solve_greedy(&tables, cfg.n_rbs), RbMethod::Greedy)
    };
    let best = top.items[0].clone();
    RbSolution {
        infeasible: !best.score.feasible(),
        assignment: RbAssignment { counts: best.counts },
        score: best.score,
        method,
        evaluated: top.evaluated,
        top: top.items,
    }
}

/// Every `N x K` binary matrix with at most one client per RB, scored
/// through the reference cost path. Only for tiny instances.
pub fn naive_matrix_oracle(problem: &RbProblem) -> RbSolution {
    let cfg = problem.ctx.cfg;
    let (n, k) = (cfg.n_clients, cfg.n_rbs);
    // Each RB goes to one of N clients or to nobody (digit N).
    let total = (n as u64 + 1).pow(k as u32);
    let mut best: Option<(Vec<usize>, RbScore)> = None;
    let mut owner = vec![n; k];
    for code in 0..total {
        let mut c = code;
        for slot in owner.iter_mut() {
            *slot = (c % (n as u64 + 1)) as usize;
            c /= n as u64 + 1;
        }
        let u: Vec<Vec<u8>> = (0..n)
            .map(|i| owner.iter().map(|&o| u8::from(o == i)).collect())
            .collect();
        let counts = matrix_counts(&u);
        let s = score_reference(problem, &counts);
        let wins = match &best {
            None => true,
            Some((bc, bs)) => s.better_than(bs) || (!bs.better_than(&s) && counts < *bc),
        };
        if wins {
            best = Some((counts, s));
        }
    }
    let (counts, score) = best.expect("at least the empty matrix");
    RbSolution {
        infeasible: !score.feasible(),
        assignment: RbAssignment { counts: counts.clone() },
        score,
        method: RbMethod::Exact,
        evaluated: total,
        top: vec![RbCandidate { counts, score }],
    }
}
