//! The per-round discrepancy objective and the constraint functionals.
//!
//! For a cut `l` the objective is
//! `(1/N) sum_n [ (1/iota) ||w~_avg - w~_n||^2 + S_n ]`, where the first term
//! is the sampled client-side drift and `S_n` the server-side deviation,
//! either `(1 - s_n)^2 ||w_bar||^2` (verbatim) or
//! `||w_bar - (1 - s_n) w_n||^2` (consistent). Only `s_n` depends on RBs
//! and power, so each round precomputes the weight-dependent scalars once per
//! candidate cut.

use serde::{Deserialize, Serialize};

use crate::cost::RoundCosts;
use crate::learner::{sample_discrepancy_probe, Layer, SplitModel};
use crate::scenario::{ObjectiveMode, ScenarioConfig};

/// Weight-dependent scalars for one cut.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveInputs {
    pub cut: usize,
    pub iota: f64,
    /// `(1/iota) ||w~_avg - w~_n||^2` per client.
    pub client_terms: Vec<f64>,
    /// `||w_bar||^2` over the server-side layers.
    pub server_norm_sq: f64,
    /// `<w_bar, w_n>` per client.
    pub server_inner: Vec<f64>,
    /// `||w_n||^2` per client.
    pub server_copy_norm_sq: Vec<f64>,
}

fn dot(a: &[Layer], b: &[Layer]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.params().zip(y.params()).map(|(u, v)| u * v).sum::<f64>())
        .sum()
}

impl ObjectiveInputs {
    /// Builds the inputs for a cut from the model's current weights. Layers
    /// past `cut` are read from each client's stack whether or not they are
    /// currently on the server.
    pub fn from_model(model: &SplitModel, cut: usize, iota: f64, sampling_seed: u64, round: usize) -> Self {
        let probe = sample_discrepancy_probe(model, cut, iota, sampling_seed, round);
        let avg = model.server_average(cut);
        let n = model.n_clients();
        let copies: Vec<&[Layer]> = (0..n).map(|i| &model.client_model(i).layers[cut..]).collect();
        ObjectiveInputs {
            cut,
            iota,
            client_terms: probe.client_terms(iota),
            server_norm_sq: dot(&avg, &avg),
            server_inner: copies.iter().map(|c| dot(&avg, c)).collect(),
            server_copy_norm_sq: copies.iter().map(|c| dot(c, c)).collect(),
        }
    }

    pub fn n_clients(&self) -> usize {
        self.client_terms.len()
    }

    /// The server-side deviation `S_n` at packet-error rate `s`.
    pub fn server_term(&self, n: usize, s: f64, mode: ObjectiveMode) -> f64 {
        let ok = 1.0 - s;
        match mode {
            ObjectiveMode::Verbatim => ok * ok * self.server_norm_sq,
            ObjectiveMode::Consistent => (self.server_norm_sq - 2.0 * ok * self.server_inner[n]
                + ok * ok * self.server_copy_norm_sq[n])
                .max(0.0),
        }
    }

    /// Client `n`'s contribution before the `1/N` factor.
    pub fn client_objective(&self, n: usize, s: f64, mode: ObjectiveMode) -> f64 {
        self.client_terms[n] + self.server_term(n, s, mode)
    }
}

pub fn g_obj(inputs: &ObjectiveInputs, s: &[f64], mode: ObjectiveMode) -> f64 {
    let n = inputs.n_clients();
    (0..n).map(|i| inputs.client_objective(i, s[i], mode)).sum::<f64>() / n as f64
}

/// `(g_0, [g_1..g_N])`: expected delay minus its budget and each client's
/// expected energy minus its budget, for this round alone.
pub fn g_constraints(costs: &RoundCosts, cfg: &ScenarioConfig) -> (f64, Vec<f64>) {
    (
        costs.t_total_expected_s - cfg.delay_budget_s,
        costs
            .e_total_expected_j
            .iter()
            .map(|e| e - cfg.energy_budget_j)
            .collect(),
    )
}
