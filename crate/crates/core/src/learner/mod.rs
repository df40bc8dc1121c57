//! A toy split network trained through the three stages of a round.
//!
//! Each client owns a full stack of M layers. The first `cut` layers are its
//! client-side model; the rest are the server's copy of the server-side
//! model for that client. Moving the cut therefore relabels layers without
//! touching any weight, and the server-side aggregate is the (sample-size
//! weighted) mean of the server copies.

mod network;
mod snapshot;

pub use network::{Layer, Network};
pub use snapshot::{read_snapshot, write_snapshot, Snapshot, SNAPSHOT_MAGIC};

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::cost::RoundDecisions;
use crate::error::{Error, Result};
use crate::par::{self, Exec};
use crate::scenario::{stream, Dataset, Domain};

#[derive(Clone, Debug, PartialEq)]
pub struct SplitModel {
    widths: Vec<usize>,
    cut: usize,
    models: Vec<Network>,
}

impl SplitModel {
    /// Every client starts from the same initialization, drawn from the model seed.
    pub fn new(widths: &[usize], n_clients: usize, cut: usize, model_seed: u64) -> Result<Self> {
        let m = widths.len().saturating_sub(1);
        if !(1..=m).contains(&cut) {
            return Err(Error::invalid("cut", "[1, M]", cut));
        }
        let init = Network::init(widths, &mut stream(model_seed, Domain::ModelInit, 0));
        Ok(SplitModel {
            widths: widths.to_vec(),
            cut,
            models: vec![init; n_clients],
        })
    }

    pub fn cut(&self) -> usize {
        self.cut
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn n_clients(&self) -> usize {
        self.models.len()
    }

    /// Client `n`'s concatenated model (its client side plus its server copy).
    pub fn client_model(&self, n: usize) -> &Network {
        &self.models[n]
    }

    pub fn client_model_mut(&mut self, n: usize) -> &mut Network {
        &mut self.models[n]
    }

    pub fn client_side(&self, n: usize) -> &[Layer] {
        &self.models[n].layers[..self.cut]
    }

    pub fn server_side(&self, n: usize) -> &[Layer] {
        &self.models[n].layers[self.cut..]
    }

    /// Number of parameters in the first `cut` layers.
    pub fn client_param_count(&self, cut: usize) -> usize {
        self.models[0].layers[..cut].iter().map(Layer::n_params).sum()
    }

    /// Unweighted mean of the server copies of layers `cut..M` over all clients.
    pub fn server_average(&self, cut: usize) -> Vec<Layer> {
        let all: Vec<usize> = (0..self.n_clients()).collect();
        let w = vec![1.0; all.len()];
        self.weighted_layers(cut, &all, &w)
    }

    fn weighted_layers(&self, from: usize, who: &[usize], weights: &[f64]) -> Vec<Layer> {
        let total: f64 = weights.iter().sum();
        (from..self.n_layers())
            .map(|li| {
                let mut out = self.models[who[0]].layers[li].clone();
                let mut params: Vec<&Layer> = who.iter().map(|&n| &self.models[n].layers[li]).collect();
                let first = params.remove(0);
                for (pi, v) in out.params_mut().enumerate() {
                    let x0 = first.param(pi);
                    // Identical copies average to themselves exactly.
                    if params.iter().all(|l| l.param(pi) == x0) {
                        *v = x0;
                        continue;
                    }
                    let mut acc = weights[0] * x0;
                    for (l, w) in params.iter().zip(&weights[1..]) {
                        acc += w * l.param(pi);
                    }
                    *v = acc / total;
                }
                out
            })
            .collect()
    }
}

/// Moves the cut from `from` to `to`. Weights are untouched; only the
/// client/server labelling of layers between the two cuts changes.
pub fn migrate_cut(mut model: SplitModel, from: usize, to: usize) -> Result<SplitModel> {
    model.migrate(from, to)?;
    Ok(model)
}

impl SplitModel {
    /// In-place form of [`migrate_cut`].
    pub fn migrate(&mut self, from: usize, to: usize) -> Result<()> {
        let m = self.n_layers();
        if self.cut != from {
            return Err(Error::CutMismatch { model: self.cut, decision: from });
        }
        if !(1..=m).contains(&to) {
            return Err(Error::invalid("cut", "[1, M]", to));
        }
        self.cut = to;
        Ok(())
    }
}

/// A client's minibatch for one round.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub x: Vec<f64>,
    pub y: Vec<usize>,
}

/// Draws each client's minibatch for `round` from its partition, without
/// replacement (the whole partition if it is smaller than `batch_size`).
pub fn draw_batches(
    data: &Dataset,
    partition: &[Vec<usize>],
    batch_size: usize,
    data_seed: u64,
    round: usize,
) -> Vec<Batch> {
    partition
        .iter()
        .enumerate()
        .map(|(n, idx)| {
            let mut rng = stream(data_seed, Domain::Batches, ((round as u64) << 20) | n as u64);
            let take = batch_size.min(idx.len());
            let mut chosen: Vec<usize> = index::sample(&mut rng, idx.len(), take)
                .into_iter()
                .map(|i| idx[i])
                .collect();
            chosen.sort_unstable();
            Batch {
                x: chosen.iter().flat_map(|&i| data.row(i).iter().copied()).collect(),
                y: chosen.iter().map(|&i| data.labels[i]).collect(),
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub participation: Vec<bool>,
    /// Minibatch loss before the update, for clients whose packet arrived.
    pub losses: Vec<Option<f64>>,
    /// FNV-1a hash of each client's intermediate output bits (0 when skipped).
    pub checksums: Vec<u64>,
    /// False when nobody participated and aggregation was skipped.
    pub aggregated: bool,
}

/// Realizes packet losses: `beta_n = 1` iff the client has RBs and its
/// uniform draw falls below `1 - s_n`.
pub fn realize_participation(rb_counts: &[usize], s: &[f64], uniforms: &[f64]) -> Vec<bool> {
    rb_counts
        .iter()
        .zip(s)
        .zip(uniforms)
        .map(|((&k, &s), &u)| k > 0 && u < 1.0 - s)
        .collect()
}

fn fnv1a(values: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

/// Runs stages 2 and 3 for one round.
///
/// Clients whose packet arrives take one SGD step of rate `lr` on both
/// sides; everyone else is untouched. The server copies of the
/// participants are then averaged with weights `sample_counts` and the
/// average is written back to every client's server copy.
pub fn train_round(
    model: &mut SplitModel,
    dec: &RoundDecisions,
    participation: &[bool],
    batches: &[Batch],
    sample_counts: &[usize],
    lr: f64,
    exec: Exec,
) -> Result<RoundOutcome> {
    if model.cut != dec.cut {
        return Err(Error::CutMismatch { model: model.cut, decision: dec.cut });
    }
    let cut = model.cut;
    let updates = par::map_range(exec, model.n_clients(), |n| {
        if !participation[n] {
            return None;
        }
        let net = &model.models[n];
        let b = &batches[n];
        let (loss, grads) = net.loss_and_grad(&b.x, &b.y);
        let mut next = net.clone();
        next.sgd_step(&grads, lr);
        let mut z = b.x.clone();
        for layer in &net.layers[..cut] {
            z = layer.forward(&z, b.y.len());
        }
        Some((next, loss, fnv1a(&z)))
    });
    let mut losses = vec![None; updates.len()];
    let mut checksums = vec![0; updates.len()];
    for (n, u) in updates.into_iter().enumerate() {
        if let Some((next, loss, sum)) = u {
            model.models[n] = next;
            losses[n] = Some(loss);
            checksums[n] = sum;
        }
    }
    let who: Vec<usize> = (0..model.n_clients()).filter(|&n| participation[n]).collect();
    let aggregated = !who.is_empty();
    if aggregated {
        let weights: Vec<f64> = who.iter().map(|&n| sample_counts[n] as f64).collect();
        let avg = model.weighted_layers(cut, &who, &weights);
        for net in &mut model.models {
            net.layers[cut..].clone_from_slice(&avg);
        }
    }
    Ok(RoundOutcome {
        participation: participation.to_vec(),
        losses,
        checksums,
        aggregated,
    })
}

/// Sampled coordinates of every client's client-side parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub indices: Vec<usize>,
    pub samples: Vec<Vec<f64>>,
    pub average: Vec<f64>,
}

impl Probe {
    /// `(1/iota) ||w_avg - w_n||^2` for each client.
    pub fn client_terms(&self, iota: f64) -> Vec<f64> {
        self.samples
            .iter()
            .map(|s| s.iter().zip(&self.average).map(|(a, b)| (b - a) * (b - a)).sum::<f64>() / iota)
            .collect()
    }
}

/// Samples `ceil(iota * P_c)` client-side coordinates for a cut at `cut`,
/// the same set for every client, from the sampling stream of `round`.
pub fn sample_discrepancy_probe(model: &SplitModel, cut: usize, iota: f64, sampling_seed: u64, round: usize) -> Probe {
    let pc = model.client_param_count(cut);
    let take = ((iota * pc as f64).ceil() as usize).clamp(1, pc);
    let mut rng = stream(sampling_seed, Domain::Probe, ((round as u64) << 8) | cut as u64);
    let mut indices = index::sample(&mut rng, pc, take).into_vec();
    indices.sort_unstable();
    let samples: Vec<Vec<f64>> = (0..model.n_clients())
        .map(|n| {
            let flat: Vec<f64> = model.models[n].layers[..cut]
                .iter()
                .flat_map(|l| l.params().copied())
                .collect();
            indices.iter().map(|&i| flat[i]).collect()
        })
        .collect();
    let n = samples.len() as f64;
    let average = (0..take)
        .map(|j| {
            let x0 = samples[0][j];
            if samples.iter().all(|s| s[j] == x0) {
                x0
            } else {
                samples.iter().map(|s| s[j]).sum::<f64>() / n
            }
        })
        .collect();
    Probe {
        indices,
        samples,
        average,
    }
}

/// Mean over clients of each client's concatenated model accuracy on `x, y`.
pub fn mean_accuracy(model: &SplitModel, x: &[f64], y: &[usize], exec: Exec) -> f64 {
    let acc = par::map_range(exec, model.n_clients(), |n| model.client_model(n).accuracy(x, y));
    acc.iter().sum::<f64>() / acc.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::synthetic_dataset;

    const WIDTHS: [usize; 8] = [6, 5, 5, 5, 5, 5, 5, 3];

    fn setup(n: usize, cut: usize) -> (SplitModel, Vec<Batch>) {
        let model = SplitModel::new(&WIDTHS, n, cut, 3).unwrap();
        let data = synthetic_dataset(40 * n, 6, 3, 2.0, &mut stream(5, Domain::Dataset, 0));
        let parts: Vec<Vec<usize>> = (0..n).map(|c| (c * 40..(c + 1) * 40).collect()).collect();
        let batches = draw_batches(&data, &parts, 8, 1, 0);
        (model, batches)
    }

    fn dec(n: usize, cut: usize) -> RoundDecisions {
        RoundDecisions {
            cut,
            prev_cut: cut,
            rb_counts: vec![1; n],
            tx_powers: vec![1.0; n],
        }
    }

    #[test]
    fn migrate_identity_and_involution() {
        let (m, _) = setup(3, 4);
        let same = migrate_cut(m.clone(), 4, 4).unwrap();
        assert_eq!(same, m);
        let moved = migrate_cut(m.clone(), 4, 2).unwrap();
        assert_eq!(moved.client_side(0).len(), 2);
        assert_eq!(moved.server_side(0).len(), 5);
        assert_eq!(moved.server_side(0)[0], m.client_side(0)[2]);
        assert_eq!(moved.server_side(0)[1], m.client_side(0)[3]);
        let m2 = migrate_cut(m.clone(), 4, 2).unwrap();
        let back = migrate_cut(migrate_cut(m2.clone(), 2, 5).unwrap(), 5, 2).unwrap();
        assert_eq!(back, m2);
        assert!(migrate_cut(m, 3, 2).is_err());
    }

    #[test]
    fn full_loss_leaves_model_untouched() {
        let (mut m, b) = setup(3, 2);
        let before = m.clone();
        let part = realize_participation(&[1, 1, 1], &[1.0; 3], &[0.0, 0.5, 0.999]);
        let out = train_round(&mut m, &dec(3, 2), &part, &b, &[40; 3], 0.1, Exec::best()).unwrap();
        assert_eq!(m, before);
        assert!(!out.aggregated);
        assert!(out.participation.iter().all(|p| !p));
    }

    #[test]
    fn dropped_client_keeps_client_side() {
        let (mut m, b) = setup(3, 3);
        let before = m.clone();
        let part = vec![true, false, true];
        train_round(&mut m, &dec(3, 3), &part, &b, &[40; 3], 0.1, Exec::best()).unwrap();
        assert_eq!(m.client_side(1), before.client_side(1));
        assert_ne!(m.client_side(0), before.client_side(0));
        // Every server copy equals the aggregate afterwards.
        assert_eq!(m.server_side(0), m.server_side(1));
        assert_eq!(m.server_side(1), m.server_side(2));
    }

    #[test]
    fn aggregate_is_mean_of_two_steps() {
        let (mut m, b) = setup(2, 3);
        let mut solo: Vec<Network> = (0..2).map(|n| m.client_model(n).clone()).collect();
        for (n, net) in solo.iter_mut().enumerate() {
            let (_, g) = net.loss_and_grad(&b[n].x, &b[n].y);
            net.sgd_step(&g, 0.1);
        }
        train_round(&mut m, &dec(2, 3), &[true, true], &b, &[40, 40], 0.1, Exec::best()).unwrap();
        for li in 3..7 {
            let got = &m.server_side(0)[li - 3];
            for pi in 0..got.n_params() {
                let want = (solo[0].layers[li].param(pi) + solo[1].layers[li].param(pi)) / 2.0;
                assert!((got.param(pi) - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn split_invariance_single_client() {
        let (base, b) = setup(1, 1);
        let mut reference = base.client_model(0).clone();
        let (_, g) = reference.loss_and_grad(&b[0].x, &b[0].y);
        reference.sgd_step(&g, 0.05);
        for cut in 1..=7 {
            let mut m = migrate_cut(base.clone(), 1, cut).unwrap();
            train_round(&mut m, &dec(1, cut), &[true], &b, &[40], 0.05, Exec::Sequential).unwrap();
            assert_eq!(m.client_model(0), &reference, "cut {cut}");
        }
    }

    #[test]
    fn cut_mismatch_rejected() {
        let (mut m, b) = setup(1, 2);
        assert!(train_round(&mut m, &dec(1, 3), &[true], &b, &[40], 0.1, Exec::best()).is_err());
    }

    #[test]
    fn probe_properties() {
        let (m, _) = setup(3, 2);
        let pc = m.client_param_count(2);
        let full = sample_discrepancy_probe(&m, 2, 1.0, 9, 0);
        assert_eq!(full.indices, (0..pc).collect::<Vec<_>>());
        // Identical initial weights: every probe equals the average.
        for s in &full.samples {
            assert_eq!(s, &full.average);
        }
        assert!(full.client_terms(1.0).iter().all(|&t| t == 0.0));
        let a = sample_discrepancy_probe(&m, 2, 0.05, 9, 4);
        let b = sample_discrepancy_probe(&m, 2, 0.05, 9, 4);
        assert_eq!(a, b);
        assert_eq!(a.indices.len(), (0.05 * pc as f64).ceil() as usize);
    }

    #[test]
    fn probe_of_thousand_parameters() {
        // Widths chosen so the first layer carries exactly 1000 parameters.
        let m = SplitModel::new(&[99, 10, 4], 2, 1, 0).unwrap();
        assert_eq!(m.client_param_count(1), 1000);
        let p = sample_discrepancy_probe(&m, 1, 0.05, 1, 0);
        assert_eq!(p.indices.len(), 50);
        assert_eq!(p.samples[0], p.samples[1]);
    }
}
