use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::{stream, Domain, ScenarioConfig};
use crate::error::{Error, Result};

/// A labelled sample set stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub n_classes: usize,
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}

/// Gaussian-mixture classification data with balanced labels.
///
/// Class means are drawn with per-coordinate spread `separation / sqrt(dim)`,
/// so typical distances between means are about `separation * sqrt(2)` in
/// units of the unit-variance noise.
pub fn synthetic_dataset(
    n: usize,
    dim: usize,
    n_classes: usize,
    separation: f64,
    rng: &mut impl Rng,
) -> Dataset {
    let spread = separation / (dim as f64).sqrt();
    let means: Vec<f64> = (0..n_classes * dim)
        .map(|_| spread * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % n_classes;
        labels.push(y);
        for d in 0..dim {
            features.push(means[y * dim + d] + rng.sample::<f64, _>(StandardNormal));
        }
    }
    Dataset {
        dim,
        n_classes,
        features,
        labels,
    }
}

/// Per-class client proportions `q[c][n]`, each row a Dir(rho) draw.
pub fn dirichlet_proportions(
    n_classes: usize,
    n_clients: usize,
    rho: f64,
    rng: &mut impl Rng,
) -> Vec<Vec<f64>> {
    let gamma = Gamma::new(rho, 1.0).expect("rho > 0");
    (0..n_classes)
        .map(|_| {
            let mut row: Vec<f64> = (0..n_clients).map(|_| gamma.sample(rng)).collect();
            let total: f64 = row.iter().sum();
            if total > 0.0 && total.is_finite() {
                row.iter_mut().for_each(|v| *v /= total);
            } else {
                // Tiny rho can underflow every draw; fall back to uniform.
                row.iter_mut().for_each(|v| *v = 1.0 / n_clients as f64);
            }
            row
        })
        .collect()
}

/// Splits `total` into integer parts proportional to `weights` by the
/// largest-remainder rule, ties to the lower index.
fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        let mut out = vec![total / weights.len(); weights.len()];
        for v in out.iter_mut().take(total % weights.len()) {
            *v += 1;
        }
        return out;
    }
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut out: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = out.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        out[i] += 1;
    }
    out
}

/// Assigns exactly `samples_per_client` indices to each client with a
/// Dirichlet label skew.
///
/// Each client's class mix is proportional to its Dirichlet share of each
/// class times the class size, rounded to integers. Indices are handed out
/// in ascending order within each class; if a class runs dry the shortfall
/// is taken from the class with the most samples left. Samples beyond
/// `N * D_n` are left unassigned.
pub fn partition_data(cfg: &ScenarioConfig, dataset: &Dataset) -> Result<Vec<Vec<usize>>> {
    let n = cfg.n_clients;
    let per_client = cfg.samples_per_client;
    let required = n * per_client;
    if dataset.len() < required || dataset.is_empty() {
        return Err(Error::DatasetTooSmall {
            available: dataset.len(),
            required,
        });
    }
    let mut pools: Vec<std::collections::VecDeque<usize>> =
        vec![Default::default(); dataset.n_classes];
    for (i, &y) in dataset.labels.iter().enumerate() {
        pools[y].push_back(i);
    }
    let class_sizes: Vec<f64> = pools.iter().map(|p| p.len() as f64).collect();
    let mut rng = stream(cfg.seeds.data, Domain::Partition, 0);
    let q = dirichlet_proportions(dataset.n_classes, n, cfg.dirichlet_alpha, &mut rng);

    let mut out = Vec::with_capacity(n);
    for client in 0..n {
        let weights: Vec<f64> = (0..dataset.n_classes)
            .map(|c| q[c][client] * class_sizes[c])
            .collect();
        let targets = largest_remainder(&weights, per_client);
        let mut mine = Vec::with_capacity(per_client);
        for (c, &want) in targets.iter().enumerate() {
            for _ in 0..want {
                match pools[c].pop_front() {
                    Some(i) => mine.push(i),
                    None => break,
                }
            }
        }
        while mine.len() < per_client {
            let (richest, _) = pools
                .iter()
                .enumerate()
                .fold((0, 0), |acc, (c, p)| if p.len() > acc.1 { (c, p.len()) } else { acc });
            match pools[richest].pop_front() {
                Some(i) => mine.push(i),
                None => unreachable!("dataset size checked above"),
            }
        }
        mine.sort_unstable();
        out.push(mine);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(n: usize, classes: usize, seed: u64) -> Dataset {
        synthetic_dataset(n, 4, classes, 2.0, &mut stream(seed, Domain::Dataset, 0))
    }

    fn cfg(n_clients: usize, per_client: usize, rho: f64) -> ScenarioConfig {
        ScenarioConfig {
            n_clients,
            samples_per_client: per_client,
            dirichlet_alpha: rho,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn proportions_sum_to_one() {
        let mut rng = stream(1, Domain::Partition, 0);
        for rho in [0.01, 0.1, 1.0, 10.0, 1e6] {
            for row in dirichlet_proportions(10, 10, rho, &mut rng) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn huge_concentration_matches_global_mix() {
        let d = data(2000, 2, 3);
        let parts = partition_data(&cfg(10, 200, 1e6), &d).unwrap();
        for p in parts {
            let ones = p.iter().filter(|&&i| d.labels[i] == 1).count() as f64 / p.len() as f64;
            assert!((ones - 0.5).abs() <= 0.02, "{ones}");
        }
    }

    #[test]
    fn equal_sizes_disjoint_and_deterministic() {
        let d = data(3000, 10, 4);
        let c = cfg(10, 200, 10.0);
        let parts = partition_data(&c, &d).unwrap();
        assert_eq!(parts, partition_data(&c, &d).unwrap());
        let mut seen = std::collections::HashSet::new();
        let mut classes = std::collections::HashSet::new();
        for p in &parts {
            assert_eq!(p.len(), 200);
            for &i in p {
                assert!(seen.insert(i));
                classes.insert(d.labels[i]);
            }
        }
        assert_eq!(classes.len(), 10);
    }

    #[test]
    fn skewed_partition_still_fills_every_client() {
        let d = data(2000, 10, 5);
        let parts = partition_data(&cfg(10, 200, 0.01), &d).unwrap();
        assert!(parts.iter().all(|p| p.len() == 200));
    }

    #[test]
    fn too_small_dataset() {
        let d = data(100, 2, 6);
        assert!(matches!(
            partition_data(&cfg(10, 20, 1.0), &d),
            Err(Error::DatasetTooSmall { available: 100, required: 200 })
        ));
    }

    #[test]
    fn largest_remainder_exact_total() {
        assert_eq!(largest_remainder(&[1.0, 1.0, 1.0], 10), vec![4, 3, 3]);
        assert_eq!(largest_remainder(&[0.0, 0.0], 3), vec![2, 1]);
        assert_eq!(largest_remainder(&[0.7, 0.3], 10), vec![7, 3]);
    }
}
