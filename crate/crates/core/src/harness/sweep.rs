//! Parameter sweeps: every value of one parameter, repeated over seeds.
//!
//! Cell `(value, r)` uses master seed `base + r`, so all values at the same
//! repeat share their channel and data draws. Cells run in parallel; each
//! owns its directory when the sweep writes to disk.

use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::run::{run_simulation, RunOptions, RunSummary};
use crate::coordinator::BaselinePolicy;
use crate::error::{Error, Result};
use crate::par::{self, Exec};
use crate::scenario::{ScenarioConfig, Seeds};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// Queue memory.
    Mu,
    /// Penalty weight.
    V,
    /// Dirichlet concentration.
    Rho,
    NClients,
    /// Number of resource blocks.
    K,
    Baseline,
}

impl SweepParam {
    /// Config key the parameter overrides; `None` for the policy.
    pub fn config_key(self) -> Option<&'static str> {
        match self {
            SweepParam::Mu => Some("queue_memory"),
            SweepParam::V => Some("penalty_weight"),
            SweepParam::Rho => Some("dirichlet_alpha"),
            SweepParam::NClients => Some("n_clients"),
            SweepParam::K => Some("n_rbs"),
            SweepParam::Baseline => None,
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParam::Mu => "mu",
            SweepParam::V => "v",
            SweepParam::Rho => "rho",
            SweepParam::NClients => "n_clients",
            SweepParam::K => "k",
            SweepParam::Baseline => "baseline",
        })
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "mu" | "queue_memory" => SweepParam::Mu,
            "v" | "penalty_weight" => SweepParam::V,
            "rho" | "dirichlet_alpha" => SweepParam::Rho,
            "n_clients" | "n" => SweepParam::NClients,
            "k" | "n_rbs" => SweepParam::K,
            "baseline" | "policy" => SweepParam::Baseline,
            _ => {
                return Err(Error::Usage(format!(
                    "unknown sweep parameter `{s}` (expected mu, v, rho, n_clients, k or baseline)"
                )))
            }
        })
    }
}

#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub base: ScenarioConfig,
    pub policy: BaselinePolicy,
    pub param: SweepParam,
    pub values: Vec<String>,
    pub repeats: usize,
    pub rounds: usize,
    pub master_seed: u64,
    pub out_dir: Option<PathBuf>,
}

impl SweepSpec {
    /// Config and policy of one cell.
    pub fn cell(&self, value: &str, repeat: usize) -> Result<(ScenarioConfig, BaselinePolicy, u64)> {
        let seed = self.master_seed.wrapping_add(repeat as u64);
        let mut cfg = match self.param.config_key() {
            Some(key) => self.base.with_overrides(&[format!("{key}={value}")])?,
            None => self.base.clone(),
        };
        cfg.seeds = Seeds::from_master(seed);
        let policy = match self.param {
            SweepParam::Baseline => value.parse()?,
            _ => self.policy,
        };
        Ok((cfg, policy, seed))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub value: String,
    pub repeat: usize,
    pub seed: u64,
    pub summary: RunSummary,
}

/// Mean and standard error over repeats.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

impl MeanSe {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let se = if xs.len() > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        MeanSe { mean, se }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: String,
    pub repeats: usize,
    pub final_accuracy: MeanSe,
    pub total_delay_s: MeanSe,
    pub total_energy_j: MeanSe,
    pub avg_g_obj: MeanSe,
    pub avg_violation: MeanSe,
}

pub const SWEEP_HEADER: &str = "param,value,repeats,final_accuracy_mean,final_accuracy_se,\
total_delay_mean,total_delay_se,total_energy_mean,total_energy_se,avg_g_obj_mean,avg_g_obj_se,\
avg_violation_mean,avg_violation_se";

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub param: SweepParam,
    pub cells: Vec<SweepCell>,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(SWEEP_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{},{},{}", self.param, r.value, r.repeats);
            for m in [r.final_accuracy, r.total_delay_s, r.total_energy_j, r.avg_g_obj, r.avg_violation] {
                let _ = write!(out, ",{},{}", m.mean, m.se);
            }
            out.push('\n');
        }
        out
    }
}

fn cell_dir(root: &Path, param: SweepParam, value: &str, repeat: usize) -> PathBuf {
    let safe: String = value
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect();
    root.join(format!("{param}={safe}")).join(format!("rep{repeat}"))
}

/// Runs every cell. `exec` spreads cells over the pool; each simulation
/// runs sequentially inside its cell.
pub fn run_sweep(spec: &SweepSpec, exec: Exec) -> Result<SweepResult> {
    if spec.values.is_empty() {
        return Err(Error::Usage("sweep needs at least one value".into()));
    }
    if spec.repeats == 0 {
        return Err(Error::Usage("sweep needs at least one repeat".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..spec.values.len())
        .flat_map(|v| (0..spec.repeats).map(move |r| (v, r)))
        .collect();
    // Validate every cell before spending time on any of them.
    for &(v, r) in &jobs {
        spec.cell(&spec.values[v], r)?;
    }
    let results = par::map_slice(exec, &jobs, |&(v, r)| -> Result<SweepCell> {
        let value = &spec.values[v];
        let (config, policy, seed) = spec.cell(value, r)?;
        let out = run_simulation(&RunOptions {
            config,
            policy,
            rounds: spec.rounds,
            master_seed: Some(seed),
            out_dir: spec.out_dir.as_ref().map(|d| cell_dir(d, spec.param, value, r)),
            exec: Exec::Sequential,
        })?;
        Ok(SweepCell {
            value: value.clone(),
            repeat: r,
            seed,
            summary: out.summary,
        })
    });
    let cells: Vec<SweepCell> = results.into_iter().collect::<Result<_>>()?;
    let rows = spec
        .values
        .iter()
        .map(|value| {
            let mine: Vec<&RunSummary> = cells.iter().filter(|c| &c.value == value).map(|c| &c.summary).collect();
            let stat = |f: fn(&RunSummary) -> f64| MeanSe::of(&mine.iter().map(|s| f(s)).collect::<Vec<_>>());
            SweepRow {
                value: value.clone(),
                repeats: mine.len(),
                final_accuracy: stat(|s| s.final_train_accuracy),
                total_delay_s: stat(|s| s.total_delay_s),
                total_energy_j: stat(|s| s.total_energy_j),
                avg_g_obj: stat(|s| s.avg_g_obj),
                avg_violation: stat(|s| s.avg_violation),
            }
        })
        .collect();
    let result = SweepResult {
        param: spec.param,
        cells,
        rows,
    };
    if let Some(dir) = &spec.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("summary.csv");
        std::fs::write(&path, result.to_csv()).map_err(|e| Error::io(&path, e))?;
    }
    Ok(result)
}
