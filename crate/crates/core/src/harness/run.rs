//! Single runs: the run directory, its manifest, and the end-of-run summary.
//!
//! A run directory holds `manifest.json`, `metrics.csv`, `stability.json`
//! and `summary.json`. The manifest is written before the first round and
//! rewritten with the finish time at the end; its config snapshot alone is
//! enough to reproduce `metrics.csv` byte for byte.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::metrics::{MetricsRow, MetricsWriter};
use crate::coordinator::{BaselinePolicy, RoundRecord, Simulation};
use crate::error::{Error, Result};
use crate::lyapunov::StabilityReport;
use crate::par::Exec;
use crate::scenario::{ObjectiveMode, ScenarioConfig, Seeds};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const STABILITY_FILE: &str = "stability.json";
pub const SUMMARY_FILE: &str = "summary.json";

/// Version plus `git describe` output when the crate was built from a checkout.
pub fn build_id() -> String {
    let version = env!("CARGO_PKG_VERSION");
    match option_env!("ASFL_GIT_DESCRIBE") {
        Some(g) if !g.is_empty() => format!("asfl-core {version} ({g})"),
        _ => format!("asfl-core {version}"),
    }
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Output file names, relative to the run directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputPaths {
    pub manifest: String,
    pub metrics: String,
    pub stability: String,
    pub summary: String,
}

impl Default for OutputPaths {
    fn default() -> Self {
        OutputPaths {
            manifest: MANIFEST_FILE.into(),
            metrics: METRICS_FILE.into(),
            stability: STABILITY_FILE.into(),
            summary: SUMMARY_FILE.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub build: String,
    pub policy: BaselinePolicy,
    pub rounds: usize,
    /// Master seed the stream seeds were derived from, when one was given.
    pub master_seed: Option<u64>,
    pub seeds: Seeds,
    pub started_unix_s: u64,
    pub finished_unix_s: Option<u64>,
    pub outputs: OutputPaths,
    pub config: Value,
}

impl RunManifest {
    pub fn config(&self) -> Result<ScenarioConfig> {
        ScenarioConfig::from_value(self.config.clone())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::ConfigParse(format!("{}: {e}", path.display())))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("plain data serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Totals and averages over a finished run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub policy: BaselinePolicy,
    pub rounds: usize,
    pub final_train_loss: f64,
    pub final_train_accuracy: f64,
    /// Sum over rounds of the expected round delay.
    pub total_delay_s: f64,
    /// Sum over rounds and clients of expected client energy.
    pub total_energy_j: f64,
    pub cum_g_obj_verbatim: f64,
    pub cum_g_obj_consistent: f64,
    /// Per-round mean of `g_obj` in the run's objective mode.
    pub avg_g_obj: f64,
    /// Per-round mean of `g_0^+ / gamma + mean_n g_n^+ / delta`.
    pub avg_violation: f64,
    pub mean_bcd_iters: f64,
    /// Rounds in which BCD raised the objective at least once.
    pub descent_violation_rounds: usize,
    pub reused_rounds: usize,
    pub rb_infeasible_rounds: usize,
    pub power_fallback_rounds: usize,
}

/// Normalized positive constraint excess of one round.
pub fn round_violation(g: &[f64], cfg: &ScenarioConfig) -> f64 {
    let n = (g.len() - 1).max(1) as f64;
    g[0].max(0.0) / cfg.delay_budget_s + g[1..].iter().map(|x| x.max(0.0)).sum::<f64>() / (n * cfg.energy_budget_j)
}

impl RunSummary {
    pub fn from_records(policy: BaselinePolicy, cfg: &ScenarioConfig, records: &[RoundRecord]) -> Self {
        let r = records.len();
        let denom = r.max(1) as f64;
        let sum = |f: &dyn Fn(&RoundRecord) -> f64| records.iter().map(f).sum::<f64>();
        let count = |f: &dyn Fn(&RoundRecord) -> bool| records.iter().filter(|x| f(x)).count();
        let cum_v = sum(&|x| x.g_obj_verbatim);
        let cum_c = sum(&|x| x.g_obj_consistent);
        let last = records.last();
        RunSummary {
            policy,
            rounds: r,
            final_train_loss: last.map_or(f64::NAN, |x| x.train_loss),
            final_train_accuracy: last.map_or(f64::NAN, |x| x.train_accuracy),
            total_delay_s: sum(&|x| x.costs.t_total_expected_s),
            total_energy_j: sum(&|x| x.costs.e_total_expected_j.iter().sum()),
            cum_g_obj_verbatim: cum_v,
            cum_g_obj_consistent: cum_c,
            avg_g_obj: match cfg.objective_mode {
                ObjectiveMode::Verbatim => cum_v,
                ObjectiveMode::Consistent => cum_c,
            } / denom,
            avg_violation: sum(&|x| round_violation(&x.g, cfg)) / denom,
            mean_bcd_iters: sum(&|x| x.bcd_iters as f64) / denom,
            descent_violation_rounds: count(&|x| x.descent_violations > 0),
            reused_rounds: count(&|x| x.reused_previous),
            rb_infeasible_rounds: count(&|x| x.rb_infeasible),
            power_fallback_rounds: count(&|x| x.power_fallback),
        }
    }
}

/// What to run and where to put it.
#[derive(Clone, Debug)]
pub struct RunOptions {
    pub config: ScenarioConfig,
    pub policy: BaselinePolicy,
    pub rounds: usize,
    pub master_seed: Option<u64>,
    /// Run directory; `None` keeps everything in memory.
    pub out_dir: Option<PathBuf>,
    pub exec: Exec,
}

impl RunOptions {
    pub fn new(config: ScenarioConfig, policy: BaselinePolicy) -> Self {
        RunOptions {
            rounds: config.n_rounds,
            config,
            policy,
            master_seed: None,
            out_dir: None,
            exec: Exec::best(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub records: Vec<RoundRecord>,
    pub summary: RunSummary,
    pub stability: StabilityReport,
    pub manifest: RunManifest,
}

/// Runs `opts.rounds` rounds, streaming metrics to the run directory if
/// one is given.
pub fn run_simulation(opts: &RunOptions) -> Result<RunOutput> {
    let cfg = &opts.config;
    let mut manifest = RunManifest {
        build: build_id(),
        policy: opts.policy,
        rounds: opts.rounds,
        master_seed: opts.master_seed,
        seeds: cfg.seeds,
        started_unix_s: unix_now(),
        finished_unix_s: None,
        outputs: OutputPaths::default(),
        config: cfg.to_value(),
    };
    let mut sim = Simulation::new(cfg.clone(), opts.policy, opts.exec)?;
    let mut writer = match &opts.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            write_json(&dir.join(MANIFEST_FILE), &manifest)?;
            Some(MetricsWriter::create(dir.join(METRICS_FILE))?)
        }
        None => None,
    };
    let mut records = Vec::with_capacity(opts.rounds);
    for _ in 0..opts.rounds {
        let rec = sim.step()?;
        let row = MetricsRow::from(&rec);
        if !row.all_finite() {
            return Err(Error::NonFinite("metrics row"));
        }
        if let Some(w) = writer.as_mut() {
            w.write(&row)?;
        }
        records.push(rec);
    }
    let stability = sim.stability();
    let summary = RunSummary::from_records(opts.policy, cfg, &records);
    manifest.finished_unix_s = Some(unix_now());
    if let (Some(dir), Some(w)) = (&opts.out_dir, writer) {
        w.finish()?;
        write_json(&dir.join(STABILITY_FILE), &stability)?;
        write_json(&dir.join(SUMMARY_FILE), &summary)?;
        write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    }
    Ok(RunOutput {
        records,
        summary,
        stability,
        manifest,
    })
}

/// Result of re-running a manifest and comparing metrics files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub original: PathBuf,
    pub replayed: PathBuf,
    pub identical: bool,
    /// 1-based line of the first difference, if any.
    pub first_difference: Option<usize>,
}

/// Re-runs the run described by `manifest_path` into `out_dir` and compares
/// the two metrics files byte for byte.
pub fn replay(manifest_path: impl AsRef<Path>, out_dir: impl AsRef<Path>, exec: Exec) -> Result<ReplayReport> {
    let manifest_path = manifest_path.as_ref();
    let manifest = RunManifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let original = base.join(&manifest.outputs.metrics);
    let out_dir = out_dir.as_ref().to_path_buf();
    run_simulation(&RunOptions {
        config: manifest.config()?,
        policy: manifest.policy,
        rounds: manifest.rounds,
        master_seed: manifest.master_seed,
        out_dir: Some(out_dir.clone()),
        exec,
    })?;
    let replayed = out_dir.join(METRICS_FILE);
    let a = std::fs::read(&original).map_err(|e| Error::io(&original, e))?;
    let b = std::fs::read(&replayed).map_err(|e| Error::io(&replayed, e))?;
    let first_difference = if a == b {
        None
    } else {
        let la: Vec<&[u8]> = a.split(|&c| c == b'\n').collect();
        let lb: Vec<&[u8]> = b.split(|&c| c == b'\n').collect();
        Some((0..la.len().max(lb.len())).find(|&i| la.get(i) != lb.get(i)).unwrap_or(0) + 1)
    };
    Ok(ReplayReport {
        original,
        replayed,
        identical: first_difference.is_none(),
        first_difference,
    })
}
