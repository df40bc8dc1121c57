//! `asfl-bench`: simulate, sweep, run oracles, check configs and dump
//! single-round solver decisions.
//!
//! Failures print one JSON line on stderr, `{"error": kind, "message": text}`,
//! and exit nonzero: 2 for usage and config problems, 3 for I/O, 4 when an
//! oracle or replay check fails, 1 otherwise.

use std::path::PathBuf;
use std::process::ExitCode;

use asfl_core::coordinator::BaselinePolicy;
use asfl_core::harness::oracle::{snapshot_round, solve_round_power, solve_round_rb};
use asfl_core::harness::{
    replay, run_oracle, run_simulation, run_sweep, OracleKind, OracleOptions, RunOptions, SweepParam, SweepSpec,
};
use asfl_core::par::{self, Exec};
use asfl_core::rb_solver::count_space_size;
use asfl_core::scenario::{load_config, FadingMode, ObjectiveMode, ScenarioConfig, Seeds};
use asfl_core::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "asfl-bench", version, about = "Adaptive split federated learning co-simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one policy for a number of rounds and write a run directory.
    Simulate(SimulateArgs),
    /// Run a parameter across values and seeds and summarize each value.
    Sweep(SweepArgs),
    /// Compare a solver against its brute-force reference.
    Oracle(OracleArgs),
    /// Validate a config, or re-run a manifest and compare its metrics.
    Check(CheckArgs),
    /// Solve one block of a single round and print the details.
    SolveRound(SolveRoundArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Verbatim,
    Consistent,
}

#[derive(Clone, Copy, ValueEnum)]
enum FadingArg {
    On,
    Frozen,
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file (JSON) or `default`.
    #[arg(long, default_value = "default")]
    config: PathBuf,
    /// Override a config key, `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Master seed; derives the environment, data, model and sampling seeds.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    objective_mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    fading: Option<FadingArg>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ScenarioConfig, Error> {
        let mut cfg = load_config(&self.config)?.with_overrides(&self.set)?;
        if let Some(seed) = self.seed {
            cfg.seeds = Seeds::from_master(seed);
        }
        if let Some(m) = self.objective_mode {
            cfg.objective_mode = match m {
                ModeArg::Verbatim => ObjectiveMode::Verbatim,
                ModeArg::Consistent => ObjectiveMode::Consistent,
            };
        }
        if let Some(f) = self.fading {
            cfg.fading = match f {
                FadingArg::On => FadingMode::On,
                FadingArg::Frozen => FadingMode::Frozen,
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Rounds to run; defaults to the config's `n_rounds`.
    #[arg(long)]
    rounds: Option<usize>,
    /// asfl, fixed-split:L, max-power, rand-power or rand-rb.
    #[arg(long, default_value = "asfl")]
    baseline: BaselinePolicy,
    /// Run directory.
    #[arg(long, default_value = "asfl-run")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// mu, v, rho, n_clients, k or baseline.
    #[arg(long)]
    param: SweepParam,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    values: Vec<String>,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long, default_value = "asfl")]
    baseline: BaselinePolicy,
    /// Sweep directory: one run directory per cell plus `summary.csv`.
    #[arg(long, default_value = "asfl-sweep")]
    out: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    /// per, power, rb, split or joint.
    which: String,
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long, default_value_t = 20)]
    instances: usize,
    /// Clients per instance.
    #[arg(long = "n", default_value_t = 2)]
    n_clients: usize,
    /// Resource blocks per instance.
    #[arg(long = "k", default_value_t = 3)]
    n_rbs: usize,
    #[arg(long, default_value_t = 4)]
    layers: usize,
    /// Packet error oracle: no fading.
    #[arg(long)]
    frozen: bool,
    /// Packet error oracle: Monte Carlo draws.
    #[arg(long, default_value_t = 1_000_000)]
    draws: usize,
    /// Packet error oracle: client distances in meters.
    #[arg(long = "distance", value_delimiter = ',')]
    distances: Vec<f64>,
    /// Packet error oracle: transmit power; defaults to the maximum.
    #[arg(long)]
    power: Option<f64>,
    /// Packet error oracle: RBs on the link.
    #[arg(long, default_value_t = 1)]
    rb_count: usize,
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Re-run this manifest and compare metrics byte for byte.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Where the re-run goes; defaults to `replay/` next to the manifest.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
#[group(id = "block", required = true, multiple = false, args = ["rb", "power"])]
struct SolveRoundArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long, default_value_t = 0)]
    round: usize,
    /// RB counts and the best candidates.
    #[arg(long)]
    rb: bool,
    /// Per-client power, bounds, branch and grid optimum.
    #[arg(long)]
    power: bool,
}

enum Failure {
    Error(Error),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

fn error_kind(e: &Error) -> (&'static str, u8) {
    match e {
        Error::Io { .. } => ("io", 3),
        Error::Usage(_) => ("usage", 2),
        Error::ConfigParse(_) | Error::Invalid { .. } | Error::UnknownKey(_) => ("config", 2),
        Error::DatasetTooSmall { .. } => ("config", 2),
        _ => ("runtime", 1),
    }
}

fn report(kind: &str, message: &str) {
    let line = serde_json::json!({ "error": kind, "message": message });
    eprintln!("{line}");
}

fn exec() -> Exec {
    Exec::best()
}

fn simulate(a: SimulateArgs) -> Result<(), Failure> {
    let config = a.cfg.load()?;
    let rounds = a.rounds.unwrap_or(config.n_rounds);
    let out = run_simulation(&RunOptions {
        config,
        policy: a.baseline,
        rounds,
        master_seed: a.cfg.seed,
        out_dir: Some(a.out.clone()),
        exec: exec(),
    })?;
    let s = &out.summary;
    println!(
        "simulate policy={} rounds={} out={} final_accuracy={} final_loss={} total_delay_s={} total_energy_j={} \
         avg_g_obj={} avg_violation={} descent_violation_rounds={}",
        s.policy,
        s.rounds,
        a.out.display(),
        s.final_train_accuracy,
        s.final_train_loss,
        s.total_delay_s,
        s.total_energy_j,
        s.avg_g_obj,
        s.avg_violation,
        s.descent_violation_rounds
    );
    let st = &out.stability;
    println!(
        "stability max_q0={} max_qn={} queue_bounds_hold={} time_average_holds={}",
        st.max_q0,
        st.max_qn,
        st.queue_bounds_hold,
        st.time_average.as_ref().map_or("skipped".to_string(), |t| t.holds.to_string())
    );
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<(), Failure> {
    let base = a.cfg.load()?;
    let spec = SweepSpec {
        rounds: a.rounds.unwrap_or(base.n_rounds),
        base,
        policy: a.baseline,
        param: a.param,
        values: a.values.iter().map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect(),
        repeats: a.repeats,
        master_seed: a.cfg.seed.unwrap_or(42),
        out_dir: Some(a.out),
    };
    let result = run_sweep(&spec, exec())?;
    print!("{}", result.to_csv());
    Ok(())
}

fn oracle(a: OracleArgs) -> Result<(), Failure> {
    let kind: OracleKind = a.which.parse()?;
    let defaults = OracleOptions::default();
    let opts = OracleOptions {
        config: a.cfg.load()?,
        seed: a.cfg.seed.unwrap_or(defaults.seed),
        instances: a.instances,
        n_clients: a.n_clients,
        n_rbs: a.n_rbs,
        layers: a.layers,
        frozen: a.frozen,
        draws: a.draws,
        distances_m: if a.distances.is_empty() { defaults.distances_m } else { a.distances },
        power_w: a.power,
        rb_count: a.rb_count,
        grid_points: defaults.grid_points,
    };
    let r = run_oracle(kind, &opts, exec())?;
    println!("{r}");
    if r.passed {
        Ok(())
    } else {
        Err(Failure::Check(format!(
            "oracle {} gap {:e} exceeds tolerance {:e}",
            r.kind, r.max_gap, r.tolerance
        )))
    }
}

fn check(a: CheckArgs) -> Result<(), Failure> {
    if let Some(manifest) = a.manifest {
        let out = a
            .out
            .unwrap_or_else(|| manifest.parent().unwrap_or(std::path::Path::new(".")).join("replay"));
        let rep = replay(&manifest, &out, exec())?;
        println!(
            "replay original={} replayed={} identical={}",
            rep.original.display(),
            rep.replayed.display(),
            rep.identical
        );
        return match rep.first_difference {
            None => Ok(()),
            Some(line) => Err(Failure::Check(format!("metrics differ from line {line}"))),
        };
    }
    let cfg = a.cfg.load()?;
    let cuts: Vec<usize> = cfg
        .allowed_cut_mask()
        .iter()
        .enumerate()
        .filter(|(_, &on)| on)
        .map(|(c, _)| c)
        .collect();
    let space = count_space_size(cfg.n_clients, cfg.n_rbs);
    println!("config ok");
    println!("layers={}", cfg.n_layers());
    println!("allowed_cuts={cuts:?}");
    println!("clients={} rbs={} rounds={}", cfg.n_clients, cfg.n_rbs, cfg.n_rounds);
    println!("noise_psd_w_per_hz={:e}", cfg.noise_psd_w_per_hz);
    println!(
        "rb_count_vectors={space} rb_method={}",
        if space <= cfg.rb_exact_budget { "exact" } else { "greedy" }
    );
    println!("seeds env={} data={} model={} sampling={}", cfg.seeds.env, cfg.seeds.data, cfg.seeds.model, cfg.seeds.sampling);
    Ok(())
}

fn solve_round(a: SolveRoundArgs) -> Result<(), Failure> {
    let cfg = a.cfg.load()?;
    let inst = snapshot_round(&cfg, a.round)?;
    if a.rb {
        let sol = solve_round_rb(&inst, exec());
        println!(
            "round {} cut {} counts {:?} method {:?} evaluated {} infeasible {}",
            a.round, inst.prev_cut, sol.assignment.counts, sol.method, sol.evaluated, sol.infeasible
        );
        for (i, c) in sol.top.iter().enumerate() {
            println!("top{} counts {:?} g_obj {:e} violation {:e}", i + 1, c.counts, c.score.g_obj, c.score.violation);
        }
    } else {
        let (counts, sol, rows) = solve_round_power(&inst, exec());
        println!(
            "round {} cut {} counts {:?} iterations {} converged {} g_obj {:e}",
            a.round, inst.prev_cut, counts, sol.iterations, sol.converged, sol.g_obj
        );
        println!("client,k,lo,hi,branch,p,oracle_p,gap");
        let opt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:e}"));
        for r in rows {
            println!(
                "{},{},{},{},{:?},{:e},{},{}",
                r.client,
                r.k,
                opt(r.lo),
                opt(r.hi),
                r.branch,
                r.p,
                opt(r.oracle_p),
                opt(r.gap)
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version.
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            // Fold clap's multi-line message into one line, without the usage block.
            let msg = e.to_string();
            let text: Vec<&str> = msg
                .lines()
                .take_while(|l| !l.starts_with("Usage:") && !l.starts_with("For more information"))
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .collect();
            report("usage", text.join(" ").trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    let run = || match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Sweep(a) => sweep(a),
        Command::Oracle(a) => oracle(a),
        Command::Check(a) => check(a),
        Command::SolveRound(a) => solve_round(a),
    };
    match par::with_width(par::env_width(), run) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Error(e)) => {
            let (kind, code) = error_kind(&e);
            report(kind, &e.to_string());
            ExitCode::from(code)
        }
        Err(Failure::Check(msg)) => {
            report("check", &msg);
            ExitCode::from(4)
        }
    }
}
