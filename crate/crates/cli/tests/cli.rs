use std::path::Path;
use std::process::{Command, Output};

fn bench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_asfl-bench"))
        .args(args)
        .env_remove("ASFL_BENCH_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn simulate(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["simulate", "--config", "default", "--rounds", "5", "--seed", "1", "--out"];
    let d = dir.to_str().unwrap();
    args.push(d);
    args.extend_from_slice(extra);
    let o = bench(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    o
}

fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let i = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(i).unwrap().to_string()).collect()
}

#[test]
fn simulate_twice_gives_identical_csv() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(&tmp.path().join("a"), &[]);
    simulate(&tmp.path().join("b"), &[]);
    let a = std::fs::read(tmp.path().join("a/metrics.csv")).unwrap();
    let b = std::fs::read(tmp.path().join("b/metrics.csv")).unwrap();
    assert_eq!(a, b);
    for f in ["manifest.json", "stability.json", "summary.json"] {
        assert!(tmp.path().join("a").join(f).exists(), "{f}");
    }
}

#[test]
fn thread_cap_does_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(&tmp.path().join("a"), &[]);
    let o = Command::new(env!("CARGO_BIN_EXE_asfl-bench"))
        .args(["simulate", "--rounds", "5", "--seed", "1", "--out"])
        .arg(tmp.path().join("b"))
        .env("ASFL_BENCH_THREADS", "1")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(
        std::fs::read(tmp.path().join("a/metrics.csv")).unwrap(),
        std::fs::read(tmp.path().join("b/metrics.csv")).unwrap()
    );
}

#[test]
fn max_power_pins_every_power() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), &["--baseline", "max-power"]);
    let csv = std::fs::read_to_string(tmp.path().join("metrics.csv")).unwrap();
    for cell in column(&csv, "p") {
        assert!(cell.split(';').all(|p| p == "1.5"), "{cell}");
    }
}

#[test]
fn fixed_split_pins_the_cut() {
    let tmp = tempfile::tempdir().unwrap();
    simulate(tmp.path(), &["--baseline", "fixed-split:2"]);
    let csv = std::fs::read_to_string(tmp.path().join("metrics.csv")).unwrap();
    assert!(column(&csv, "cut").iter().all(|c| c == "2"));
}

#[test]
fn manifest_replays_byte_for_byte() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    simulate(&run, &["--fading", "frozen", "--objective-mode", "verbatim"]);
    let replay = tmp.path().join("replay");
    let o = bench(&[
        "check",
        "--manifest",
        run.join("manifest.json").to_str().unwrap(),
        "--out",
        replay.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("identical=true"));
}

#[test]
fn config_errors_are_one_json_line() {
    let o = bench(&["simulate", "--set", "no_such_key=1", "--out", "/nonexistent/x"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert_eq!(err.trim().lines().count(), 1, "{err}");
    assert!(err.starts_with("{\"error\":\"config\""), "{err}");

    let o = bench(&["check", "--config", "/no/such/file.json"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("\"io\""));

    let o = bench(&["simulate", "--baseline", "bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr(&o).trim().lines().count(), 1);
}

#[test]
fn check_prints_derived_info() {
    let o = bench(&["check", "--set", "n_clients=3"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("config ok"));
    assert!(out.contains("allowed_cuts=[1, 2, 3, 4, 5]"));
    assert!(out.contains("clients=3"));
}

#[test]
fn rb_oracle_has_zero_gap() {
    let o = bench(&["oracle", "rb", "--n", "2", "--k", "3"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("max gap 0.000e0"));
}

#[test]
fn split_and_per_oracles_pass() {
    let o = bench(&["oracle", "split", "--layers", "4"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let o = bench(&["oracle", "per", "--frozen", "--draws", "200000"]);
    assert!(o.status.success(), "{}", stdout(&o));
}

#[test]
fn unknown_oracle_is_rejected() {
    let o = bench(&["oracle", "magic"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown oracle"));
}

#[test]
fn mu_sweep_has_fifteen_runs_and_three_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sweep");
    let o = bench(&[
        "sweep",
        "--param",
        "mu",
        "--values",
        "0.1,0.5,0.9",
        "--repeats",
        "5",
        "--rounds",
        "2",
        "--set",
        "n_clients=3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4);
    let runs = walk(&out).into_iter().filter(|p| p.ends_with("metrics.csv")).count();
    assert_eq!(runs, 15);
}

#[test]
fn client_count_sweep_completes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = bench(&[
        "sweep",
        "--param",
        "n_clients",
        "--values",
        "2,5,10",
        "--repeats",
        "1",
        "--rounds",
        "2",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows: Vec<String> = stdout(&o).lines().skip(1).map(String::from).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[2].starts_with("n_clients,10,1,"));
}

#[test]
fn empty_sweep_is_an_error() {
    let o = bench(&["sweep", "--param", "v", "--values", ""]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn solve_round_dumps() {
    let o = bench(&["solve-round", "--rb"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("counts"));
    assert_eq!(out.lines().filter(|l| l.starts_with("top")).count(), 5);

    let o = bench(&["solve-round", "--power", "--set", "n_clients=4"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("client,k,lo,hi,branch,p,oracle_p,gap"));
    assert_eq!(out.lines().count(), 2 + 4);

    let o = bench(&["solve-round"]);
    assert_eq!(o.status.code(), Some(2));
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}
