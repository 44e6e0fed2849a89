//! End-to-end runs of the `crawler` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use crawler_cli::TrajectoryTable;
use crawler_core::model::ContactState;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn scenario(name: &str) -> PathBuf {
    root().join("scenarios").join(format!("{name}.toml"))
}

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn crawler(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crawler"))
        .args(args)
        .env_remove("CRAWLER_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn run(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "-q"];
    args.extend_from_slice(extra);
    crawler(&args)
}

fn verify(config: &Path, csv: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "verify",
        "--config",
        config.to_str().unwrap(),
        csv.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "-q",
    ];
    args.extend_from_slice(extra);
    crawler(&args)
}

fn read_table(path: &Path) -> TrajectoryTable {
    TrajectoryTable::from_csv(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("scenario.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn with_section(base: &Path, extra: &str) -> String {
    format!("{}\n{extra}\n", std::fs::read_to_string(base).unwrap())
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn equilibrium_gives_constant_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario("equilibrium");
    for (cmd, file) in [("simulate", "trajectory.csv"), ("oracle", "oracle.csv")] {
        let o = run(cmd, &cfg, dir.path(), &[]);
        assert_eq!(code(&o), 0, "{cmd}: {}", stderr(&o));
        let t = read_table(&dir.path().join(file));
        let cols = [&t.y, &t.x1, &t.x2, &t.k[0], &t.k[1], &t.f1, &t.f2, &t.g2];
        for col in cols {
            assert!(col.iter().all(|&v| v == col[0]), "{cmd}: non-constant column");
        }
        assert_eq!(t.y[0], 0.0);
        assert_eq!(t.x2[0], 1.0);
        assert!(t.regime1.iter().chain(&t.regime2).all(|&s| s == ContactState::Stick));
        let v = verify(&cfg, &dir.path().join(file), dir.path(), &[]);
        assert_eq!(code(&v), 0, "{}", stderr(&v));
    }
}

#[test]
fn negative_mass_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(scenario("benchmark")).unwrap().replace("m1 = 1.0", "m1 = -1.0");
    let cfg = write_config(dir.path(), &text);
    for cmd in ["simulate", "oracle", "converge", "compare"] {
        let o = run(cmd, &cfg, dir.path(), &[]);
        assert_eq!(code(&o), 2, "{cmd}");
        assert!(stderr(&o).contains("params.m1"), "{}", stderr(&o));
    }
    assert!(!dir.path().join("trajectory.csv").exists());
}

#[test]
fn malformed_inputs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &with_section(&scenario("benchmark"), "[output]\nformat = \"json\""));
    let o = run("simulate", &cfg, dir.path(), &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("format"), "{}", stderr(&o));

    let o = run("simulate", &dir.path().join("missing.toml"), dir.path(), &[]);
    assert_eq!(code(&o), 2);

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "t,y\n0,0\n").unwrap();
    let o = verify(&scenario("benchmark"), &bad, dir.path(), &[]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));

    // a chain has no event-driven solver
    let o = run("oracle", &scenario("chain3"), dir.path(), &[]);
    assert_eq!(code(&o), 2);
}

#[test]
fn simulate_round_trips_through_verify() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = golden("benchmark.toml");
    let o = run("simulate", &cfg, dir.path(), &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let path = dir.path().join("trajectory.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(TrajectoryTable::from_csv(&text).unwrap().to_csv(), text);
    let v = verify(&cfg, &path, dir.path(), &[]);
    assert_eq!(code(&v), 0, "{}", stderr(&v));
    let summary = std::fs::read_to_string(dir.path().join("verify_summary.csv")).unwrap();
    assert!(summary.starts_with("name,s,t,residual,tolerance,pass,witness\n"));
    assert!(summary.lines().skip(1).all(|l| l.contains(",true,")));
}

#[test]
fn corrupted_k1_fails_the_linear_relation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = golden("benchmark.toml");
    let mut table = read_table(&golden("benchmark_trajectory.csv"));
    let mid = table.len() / 2;
    table.k[0][mid] += 1e-2;
    let path = dir.path().join("corrupt.csv");
    std::fs::write(&path, table.to_csv()).unwrap();
    let o = verify(&cfg, &path, dir.path(), &[]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(stderr(&o).contains("linear_relation"), "{}", stderr(&o));
    let summary = std::fs::read_to_string(dir.path().join("verify_summary.csv")).unwrap();
    assert!(summary.lines().any(|l| l.starts_with("linear_relation,") && l.contains(",false,")));
}

#[test]
fn same_config_and_seed_give_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = golden("benchmark.toml");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        for cmd in ["simulate", "oracle", "converge"] {
            assert_eq!(code(&run(cmd, &cfg, out, &[])), 0);
        }
        assert_eq!(code(&verify(&cfg, &out.join("trajectory.csv"), out, &["--seed", "11"])), 0);
    }
    for file in ["trajectory.csv", "oracle.csv", "oracle_events.csv", "converge.csv", "verify_summary.csv"] {
        let (x, y) = (std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap());
        assert!(x == y, "{file} differs between runs");
    }
    // the seed moves the random windows
    let c = dir.path().join("c");
    assert_eq!(code(&verify(&cfg, &a.join("trajectory.csv"), &c, &["--seed", "12"])), 0);
    assert_ne!(
        std::fs::read(a.join("verify_summary.csv")).unwrap(),
        std::fs::read(c.join("verify_summary.csv")).unwrap()
    );
}

#[test]
fn benchmark_matches_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("simulate", &golden("benchmark.toml"), dir.path(), &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let fresh = std::fs::read(dir.path().join("trajectory.csv")).unwrap();
    let stored = std::fs::read(golden("benchmark_trajectory.csv")).unwrap();
    assert!(fresh == stored, "simulate output drifted from the golden file");
}

#[test]
fn converge_table_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("converge", &scenario("benchmark"), dir.path(), &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = csv_rows(&dir.path().join("converge.csv"));
    assert_eq!(rows.len(), 6);
    assert_eq!((rows[0][0].as_str(), rows[0][1].as_str()), ("100;100", "200;200"));
    let measured: Vec<f64> = rows.iter().map(|r| r[3].parse().unwrap()).collect();
    for r in &rows {
        let (bound, m, slack): (f64, f64, f64) = (r[2].parse().unwrap(), r[3].parse().unwrap(), r[4].parse().unwrap());
        assert!(m.sqrt() <= bound.sqrt() + slack);
        assert_eq!(r[5], "true");
    }
    // the first pair is still pre-asymptotic; from n = 200 on the
    // differences shrink with every doubling
    assert!(measured[1..].windows(2).all(|w| w[1] < w[0]), "{measured:?}");

    let free = std::fs::read_to_string(scenario("benchmark"))
        .unwrap()
        .replace("f1 = 0.1", "f1 = 0.0")
        .replace("f2 = 0.3", "f2 = 0.0")
        .replace("doublings = 6", "doublings = 1");
    let cfg = write_config(dir.path(), &free);
    let o = run("converge", &cfg, dir.path(), &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = csv_rows(&dir.path().join("converge.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][2].parse::<f64>().unwrap(), 0.0);
    assert_eq!(rows[0][3].parse::<f64>().unwrap(), 0.0);
}

#[test]
fn zeno_guard_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &with_section(&scenario("benchmark"), "[oracle]\nmax_events = 3"));
    let o = run("oracle", &cfg, dir.path(), &[]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn refinement_budget_overrun_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(scenario("benchmark"))
        .unwrap()
        .replace("k_max = 8", "k_max = 1");
    let cfg = write_config(dir.path(), &text);
    let o = run("simulate", &cfg, dir.path(), &[]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    // the partial result is still written for inspection
    assert!(dir.path().join("trajectory.csv").exists());
}

fn compare_metrics(dir: &Path) -> Vec<(String, String)> {
    csv_rows(&dir.join("compare.csv"))
        .into_iter()
        .map(|r| (r[0].clone(), r[1].clone()))
        .collect()
}

fn metric(rows: &[(String, String)], name: &str) -> f64 {
    rows.iter().find(|r| r.0 == name).unwrap().1.parse().unwrap()
}

#[test]
fn compare_benchmark_agrees_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("compare", &golden("benchmark.toml"), dir.path(), &["--plots"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = compare_metrics(dir.path());
    assert!(metric(&m, "sup_dy") <= 1e-2);
    let (a, b) = (metric(&m, "drift_penalized"), metric(&m, "drift_oracle"));
    assert!(a.signum() == b.signum() && (a - b).abs() <= 0.05 * b.abs());
    for f in ["compare_y.svg", "compare_x1.svg", "compare_k.svg", "compare_regimes.svg"] {
        let svg = std::fs::read_to_string(dir.path().join(f)).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"), "{f}");
    }

    let strict = write_config(dir.path(), &with_section(&golden("benchmark.toml"), "[compare]\ntolerance = 1e-9"));
    let o = run("compare", &strict, dir.path(), &[]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}

#[test]
fn compare_constant_gait_is_all_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("compare", &scenario("equilibrium"), dir.path(), &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = compare_metrics(dir.path());
    for name in ["sup_dy", "sup_dk1", "sup_dk_sum", "drift_penalized", "drift_oracle"] {
        assert_eq!(metric(&m, name), 0.0, "{name}");
    }
}

#[test]
fn compare_symmetric_gait_has_no_drift() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("compare", &scenario("symmetric"), dir.path(), &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = compare_metrics(dir.path());
    assert!(metric(&m, "drift_penalized").abs() <= 1e-6);
    assert!(metric(&m, "drift_oracle").abs() <= 1e-6);
}

#[test]
fn chain_simulate_and_verify() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario("chain3");
    let o = run("simulate", &cfg, dir.path(), &["--plots"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let path = dir.path().join("trajectory.csv");
    let header = std::fs::read_to_string(&path).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header, "t,y,x1,x2,k1,k2,F1,F2,G2,regime1,regime2,k3");
    assert!(dir.path().join("trajectory_regimes.svg").exists());
    let v = verify(&cfg, &path, dir.path(), &[]);
    assert_eq!(code(&v), 0, "{}", stderr(&v));
    // a two-channel file does not fit a three-body scenario
    let v = verify(&cfg, &golden("benchmark_trajectory.csv"), dir.path(), &[]);
    assert_eq!(code(&v), 2);
}

#[test]
fn output_dir_from_environment_and_quiet() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_crawler"))
        .args(["oracle", "--config", scenario("equilibrium").to_str().unwrap(), "--quiet"])
        .env("CRAWLER_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).is_empty());
    assert!(dir.path().join("oracle.csv").exists());
    assert!(dir.path().join("oracle_events.csv").exists());
}
