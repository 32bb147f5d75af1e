use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn clsis(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clsis")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = clsis(args);
    assert!(out.status.success(), "clsis {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path.as_ref()).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Complete graph with unit rates in both directions.
fn complete_graph(dir: &Path, n: usize) -> PathBuf {
    let mut text = format!("# nodes={n}\n");
    for i in 0..n {
        for j in 0..n {
            if i != j {
                text.push_str(&format!("{i},{j},1\n"));
            }
        }
    }
    let p = dir.join(format!("k{n}.csv"));
    fs::write(&p, text).unwrap();
    p
}

/// Every file except the wall-clock timings and the resolved config, which records the output path.
fn artifacts(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), p))
        .filter(|(name, _)| name != "timing.json" && name != "config.resolved.toml")
        .map(|(name, p)| (name, fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

fn assert_same_artifacts(a: &Path, b: &Path) {
    let (x, y) = (artifacts(a), artifacts(b));
    let names = |v: &[(String, Vec<u8>)]| v.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>();
    assert_eq!(names(&x), names(&y));
    for ((name, p), (_, q)) in x.iter().zip(&y) {
        assert!(p == q, "{name} differs");
    }
}

/// Mean of the quasi-stationary law of the birth–death chain on `1..=n` with birth
/// `k(n−k)β` and death `kδ`, by power iteration of the uniformized, renormalized chain.
fn birth_death_qsd_mean(n: usize, beta: f64, delta: f64) -> f64 {
    let birth = |k: usize| (k * (n - k)) as f64 * beta;
    let death = |k: usize| k as f64 * delta;
    let lam = (1..=n).map(|k| birth(k) + death(k)).fold(0.0, f64::max) * 1.01;
    let mut p = vec![1.0 / n as f64; n + 1];
    p[0] = 0.0;
    for _ in 0..200_000 {
        let mut q = vec![0.0; n + 1];
        for k in 1..=n {
            q[k] += p[k] * (1.0 - (birth(k) + death(k)) / lam);
            if k < n {
                q[k + 1] += p[k] * birth(k) / lam;
            }
            q[k - 1] += p[k] * death(k) / lam;
        }
        q[0] = 0.0;
        let z: f64 = q.iter().sum();
        q.iter_mut().for_each(|x| *x /= z);
        let diff: f64 = q.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum();
        p = q;
        if diff < 1e-15 {
            break;
        }
    }
    (1..=n).map(|k| k as f64 * p[k]).sum()
}

#[test]
fn missing_n_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let out = clsis(&["-o", s(dir.path()), "generate", "--exponent", "2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error[validation]"));
}

#[test]
fn generate_is_deterministic() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    for d in [&a, &b] {
        ok(&["-o", s(d.path()), "--seed", "1", "generate", "--n", "2000", "--exponent", "2"]);
    }
    assert!(a.path().join("edges.csv").is_file() && a.path().join("generate.json").is_file());
    assert_same_artifacts(a.path(), b.path());
    let meta = json(a.path().join("generate.json"));
    assert_eq!(meta["params"]["n"], 2000);
    assert!(meta["nodes"].as_u64().unwrap() > 1000);

    let c = TempDir::new().unwrap();
    ok(&["-o", s(c.path()), "--seed", "2", "generate", "--n", "2000", "--exponent", "2"]);
    assert_ne!(fs::read(a.path().join("edges.csv")).unwrap(), fs::read(c.path().join("edges.csv")).unwrap());
}

#[test]
fn complete_graph_prediction() {
    // Balance (10 − N)N = 4N gives N∞ = 6; the linearized variance of the total is δ = 4.
    let dir = TempDir::new().unwrap();
    let edges = complete_graph(dir.path(), 10);
    let out = dir.path().join("pred");
    ok(&[
        "-o",
        s(&out),
        "predict",
        "--edges",
        s(&edges),
        "--default-curing",
        "4",
        "--k",
        "1",
        "--lambda",
        "0",
        "--r",
        "1",
        "--outliers",
        "0",
    ]);
    let summary = json(out.join("summary.json"));
    assert!((summary["mean_total"].as_f64().unwrap() - 6.0).abs() < 1e-8, "{summary}");
    assert!((summary["std_total"].as_f64().unwrap() - 2.0).abs() < 1e-6, "{summary}");
    let dist = json(out.join("distribution.json"));
    assert!((dist["mean_total"].as_f64().unwrap() - 6.0).abs() < 1e-8);
    for f in [
        "W.csv",
        "H.csv",
        "factors.json",
        "clusters.csv",
        "centers.json",
        "prediction.json",
        "fluctuation.json",
        "sigma_inf.csv",
        "node_probability.csv",
        "config.resolved.toml",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
}

#[test]
fn subcritical_prediction_exits_three_with_artifacts() {
    let dir = TempDir::new().unwrap();
    let edges = complete_graph(dir.path(), 5);
    let out = dir.path().join("pred");
    let res = clsis(&["-o", s(&out), "predict", "--edges", s(&edges), "--default-curing", "10"]);
    assert_eq!(res.status.code(), Some(3), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(String::from_utf8_lossy(&res.stderr).contains("error[subcritical]"));
    let summary = json(out.join("summary.json"));
    assert_eq!(summary["exists"], false);
    assert_eq!(summary["mean_total"].as_f64(), Some(0.0));
    let pred = json(out.join("prediction.json"));
    assert!(pred["ninf"].as_array().unwrap().iter().all(|v| v.as_f64() == Some(0.0)));
    assert!(!out.join("distribution.json").exists());
}

#[test]
fn prediction_is_idempotent() {
    let dir = TempDir::new().unwrap();
    let gen = dir.path().join("net");
    ok(&["-o", s(&gen), "generate", "--n", "300", "--exponent", "2.5", "--mean-degree", "6"]);
    let edges = gen.join("edges.csv");
    let runs: Vec<PathBuf> = (0..2).map(|i| dir.path().join(format!("run{i}"))).collect();
    for r in &runs {
        ok(&[
            "-o",
            s(r),
            "predict",
            "--edges",
            s(&edges),
            "--default-curing",
            "3",
            "--k",
            "2",
            "--lambda",
            "0.5",
            "--r",
            "12",
            "--correct",
        ]);
    }
    assert_same_artifacts(&runs[0], &runs[1]);
}

#[test]
fn correct_from_stored_artifacts_matches_predict() {
    let dir = TempDir::new().unwrap();
    let gen = dir.path().join("net");
    ok(&["-o", s(&gen), "generate", "--n", "300", "--exponent", "2.5", "--mean-degree", "6"]);
    let edges = gen.join("edges.csv");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let common = ["predict", "--edges", s(&edges), "--default-curing", "3", "--k", "1", "--r", "8"];
    ok(&[&["-o", s(&a)], &common[..], &["--correct"]].concat());
    ok(&[&["-o", s(&b)], &common[..]].concat());
    assert!(!b.join("corrected.json").exists());
    ok(&["-o", s(&b), "correct"]);
    assert_eq!(fs::read(a.join("corrected.json")).unwrap(), fs::read(b.join("corrected.json")).unwrap());
    assert_eq!(fs::read(a.join("node_probability.csv")).unwrap(), fs::read(b.join("node_probability.csv")).unwrap());
}

#[test]
fn simulation_matches_birth_death_oracle() {
    let dir = TempDir::new().unwrap();
    let edges = complete_graph(dir.path(), 10);
    let out = dir.path().join("sim");
    ok(&["-o", s(&out), "simulate", "--edges", s(&edges), "--default-curing", "4", "--window", "10000"]);
    let oracle = birth_death_qsd_mean(10, 1.0, 4.0);
    let mean = json(out.join("simulation.json"))["mean"].as_f64().unwrap();
    assert!((mean - oracle).abs() < 0.05 * oracle, "simulated {mean}, oracle {oracle}");
}

#[test]
fn replicas_are_deterministic() {
    let dir = TempDir::new().unwrap();
    let edges = complete_graph(dir.path(), 10);
    let runs: Vec<PathBuf> = (0..2).map(|i| dir.path().join(format!("sim{i}"))).collect();
    for r in &runs {
        ok(&[
            "-o",
            s(r),
            "--seed",
            "9",
            "simulate",
            "--edges",
            s(&edges),
            "--default-curing",
            "4",
            "--window",
            "500",
            "--replicas",
            "4",
        ]);
    }
    assert_same_artifacts(&runs[0], &runs[1]);
    let summary = json(runs[0].join("simulation.json"));
    assert!((summary["window_time"].as_f64().unwrap() - 2000.0).abs() < 1e-6);
}

#[test]
fn wth_rates_of_an_exact_factorization_reproduce_the_network() {
    // K_10 factorizes exactly as the all-ones rank-1 pair, so both simulations target the same chain.
    let dir = TempDir::new().unwrap();
    let edges = complete_graph(dir.path(), 10);
    let f = dir.path().join("factors");
    ok(&["-o", s(&f), "factorize", "--edges", s(&edges), "--default-curing", "4", "--k", "1", "--lambda", "0"]);
    let out = dir.path().join("sim");
    ok(&[
        "-o",
        s(&out),
        "simulate",
        "--edges",
        s(&edges),
        "--default-curing",
        "4",
        "--window",
        "10000",
        "--wth",
        s(&f),
    ]);
    let oracle = birth_death_qsd_mean(10, 1.0, 4.0);
    let mean = json(out.join("simulation.json"))["mean"].as_f64().unwrap();
    assert!((mean - oracle).abs() < 0.05 * oracle, "simulated {mean}, oracle {oracle}");
}

#[test]
fn event_log_has_whole_records() {
    let dir = TempDir::new().unwrap();
    let edges = complete_graph(dir.path(), 10);
    let out = dir.path().join("sim");
    let log = dir.path().join("events.bin");
    ok(&[
        "-o",
        s(&out),
        "simulate",
        "--edges",
        s(&edges),
        "--default-curing",
        "4",
        "--window",
        "10",
        "--log-horizon",
        "5",
        "--events",
        s(&log),
    ]);
    let len = fs::metadata(&log).unwrap().len();
    assert!(len > 0 && len % 13 == 0, "{len}");
}

#[test]
fn compare_without_simulation_is_partial() {
    let dir = TempDir::new().unwrap();
    let edges = complete_graph(dir.path(), 10);
    let out = dir.path().join("run");
    ok(&[
        "-o",
        s(&out),
        "predict",
        "--edges",
        s(&edges),
        "--default-curing",
        "4",
        "--k",
        "1",
        "--r",
        "1",
        "--outliers",
        "0",
    ]);
    ok(&["-o", s(&out), "compare"]);
    let rep = json(out.join("comparison.json"));
    assert!(rep["rows"][0]["mean"].is_null());
    assert!((rep["rows"][1]["mean"].as_f64().unwrap() - 6.0).abs() < 1e-8);
    assert!(rep["node_mae"].is_null());
    let cdf = fs::read_to_string(out.join("cdf.csv")).unwrap();
    assert_eq!(cdf.lines().count(), 12);
    assert!(cdf.lines().nth(1).unwrap().starts_with("0,,"));
    let md = String::from_utf8(ok(&["-o", s(&out), "report"]).stdout).unwrap();
    assert!(md.contains("| Expectation | – | 6.0 | – |"), "{md}");
}

#[test]
fn compare_joins_persisted_simulation() {
    let dir = TempDir::new().unwrap();
    let edges = complete_graph(dir.path(), 10);
    let out = dir.path().join("run");
    let base = ["-o", s(&out)];
    ok(&[
        &base[..],
        &["predict", "--edges", s(&edges), "--default-curing", "4", "--k", "1", "--r", "1", "--outliers", "0"],
    ]
    .concat());
    ok(&[&base[..], &["simulate", "--edges", s(&edges), "--default-curing", "4", "--window", "2000"]].concat());
    ok(&[&base[..], &["compare", "--simulation", s(&out)]].concat());
    let first = fs::read(out.join("comparison.json")).unwrap();
    // Re-running only reads artifacts, so the output does not change.
    ok(&[&base[..], &["compare", "--simulation", s(&out)]].concat());
    assert_eq!(first, fs::read(out.join("comparison.json")).unwrap());
    let rep = json(out.join("comparison.json"));
    let sim_mean = rep["rows"][0]["mean"].as_f64().unwrap();
    assert_eq!(Some(sim_mean), json(out.join("simulation.json"))["mean"].as_f64());
    let oracle = birth_death_qsd_mean(10, 1.0, 4.0);
    assert!((sim_mean - oracle).abs() < 0.05 * oracle, "simulated {sim_mean}, oracle {oracle}");
    assert!(rep["rows"][1]["ks"].as_f64().unwrap() > 0.0);
    let nodes = fs::read_to_string(out.join("nodes.csv")).unwrap();
    assert_eq!(nodes.lines().count(), 11);
}

#[test]
fn config_file_with_flag_override_is_persisted() {
    let dir = TempDir::new().unwrap();
    let edges = complete_graph(dir.path(), 10);
    let cfg = dir.path().join("run.toml");
    let out = dir.path().join("run");
    fs::write(
        &cfg,
        format!(
            "seed = 7\noutput = \"{}\"\n[input]\nedges = \"{}\"\ndefault_curing = 4.0\n[factor]\nk = 1\n[cluster]\nr = 3\noutliers = 0\n",
            s(&out),
            s(&edges)
        ),
    )
    .unwrap();
    ok(&["--config", s(&cfg), "predict", "--r", "1"]);
    let resolved = fs::read_to_string(out.join("config.resolved.toml")).unwrap();
    assert!(resolved.contains("seed = 7"));
    assert!(resolved.contains("r = 1"), "{resolved}");
    assert_eq!(json(out.join("summary.json"))["r"], 1);

    // The resolved file reproduces the run on its own.
    let again = dir.path().join("again.toml");
    fs::write(&again, resolved.replace(s(&out), s(&dir.path().join("again")))).unwrap();
    ok(&["--config", s(&again), "predict"]);
    assert_eq!(
        fs::read(out.join("summary.json")).unwrap(),
        fs::read(dir.path().join("again").join("summary.json")).unwrap()
    );
}

#[test]
fn bad_config_and_missing_inputs_are_validation_errors() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "unknown_key = 1\n").unwrap();
    assert_eq!(clsis(&["--config", s(&cfg), "-o", s(dir.path()), "predict"]).status.code(), Some(2));
    let missing = dir.path().join("nope.csv");
    assert_eq!(clsis(&["-o", s(dir.path()), "predict", "--edges", s(&missing)]).status.code(), Some(2));
    assert_eq!(clsis(&["-o", s(dir.path()), "compare"]).status.code(), Some(2));
}
