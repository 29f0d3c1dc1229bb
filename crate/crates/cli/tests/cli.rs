use std::path::Path;
use std::process::{Command, Output};

use gram_edge::model::{NoiseModel, ProfileNoise};
use gram_edge::rng::stream;
use gram_edge::{io, Setting, VarianceProfile};
use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gram-edge"))
        .args(args)
        .env_remove("GRAM_EDGE_THREADS")
        .output()
        .expect("binary runs")
}

fn json_of(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "status {:?}, stderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn write_data(
    path: &Path,
    p: usize,
    n: usize,
    seed: u64,
    spikes: &[f64],
    setting: Option<Setting>,
) {
    let model: Box<dyn NoiseModel> = match setting {
        Some(s) => s.noise_model(p, n, seed).unwrap(),
        None => Box::new(ProfileNoise::new(VarianceProfile::white(p, n).unwrap())),
    };
    let mut y = model.sample(&mut stream(seed, 0));
    for (i, d) in spikes.iter().enumerate() {
        y[(i, i)] += d;
    }
    io::write_matrix(path, &y).unwrap();
}

#[test]
fn invalid_arguments_exit_with_two() {
    for args in [
        vec!["critical-values", "--p", "20", "--n", "40", "--reps", "0"],
        vec!["critical-values", "--p", "20"],
        vec!["no-such-command"],
        vec!["simulate", "--setting", "IV", "--reps", "10"],
        vec!["freeconv-edge", "--d", "zeros", "--p", "10", "--cn", "2"],
        vec!["--threads", "0", "freeconv-edge", "--p", "10"],
    ] {
        let out = run(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(out.stdout.is_empty(), "{args:?}");
    }
}

#[test]
fn malformed_data_names_the_row() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "1,2,3\n4,5,6\n7,8\n").unwrap();
    let out = run(&["detect", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("row 3"), "{msg}");

    std::fs::write(&path, "1,2,3\n4,x,6\n").unwrap();
    let out = run(&["detect", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 2"));

    let out = run(&["detect", dir.path().join("missing.csv").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn critical_values_are_reproducible() {
    let args = [
        "critical-values",
        "--p",
        "20",
        "--n",
        "40",
        "--k-max",
        "3",
        "--reps",
        "300",
        "--seed",
        "5",
    ];
    let a = run(&args);
    let b = run(&args);
    let doc = json_of(&a);
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(doc["schema"], 1);
    assert_eq!(doc["metadata"]["seed"], 5);
    assert_eq!(doc["metadata"]["command"], "critical-values");
    assert_eq!(doc["result"]["entries"].as_array().unwrap().len(), 6);

    let c = run(&["--threads", "1"]
        .iter()
        .chain(&args)
        .copied()
        .collect::<Vec<_>>());
    assert_eq!(json_of(&c)["result"], doc["result"]);
}

#[test]
fn freeconv_zero_spectrum_edge() {
    let doc = json_of(&run(&[
        "freeconv-edge",
        "--d",
        "zeros",
        "--p",
        "500",
        "--cn",
        "1",
        "--t",
        "1",
    ]));
    let lam = doc["result"]["edge"]["lambda_plus_t"].as_f64().unwrap();
    assert!((lam - 4.0).abs() < 1e-6, "{lam}");
}

#[test]
fn dyson_constant_profile() {
    let doc = json_of(&run(&[
        "dyson-edge",
        "--profile",
        "constant",
        "--p",
        "500",
        "--n",
        "500",
    ]));
    let varpi = doc["result"]["varpi"].as_f64().unwrap();
    let lam = doc["result"]["lambda_plus"].as_f64().unwrap();
    assert!((varpi - 0.25).abs() < 0.005, "{varpi}");
    assert!((lam - 4.0).abs() < 1e-4, "{lam}");
}

fn r_hats(doc: &Value) -> (u64, u64) {
    let e = &doc["result"]["estimates"];
    (
        e["T"]["r_hat"].as_u64().unwrap(),
        e["T_r0"]["r_hat"].as_u64().unwrap(),
    )
}

#[test]
fn detect_pure_noise_and_strong_signals() {
    let dir = tempfile::tempdir().unwrap();
    let mut zeros = 0;
    for seed in 0..5 {
        let path = dir.path().join(format!("null{seed}.csv"));
        write_data(&path, 100, 200, seed, &[], None);
        let (t, tr) = r_hats(&json_of(&run(&["detect", path.to_str().unwrap()])));
        zeros += (t == 0) as usize + (tr == 0) as usize;
    }
    assert!(zeros >= 7, "{zeros} of 10 estimates were zero");

    let path = dir.path().join("spiked.bin");
    write_data(&path, 100, 200, 9, &[100.0, 100.0], Some(Setting::I));
    let out = run(&[
        "detect",
        path.to_str().unwrap(),
        "--trace-csv",
        dir.path().join("trace.csv").to_str().unwrap(),
    ]);
    assert_eq!(r_hats(&json_of(&out)), (2, 2));
    let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(trace.starts_with("r0,statistic,critical,reject\n"));

    let path = dir.path().join("tall.bin");
    write_data(&path, 400, 200, 3, &[100.0], Some(Setting::III));
    let doc = json_of(&run(&["detect", path.to_str().unwrap()]));
    assert_eq!(doc["result"]["p"], 400);
    assert_eq!(r_hats(&doc), (1, 1));
}

#[test]
fn detect_without_table_entry_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("small.csv");
    write_data(&path, 30, 40, 1, &[], None);
    let out = run(&["detect", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_with_saved_table() {
    let dir = tempfile::tempdir().unwrap();
    let table = dir.path().join("table.json");
    let out = run(&[
        "critical-values",
        "--p",
        "40",
        "--n",
        "80",
        "--reps",
        "400",
        "--out",
        table.to_str().unwrap(),
    ]);
    json_of(&out);
    let csv = dir.path().join("null.csv");
    let doc = json_of(&run(&[
        "simulate",
        "--setting",
        "III",
        "--n",
        "80",
        "--cn",
        "0.5",
        "--reps",
        "200",
        "--table",
        table.to_str().unwrap(),
        "--csv",
        csv.to_str().unwrap(),
    ]));
    let rate = doc["result"]["rejection_rate"]["T_r0"].as_f64().unwrap();
    assert!((0.0..=0.3).contains(&rate), "{rate}");
    let rows = std::fs::read_to_string(&csv).unwrap().lines().count();
    assert_eq!(rows, 202);
}

#[test]
fn dbm_path_writes_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("traj.csv");
    let doc = json_of(&run(&[
        "dbm",
        "--run",
        "path",
        "--p",
        "10",
        "--n",
        "20",
        "--t",
        "0.01",
        "--dt",
        "1e-4",
        "--trajectory-csv",
        traj.to_str().unwrap(),
        "--record-every",
        "10",
    ]));
    assert_eq!(doc["result"]["lambda"].as_array().unwrap().len(), 10);
    let text = std::fs::read_to_string(&traj).unwrap();
    assert!(text.starts_with("t,lambda1,"));
    assert!(text.lines().count() > 5);
}
