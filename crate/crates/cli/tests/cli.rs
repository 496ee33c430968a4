use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gfdrift::{Activation, Generator};
use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gfdrift"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn gfdrift")
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn csv_rows(p: &Path) -> Vec<Vec<f64>> {
    std::fs::read_to_string(p)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

fn swiss_roll_flow(steps: usize) -> Value {
    json!({
        "seed": 1,
        "dataset": { "kind": "swiss_roll", "n": 128, "noise": 0.1, "seed": 0 },
        "kernel": { "family": "gaussian", "h": 0.5 },
        "divergence": { "kind": "forward_kl" },
        "flow": {
            "dt": 0.02,
            "steps": steps,
            "snapshot_every": 50,
            "initial": { "kind": "gaussian", "n": 128, "mean": [0.0, 0.0], "std": 1.5 },
            "energy": { "estimator": "grid", "resolution": 64, "bounds": [[-6.0, 6.0], [-6.0, 6.0]] }
        }
    })
}

fn small_train(iterations: usize, lr: f64, optimizer: &str) -> Value {
    json!({
        "seed": 7,
        "dataset": { "kind": "two_gaussians", "n": 256, "separation": 4.0, "sigma": 0.5, "seed": 0 },
        "kernel": { "family": "gaussian", "h": 0.5 },
        "divergence": { "kind": "forward_kl" },
        "train": {
            "layers": [2, 8, 2],
            "batch_size": 32,
            "iterations": iterations,
            "learning_rate": lr,
            "optimizer": { "kind": optimizer },
            "metric_every": 10,
            "holdout": 64
        }
    })
}

#[test]
fn verify_default_passes_and_writes_manifest() {
    let t = tempfile::tempdir().unwrap();
    let out = t.path().join("v");
    let o = run(&["verify", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(&out.join("verify.json"));
    assert_eq!(report["all_passed"], json!(true));
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["files"], json!(["verify.json"]));
    assert!(manifest["wall_clock_seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn verify_laplace_reports_not_applicable() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(
        t.path(),
        "c.json",
        &json!({ "verify": { "kernels": [{ "family": "laplace", "h": 1.0, "dim": 2 }], "instances": 5, "bound_pairs": 100 } }),
    );
    let out = t.path().join("v");
    let o = run(&["verify", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let report = read_json(&out.join("verify.json"));
    let eq = report["checks"].as_array().unwrap().iter().find(|c| c["check"] == "core_equivalence").unwrap();
    assert_eq!(eq["status"], json!("not applicable: K4 fails"));
}

#[test]
fn malformed_and_invalid_configs_exit_2() {
    let t = tempfile::tempdir().unwrap();
    let bad = t.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    let out = t.path().join("o");
    assert_eq!(code(&run(&["flow", "--config", bad.to_str().unwrap(), "--out", out.to_str().unwrap()])), 2);

    let kind = write_config(t.path(), "kind.json", &json!({ "dataset": { "kind": "spiral", "n": 4, "seed": 0 } }));
    assert_eq!(code(&run(&["gen-data", "--config", kind.to_str().unwrap(), "--out", out.to_str().unwrap()])), 2);

    let typo = write_config(t.path(), "typo.json", &json!({ "sed": 3 }));
    assert_eq!(code(&run(&["verify", "--config", typo.to_str().unwrap(), "--out", out.to_str().unwrap()])), 2);

    assert_eq!(code(&run(&["flow", "--out", out.to_str().unwrap()])), 2);
}

#[test]
fn missing_output_parent_exits_2() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(t.path(), "c.json", &json!({ "dataset": { "kind": "swiss_roll", "n": 8, "noise": 0.1, "seed": 0 } }));
    let out = t.path().join("missing").join("run");
    let o = run(&["gen-data", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(!out.exists());
}

#[test]
fn flow_with_zero_steps_writes_a_single_frame() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(t.path(), "c.json", &swiss_roll_flow(0));
    let out = t.path().join("f");
    let o = run(&["flow", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("frame_0.csv").exists());
    assert!(!out.join("frame_1.csv").exists());
    assert_eq!(csv_rows(&out.join("frames.csv")), vec![vec![0.0, 0.0]]);
    assert_eq!(csv_rows(&out.join("energy.csv")).len(), 1);
}

#[test]
fn swiss_roll_flow_lowers_the_energy_and_lists_its_files() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(t.path(), "c.json", &swiss_roll_flow(200));
    let out = t.path().join("f");
    let o = run(&["flow", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let energy = csv_rows(&out.join("energy.csv"));
    let (first, last) = (energy.first().unwrap()[1], energy.last().unwrap()[1]);
    assert!(last < first, "energy {first} -> {last}");

    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["seed"], json!(1));
    assert_eq!(manifest["config"]["flow"]["steps"], json!(200));
    let files: Vec<String> = manifest["files"].as_array().unwrap().iter().map(|f| f.as_str().unwrap().to_string()).collect();
    for k in 0..5 {
        assert!(files.contains(&format!("frame_{k}.csv")), "{files:?}");
    }
    for f in &files {
        assert!(out.join(f).exists(), "{f}");
    }
    assert_eq!(csv_rows(&out.join("frames.csv")).last().unwrap(), &vec![4.0, 200.0]);
}

#[test]
fn sphere_flow_keeps_unit_norm() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(
        t.path(),
        "c.json",
        &json!({
            "seed": 4,
            "dataset": { "kind": "vmf_mixture", "n": 64, "centers": [[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]], "kappa": 20.0, "seed": 0 },
            "kernel": { "family": "vmf", "kappa": 5.0 },
            "divergence": { "kind": "forward_kl" },
            "flow": { "dt": 0.05, "steps": 100, "snapshot_every": 100, "initial": { "kind": "uniform_sphere", "n": 64, "dim": 3 } }
        }),
    );
    let out = t.path().join("f");
    let o = run(&["flow", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for row in csv_rows(&out.join("frame_1.csv")) {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12, "norm {n}");
    }
}

#[test]
fn laplace_flow_at_a_data_point_exits_1_unless_the_cusp_is_zeroed() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data.csv");
    let start = t.path().join("start.csv");
    std::fs::write(&data, "x0,x1\n0.0,0.0\n1.0,0.5\n-1.0,0.25\n").unwrap();
    std::fs::write(&start, "x0,x1\n1.0,0.5\n0.3,0.3\n").unwrap();
    let mut cfg = json!({
        "ensembles": { "data": data, "generated": start },
        "kernel": { "family": "laplace", "h": 0.5 },
        "divergence": { "kind": "forward_kl" },
        "flow": { "dt": 0.01, "steps": 3 }
    });
    let path = write_config(t.path(), "c.json", &cfg);
    let o = run(&["flow", "--config", path.to_str().unwrap(), "--out", t.path().join("a").to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("step"));

    cfg["flow"]["zero_at_cusp"] = json!(true);
    let path = write_config(t.path(), "c.json", &cfg);
    let o = run(&["flow", "--config", path.to_str().unwrap(), "--out", t.path().join("b").to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn train_with_zero_iterations_saves_the_initial_generator() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(t.path(), "c.json", &small_train(0, 1e-3, "adam"));
    let out = t.path().join("t");
    let o = run(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let saved = Generator::<f64>::load_json(&out.join("checkpoint.json")).unwrap();
    let init = Generator::<f64>::new(&[2, 8, 2], Activation::Tanh, 7).unwrap();
    assert_eq!(saved, init);
    assert_eq!(std::fs::read_to_string(out.join("loss.csv")).unwrap(), "iteration,loss\n");
}

#[test]
fn train_writes_loss_and_metric_series() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(t.path(), "c.json", &small_train(20, 1e-2, "adam"));
    let out = t.path().join("t");
    let o = run(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(csv_rows(&out.join("loss.csv")).len(), 20);
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let steps: Vec<&str> = metrics.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(steps, ["0", "10", "20"]);
    assert!(metrics.lines().skip(1).all(|l| l.contains(",mmd2_holdout,")));
}

#[test]
fn divergent_training_exits_1_with_the_iteration() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(t.path(), "c.json", &small_train(50, 1e6, "sgd"));
    let o = run(&["train", "--config", cfg.to_str().unwrap(), "--out", t.path().join("t").to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("iteration"));
}

#[test]
fn train_threshold_failure_exits_1_after_writing_outputs() {
    let t = tempfile::tempdir().unwrap();
    let mut c = small_train(1, 1e-3, "adam");
    c["train"]["mmd_threshold"] = json!(1e-12);
    let cfg = write_config(t.path(), "c.json", &c);
    let out = t.path().join("t");
    assert_eq!(code(&run(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])), 1);
    assert!(out.join("manifest.json").exists());
    assert!(out.join("checkpoint.json").exists());
}

#[test]
fn gen_data_is_byte_identical_per_seed() {
    let t = tempfile::tempdir().unwrap();
    let cfg = write_config(
        t.path(),
        "c.json",
        &json!({ "dataset": { "kind": "gaussian_ring", "n": 200, "modes": 8, "radius": 4.0, "sigma": 0.15, "seed": 3 } }),
    );
    let gen = |name: &str, seed: Option<&str>| {
        let out = t.path().join(name);
        let mut args = vec!["gen-data", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
        if let Some(s) = seed {
            args.extend(["--seed", s]);
        }
        assert_eq!(code(&run(&args)), 0);
        std::fs::read(out.join("data.csv")).unwrap()
    };
    let a = gen("a", None);
    assert_eq!(a, gen("b", None));
    assert_eq!(a, gen("c", Some("3")));
    assert_ne!(a, gen("d", Some("4")));
    let info = read_json(&t.path().join("a").join("dataset.json"));
    assert_eq!(info["mode_centers"].as_array().unwrap().len(), 8);
}

#[test]
fn mmd_of_an_ensemble_with_itself_is_zero() {
    let t = tempfile::tempdir().unwrap();
    let a = t.path().join("a.csv");
    let b = t.path().join("b.csv");
    std::fs::write(&a, "x0,x1\n0.0,0.0\n1.0,1.0\n").unwrap();
    std::fs::write(&b, "x0,x1\n3.0,0.0\n").unwrap();
    let o = run(&["mmd", a.to_str().unwrap(), a.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim().parse::<f64>().unwrap(), 0.0);
    let o = run(&["mmd", a.to_str().unwrap(), b.to_str().unwrap(), "--bandwidth", "0.5"]);
    assert!(String::from_utf8_lossy(&o.stdout).trim().parse::<f64>().unwrap() > 0.0);
}
