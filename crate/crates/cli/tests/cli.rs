use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use serde_json::Value;

const SMOKE: &str = r#"{
  "data": {"systems": ["lorenz", "logistic"], "n_samples": 500},
  "model": {"kind": "asaerc", "n_fix": 16, "n": 16},
  "train": {"max_epochs": 20, "batch_size": 128},
  "sweep": {
    "kinds": ["linear", "asaerc"],
    "n_fix": [16], "n": [8, 16], "seeds": [0, 1],
    "train": {"max_epochs": 3, "batch_size": 128}
  },
  "output": {"dir": "run"}
}"#;

fn asaerc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_asaerc"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = asaerc(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest(root: &Path) -> Value {
    serde_json::from_slice(&fs::read(root.join("run_manifest.json")).unwrap()).unwrap()
}

fn hits(m: &Value) -> Vec<(String, bool)> {
    m["stages"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| (s["stage"].as_str().unwrap().to_string(), s["cache_hit"].as_bool().unwrap()))
        .collect()
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn smoke_pipeline_runs_and_then_hits_every_cache() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMOKE);
    let start = Instant::now();
    ok(&["--config", &config, "pipeline"]);
    assert!(start.elapsed() < Duration::from_secs(120));

    let root = dir.path().join("run");
    let first = manifest(&root);
    assert!(hits(&first).iter().all(|(_, hit)| !hit));
    let stages: Vec<String> = hits(&first).into_iter().map(|(s, _)| s).collect();
    assert_eq!(stages, ["data", "reservoir", "train", "evaluate", "analyze"]);
    for f in [
        "data/manifest.json",
        "reservoir/snapshots.asrc",
        "models/asaerc/model.asmd",
        "models/asaerc/history.csv",
        "models/asaerc/evaluation.json",
        "analysis/asaerc/correlations_products.csv",
        "analysis/asaerc/queries.csv",
    ] {
        assert!(root.join(f).exists(), "{f}");
    }
    let history = fs::read_to_string(root.join("models/asaerc/history.csv")).unwrap();
    assert!(history.starts_with("epoch,train_mse,test_mse,lr,seconds"));
    assert_eq!(history.lines().count(), 21);

    ok(&["--config", &config, "pipeline"]);
    let second = manifest(&root);
    assert!(hits(&second).iter().all(|(_, hit)| *hit), "{:?}", hits(&second));
    assert_eq!(first["config_hash"], second["config_hash"]);
}

#[test]
fn changed_nu_reruns_the_reservoir_but_not_the_data() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMOKE);
    ok(&["--config", &config, "pipeline"]);
    let changed = SMOKE.replace(r#""output""#, r#""reservoir": {"nu": 0.1}, "output""#);
    let config = write_config(dir.path(), &changed);
    ok(&["--config", &config, "pipeline"]);
    let m = manifest(&dir.path().join("run"));
    assert_eq!(
        hits(&m),
        [
            ("data".to_string(), true),
            ("reservoir".to_string(), false),
            ("train".to_string(), false),
            ("evaluate".to_string(), false),
            ("analyze".to_string(), false),
        ]
    );
}

#[test]
fn fixed_seed_runs_are_bit_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let config = write_config(d.path(), SMOKE);
        ok(&["--config", &config, "--seed", "5", "pipeline"]);
    }
    let (ra, rb) = (a.path().join("run"), b.path().join("run"));
    let list = files(&ra);
    assert_eq!(list, files(&rb));
    for f in list {
        let name = f.to_str().unwrap();
        if name == "run_manifest.json" || name.ends_with("history.csv") {
            continue;
        }
        assert!(fs::read(ra.join(&f)).unwrap() == fs::read(rb.join(&f)).unwrap(), "{name} differs");
    }
    // History rows match except for wall-clock seconds.
    let strip = |p: PathBuf| -> Vec<String> {
        fs::read_to_string(p)
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect()
    };
    let h = "models/asaerc/history.csv";
    assert_eq!(strip(ra.join(h)), strip(rb.join(h)));
}

#[test]
fn stages_run_one_at_a_time() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMOKE);
    let d = dir.path();
    let data = d.join("data");
    let manifest = data.join("manifest.json");
    let store = d.join("snapshots.asrc");
    let ck = d.join("models/linear.asmd");

    ok(&["--config", &config, "gen-data", "--out", s(&data)]);
    ok(&["--config", &config, "run-reservoir", "--data", s(&manifest), "--out", s(&store)]);
    ok(&[
        "--config", &config, "train", "--model", "linear", "--data", s(&manifest), "--store", s(&store), "--out",
        s(&ck),
    ]);
    assert!(d.join("models/history.csv").exists());

    let out = ok(&["--config", &config, "evaluate", "--checkpoint", s(&ck), "--data", s(&manifest), "--store", s(&store)]);
    let eval: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(eval["model"], "linear");
    assert_eq!(eval["parameters"], 16);
    assert!(eval["test"]["mse"].as_f64().unwrap().is_finite());

    let corr = d.join("corr");
    ok(&[
        "--config", &config, "analyze", "correlations", "--checkpoint", s(&ck), "--data", s(&manifest), "--store",
        s(&store), "--out", s(&corr),
    ]);
    let weights = fs::read_to_string(corr.join("correlations_weights.csv")).unwrap();
    assert!(weights.starts_with("bin_left,bin_right,count"));
    let summary: Value = serde_json::from_slice(&fs::read(corr.join("correlations.json")).unwrap()).unwrap();
    assert!(summary["report"]["conventions"].is_object());

    let sweep = d.join("sweep");
    ok(&[
        "--config", &config, "--threads", "2", "sweep", "--data", s(&manifest), "--store", s(&store), "--out",
        s(&sweep),
    ]);
    let rows = fs::read_to_string(sweep.join("rows.csv")).unwrap();
    // linear: one cell per n_fix; asaerc: 1 x 2 cells; two seeds each.
    assert_eq!(rows.lines().count(), 1 + (1 + 2) * 2);
    assert!(sweep.join("summary.csv").exists());
    assert!(sweep.join("systems.csv").exists());
}

#[test]
fn standalone_queries_match_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMOKE);
    ok(&["--config", &config, "pipeline"]);
    let root = dir.path().join("run");
    let manifest = root.join("data/manifest.json");
    let store = root.join("reservoir/snapshots.asrc");
    let ck = root.join("models/asaerc/model.asmd");
    let out = dir.path().join("q");
    ok(&[
        "--config", &config, "analyze", "queries", "--checkpoint", s(&ck), "--data", s(&manifest), "--store",
        s(&store), "--out", s(&out),
    ]);
    let csv = fs::read_to_string(out.join("queries.csv")).unwrap();
    assert!(csv.starts_with("x_left,x_right,y_left,y_right,mass"));
    assert_eq!(
        fs::read(out.join("queries.csv")).unwrap(),
        fs::read(root.join("analysis/asaerc/queries.csv")).unwrap()
    );

    // Fixed-lattice models have no queries to histogram.
    let linear = dir.path().join("linear.asmd");
    ok(&[
        "--config", &config, "train", "--model", "linear", "--data", s(&manifest), "--store", s(&store), "--out",
        s(&linear),
    ]);
    let failed = asaerc(&[
        "--config", &config, "analyze", "queries", "--checkpoint", s(&linear), "--data", s(&manifest), "--store",
        s(&store), "--out", s(&out),
    ]);
    assert_eq!(failed.status.code(), Some(8));
}

#[test]
fn failures_exit_with_the_stage_code() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let code = |args: &[&str]| asaerc(args).status.code().unwrap();

    assert_eq!(code(&["no-such-command"]), 2);
    let bad = write_config(d, r#"{"train": {"lr": 0.1, "momentum": 0.9}}"#);
    assert_eq!(code(&["--config", &bad, "pipeline"]), 3);
    let bad = write_config(d, r#"{"data": {"test_fraction": 2.0}}"#);
    assert_eq!(code(&["--config", &bad, "pipeline"]), 3);

    let config = write_config(d, SMOKE);
    let missing = d.join("nothing/manifest.json");
    assert_eq!(code(&["--config", &config, "run-reservoir", "--data", s(&missing), "--out", "x"]), 4);

    let data = d.join("data");
    let manifest = data.join("manifest.json");
    ok(&["--config", &config, "gen-data", "--out", s(&data)]);
    let ck = d.join("m.asmd");
    // A reservoir model without a store.
    assert_eq!(
        code(&["--config", &config, "train", "--model", "aerc", "--data", s(&manifest), "--out", s(&ck)]),
        6
    );

    // A checkpoint evaluated against a store it was not trained on.
    let store_a = d.join("a.asrc");
    let store_b = d.join("b.asrc");
    ok(&["--config", &config, "run-reservoir", "--data", s(&manifest), "--out", s(&store_a)]);
    let other = write_config(d, &SMOKE.replace(r#""output""#, r#""reservoir": {"nu": 0.2}, "output""#));
    ok(&["--config", &other, "run-reservoir", "--data", s(&manifest), "--out", s(&store_b)]);
    ok(&["--config", &config, "train", "--model", "linear", "--data", s(&manifest), "--store", s(&store_a), "--out", s(&ck)]);
    let out = asaerc(&["--config", &config, "evaluate", "--checkpoint", s(&ck), "--data", s(&manifest), "--store", s(&store_b)]);
    assert_eq!(out.status.code(), Some(7));
    assert!(String::from_utf8_lossy(&out.stderr).contains("hash mismatch"));
}

#[test]
fn schema_describes_the_config() {
    let out = ok(&["schema"]);
    let schema: Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in ["seed", "data", "reservoir", "model", "train", "analysis", "sweep", "output"] {
        assert!(schema["properties"][key].is_object(), "{key}");
    }
    let out = ok(&["show-config", "--seed", "3"]);
    let config: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(config["seed"], 3);
    assert_eq!(config["model"]["hidden"], 128);
}
