use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn lcnflow(args: &[&str], out_root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lcnflow")).args(args).env("LCN_FLOW_OUT", out_root).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.display().to_string()
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

const SCALAR: &str = r#"{
    "architecture": {"d0": 1, "k": [1], "s": [1]},
    "loss": {"kind": "square"},
    "data": {"source": "inline", "x": [[1.0]], "y": [[2.0]]},
    "init": {"mode": "explicit", "filters": [[0.0]]}
}"#;

const TWO_LAYER: &str = r#"{
    "architecture": {"d0": 7, "k": [3, 2], "s": [1, 1]},
    "loss": {"kind": "pseudo_huber", "delta": 0.5},
    "data": {"source": "synthetic", "seed": 4, "m": 9},
    "init": {"seed": 3},
    "integrator": {"sample_every": 10}
}"#;

#[test]
fn scalar_run_and_verify() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "scalar.json", SCALAR);
    let out = lcnflow(&["run", &config], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let dir = tmp.path().join("scalar");
    let s = summary(&dir);
    assert_eq!(s["status"], "converged");
    assert!((s["final_w"][0][0].as_f64().unwrap() - 2.0).abs() < 1e-4);
    assert_eq!(s["classification"]["class"], "global_min_certificate");

    let v = lcnflow(&["verify", dir.to_str().unwrap()], tmp.path());
    assert_eq!(v.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&v.stdout).contains("PASS"));

    let j = lcnflow(&["verify", dir.to_str().unwrap(), "--json"], tmp.path());
    let report: Value = serde_json::from_slice(&j.stdout).unwrap();
    assert_eq!(report["report"]["checks"].as_array().unwrap().len(), 4);
}

#[test]
fn runs_are_bitwise_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "two.json", TWO_LAYER);
    for out in ["a", "b"] {
        let o = lcnflow(&["run", &config, "--out", tmp.path().join(out).to_str().unwrap()], tmp.path());
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    }
    for file in ["trajectory.csv", "summary.json", "certificate.json"] {
        let a = fs::read(tmp.path().join("a").join(file)).unwrap();
        let b = fs::read(tmp.path().join("b").join(file)).unwrap();
        assert!(a == b, "{file} differs between identical runs");
    }
    let header = fs::read_to_string(tmp.path().join("a/trajectory.csv")).unwrap();
    assert_eq!(
        header.lines().next().unwrap(),
        "t,loss,grad_norm,delta_1_2,layer_norm_sq_1,layer_norm_sq_2,final_filter_l1"
    );
}

#[test]
fn rank_deficient_input_runs_uncertified() {
    let tmp = tempfile::tempdir().unwrap();
    let body = r#"{
        "architecture": {"d0": 3, "k": [2], "s": [1]},
        "loss": {"kind": "square"},
        "data": {"source": "inline", "x": [[1, 2, 3, 4], [2, 4, 6, 8], [0, 1, 0, 1]], "y": [[1, 0, 1, 0], [0, 1, 1, 0]]},
        "init": {"seed": 1}
    }"#;
    let config = write_config(tmp.path(), "rank.json", body);
    let out = lcnflow(&["run", &config], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let s = summary(&tmp.path().join("rank"));
    assert_eq!(s["certificate"], "unavailable (rank-deficient X)");
}

#[test]
fn loose_tolerance_fails_only_the_drift_check() {
    let tmp = tempfile::tempdir().unwrap();
    let body = r#"{
        "architecture": {"d0": 8, "k": [3, 3, 2], "s": [1, 1, 1]},
        "loss": {"kind": "square"},
        "data": {"source": "synthetic", "seed": 1, "m": 10},
        "init": {"seed": 2},
        "integrator": {"sample_every": 1}
    }"#;
    let config = write_config(tmp.path(), "loose.json", body);
    let out = lcnflow(&["run", &config, "--rel-tol", "1e-2", "--abs-tol", "1e-6", "--grad-tol", "1e-4"], tmp.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stdout));

    let dir = tmp.path().join("loose");
    let j = lcnflow(&["verify", dir.to_str().unwrap(), "--json"], tmp.path());
    assert_eq!(j.status.code(), Some(3));
    let report: Value = serde_json::from_slice(&j.stdout).unwrap();
    for check in report["report"]["checks"].as_array().unwrap() {
        let expected = if check["name"] == "balancedness" { "fail" } else { "pass" };
        assert_eq!(check["status"], expected, "{}", check["name"]);
    }
}

#[test]
fn budget_and_error_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "scalar.json", SCALAR);
    let out = lcnflow(&["run", &config, "--max-t", "0.1"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(summary(&tmp.path().join("scalar"))["status"], "max_time");

    let bad = write_config(tmp.path(), "bad.json", &SCALAR.replace("\"square\"", "\"lp\", \"p\": 3"));
    let out = lcnflow(&["run", &bad], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("even p"));

    let missing = lcnflow(&["verify", tmp.path().join("nowhere").to_str().unwrap()], tmp.path());
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("missing artifact"));
}

#[test]
fn loss_figure_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("fig.csv");
    let specs = r#"[{"kind": "log_cosh", "alpha": 1}, {"kind": "lp", "p": 2}, {"kind": "pseudo_huber", "delta": 1}]"#;
    let out = lcnflow(
        &["loss-figure", "--specs", specs, "--range", "-4", "4", "--step", "0.01", "--out", csv.to_str().unwrap()],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    let rows: Vec<Vec<f64>> =
        text.lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 801);
    let at = |t: f64| rows.iter().find(|r| (r[0] - t).abs() < 1e-9).unwrap().clone();
    assert_eq!(at(0.0)[1], 0.0);
    assert_eq!(at(4.0)[2], 8.0);
    assert!((at(4.0)[3] - 4.1231).abs() < 1e-4);
}

#[test]
fn batch_writes_one_directory_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "two.json", TWO_LAYER);
    let out = lcnflow(&["batch", &config, "--seeds", "4", "--jobs", "2"], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let root = tmp.path().join("two");
    let table = fs::read_to_string(root.join("batch_summary.csv")).unwrap();
    assert_eq!(table.lines().count(), 5);
    for seed in 3..7 {
        assert_eq!(summary(&root.join(format!("seed_{seed}")))["status"], "converged");
    }
}

#[test]
fn shipped_configs_converge() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let tmp = tempfile::tempdir().unwrap();
    for name in ["scalar", "teacher", "strided_log_cosh"] {
        let config = configs.join(format!("{name}.json"));
        let out = lcnflow(&["run", config.to_str().unwrap()], tmp.path());
        assert_eq!(out.status.code(), Some(0), "{name}: {}", String::from_utf8_lossy(&out.stdout));
    }
    let s = summary(&tmp.path().join("teacher"));
    assert_eq!(s["classification"]["class"], "global_min_certificate");

    let specs = configs.join("losses.json");
    let out = lcnflow(&["loss-figure", "--specs", specs.to_str().unwrap(), "--step", "0.5"], tmp.path());
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 18);
}
