use std::path::{Path, PathBuf};
use std::process::Command;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::Value;
use tempfile::TempDir;

struct Run {
    code: i32,
    summary: Value,
    stderr: String,
}

fn run(args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_fairpost"))
        .args(args)
        .output()
        .expect("binary runs");
    let stdout = String::from_utf8(out.stdout).unwrap();
    Run {
        code: out.status.code().unwrap(),
        summary: serde_json::from_str(&stdout).unwrap_or_else(|e| panic!("{e}: {stdout}")),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

fn ok(args: &[&str]) -> Value {
    let r = run(args);
    assert_eq!(r.code, 0, "{args:?}: {}", r.stderr);
    assert_eq!(r.summary["status"], "ok");
    r.summary
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_str().unwrap().to_string()
}

fn write(dir: &TempDir, name: &str, text: &str) -> String {
    let p = path(dir, name);
    std::fs::write(&p, text).unwrap();
    p
}

fn tightness(dir: &TempDir, p: &str, eps: &str) -> String {
    let prefix = path(dir, "tight");
    ok(&["synth", "--kind", "tightness", "--p", p, "--epsilon", eps, "--out", &prefix]);
    prefix
}

#[test]
fn synth_tightness_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = tightness(&dir, "0.45", "0.2");
    let meta: Value = serde_json::from_slice(&std::fs::read(format!("{prefix}.json")).unwrap()).unwrap();
    let row = meta["table"].as_array().unwrap().iter().find(|r| r["alpha"] == 0.1).unwrap();
    assert!((row["excess"].as_f64().unwrap() - 0.33333).abs() < 1e-5);
    assert!(Path::new(&format!("{prefix}.plugin.csv")).exists());
}

#[test]
fn synth_rejects_out_of_range_epsilon() {
    let dir = tempfile::tempdir().unwrap();
    let summary = path(&dir, "summary.json");
    let r = run(&[
        "synth", "--kind", "tightness", "--p", "0.45", "--epsilon", "0.95", "--out", &path(&dir, "t"), "--summary", &summary,
    ]);
    assert_eq!(r.code, 2);
    assert_eq!(r.summary["status"], "error");
    let written: Value = serde_json::from_slice(&std::fs::read(&summary).unwrap()).unwrap();
    assert_eq!(written, r.summary);
}

#[test]
fn synth_random_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let read = |prefix: &str| {
        ok(&["synth", "--kind", "random", "--seed", "0", "--n", "6", "--classes", "3", "--out", prefix]);
        (
            std::fs::read(format!("{prefix}.csv")).unwrap(),
            std::fs::read(format!("{prefix}.json")).unwrap(),
        )
    };
    let a = read(&path(&dir, "a"));
    let b = read(&path(&dir, "b"));
    assert_eq!(a.0, b.0);
    assert_eq!(std::fs::read_to_string(format!("{}.csv", path(&dir, "a"))).unwrap().lines().count(), 7);
}

#[test]
fn postprocess_on_the_two_atom_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = tightness(&dir, "0.25", "0");
    let scores = format!("{prefix}.csv");
    let params = path(&dir, "params.bin");
    let s = ok(&[
        "postprocess", "--scores", &scores, "--criterion", "sp", "--alpha", "0.1", "--sigma", "0", "--out", &params,
    ]);
    assert!((s["objective"].as_f64().unwrap() - 0.4).abs() < 1e-6);
    assert!(Path::new(&params).exists());

    let s = ok(&["postprocess", "--scores", &scores, "--alpha", "1", "--out", &params]);
    let w: Vec<f64> = s["w"].as_array().unwrap().iter().flat_map(|r| r.as_array().unwrap().clone()).map(|v| v.as_f64().unwrap()).collect();
    assert!(w.iter().all(|&v| v == 0.0), "{w:?}");
}

#[test]
fn postprocess_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = tightness(&dir, "0.3", "0.1");
    let scores = format!("{prefix}.csv");
    let fit = |name: &str| {
        let out = path(&dir, name);
        let s = ok(&["postprocess", "--scores", &scores, "--alpha", "0.05", "--seed", "3", "--out", &out]);
        (s["objective"].clone(), s["psi"].clone(), std::fs::read(out).unwrap())
    };
    assert_eq!(fit("a.bin"), fit("b.bin"));
}

#[test]
fn binary_equal_opportunity_rejects_three_classes() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = path(&dir, "r");
    ok(&["synth", "--kind", "random", "--classes", "3", "--groups", "2", "--n", "6", "--out", &prefix]);
    let r = run(&["postprocess", "--scores", &format!("{prefix}.csv"), "--criterion", "eopp", "--out", &path(&dir, "p.bin")]);
    assert_eq!(r.code, 2);
    assert_eq!(r.summary["status"], "error");
    assert!(r.summary["error"].as_str().unwrap().contains("equal opportunity"));
}

#[test]
fn custom_criterion_file() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = path(&dir, "r");
    ok(&["synth", "--kind", "random", "--classes", "2", "--groups", "3", "--n", "6", "--one-hot", "--out", &prefix]);
    let crit = write(&dir, "c.json", r#"{"num_classes": 2, "num_groups": 3, "constraints": [{"class": 1, "groups": [0, 2]}]}"#);
    let s = ok(&["postprocess", "--scores", &format!("{prefix}.csv"), "--criterion", &crit, "--sigma", "0", "--out", &path(&dir, "p.bin")]);
    assert_eq!(s["psi"].as_array().unwrap().len(), 2);

    let bad = write(&dir, "bad.json", r#"{"num_classes": 3, "num_groups": 3, "constraints": []}"#);
    let r = run(&["postprocess", "--scores", &format!("{prefix}.csv"), "--criterion", &bad, "--out", &path(&dir, "q.bin")]);
    assert_eq!(r.code, 2);
}

/// Every row predicts class 0 at zero risk, so the argmin classifier is constant.
fn constant_scores(dir: &TempDir, classes: usize) -> String {
    let mut text = (0..classes).map(|y| format!("r_{y}")).collect::<Vec<_>>().join(",") + ",g_0,g_1\n";
    for i in 0..6 {
        let r: Vec<String> = (0..classes).map(|y| if y == 0 { "0".into() } else { "1".into() }).collect();
        let g = if i % 2 == 0 { "1,0" } else { "0.3,0.7" };
        text += &format!("{},{g}\n", r.join(","));
    }
    write(dir, &format!("const{classes}.csv"), &text)
}

#[test]
fn evaluate_constant_classifier() {
    let dir = tempfile::tempdir().unwrap();
    let scores = constant_scores(&dir, 2);
    let params = path(&dir, "p.bin");
    ok(&["postprocess", "--scores", &scores, "--alpha", "1", "--sigma", "0", "--out", &params]);
    let s = ok(&["evaluate", "--params", &params, "--scores", &scores, "--metrics", "max,rms"]);
    assert_eq!(s["violation_max"], 0.0);
    assert_eq!(s["violation_rms"], 0.0);
    assert_eq!(s["risk"], 0.0);

    let s = ok(&["evaluate", "--params", &params, "--scores", &scores, "--metrics", "rms"]);
    assert!(s.get("violation_max").is_none());

    let r = run(&["evaluate", "--params", &params, "--scores", &constant_scores(&dir, 3)]);
    assert_eq!(r.code, 2, "{}", r.stderr);
}

#[test]
fn sweep_reproduces_the_analytic_curve() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = tightness(&dir, "0.25", "0");
    let out = path(&dir, "sweep");
    let s = ok(&[
        "sweep", "--scores", &format!("{prefix}.csv"), "--alphas", "0.01,1,0.5,0.2,0.1,0.05,0.02", "--sigma", "0", "--out", &out,
    ]);
    let rows = s["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 7);
    let alphas: Vec<f64> = rows.iter().map(|r| r["alpha"].as_f64().unwrap()).collect();
    assert!(alphas.windows(2).all(|w| w[0] > w[1]));
    for r in rows {
        let a = r["alpha"].as_f64().unwrap();
        let opt = 0.5 * (1.0 - a / 0.5).max(0.0);
        assert!((r["risk"].as_f64().unwrap() - opt).abs() < 1e-6, "{r}");
    }
    let csv = std::fs::read_to_string(format!("{out}.csv")).unwrap();
    assert!(csv.starts_with("alpha,risk,violation_max"));
    assert_eq!(csv.lines().count(), 8);
}

#[test]
fn sweep_with_true_groups() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = tightness(&dir, "0.45", "0.2");
    let truth = write(&dir, "g.csv", "a,b\n0.45,0.55\n0.55,0.45\n");
    let s = ok(&[
        "sweep", "--scores", &format!("{prefix}.plugin.csv"), "--truth-groups", &truth, "--alphas", "0.1", "--sigma", "0",
        "--out", &path(&dir, "s"),
    ]);
    let risk = s["rows"][0]["risk"].as_f64().unwrap();
    assert!((risk - 0.5 * (1.0 - 0.1 / 0.3)).abs() < 1e-6);
}

/// Four unit-variance clusters at (+-3, +-3): the x-sign is the attribute
/// and the y-sign the label.
fn clusters(dir: &TempDir, n: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut text = String::from("f1,f2,a,y\n");
    for i in 0..n {
        let (a, y) = (i % 2, (i / 2) % 2);
        let f1 = if a == 1 { 3.0 } else { -3.0 } + rng.sample::<f64, _>(StandardNormal);
        let f2 = if y == 1 { 3.0 } else { -3.0 } + rng.sample::<f64, _>(StandardNormal);
        text += &format!("{f1},{f2},{a},{y}\n");
    }
    write(dir, "clusters.csv", &text)
}

#[test]
fn fit_and_postprocess_from_a_model() {
    let dir = tempfile::tempdir().unwrap();
    let data = clusters(&dir, 800);
    let schema = write(&dir, "s.json", r#"{"label": "y", "attribute": "a", "features": ["f1", "f2"]}"#);
    let joint = path(&dir, "joint.json");
    let s = ok(&["fit", "--data", &data, "--schema", &schema, "--target", "joint", "--out", &joint]);
    assert!(s["train_accuracy"].as_f64().unwrap() >= 0.95, "{s}");
    assert_eq!(s["classes"], 4);

    let params = path(&dir, "p.bin");
    for extra in [&["--aware"][..], &["--blind"], &["--blind", "--calibrate", "isotonic"], &["--aware", "--calibrate", "platt"]] {
        for criterion in ["sp", "eo"] {
            let mut args = vec![
                "postprocess", "--model", &joint, "--data", &data, "--schema", &schema, "--criterion", criterion, "--alpha", "0.05",
                "--out", &params,
            ];
            args.extend_from_slice(extra);
            let s = ok(&args);
            assert!(s["objective"].as_f64().unwrap().is_finite());
        }
    }

    let label_model = path(&dir, "y.json");
    ok(&["fit", "--data", &data, "--schema", &schema, "--target", "y", "--out", &label_model]);
    let s = ok(&["postprocess", "--model", &label_model, "--data", &data, "--schema", &schema, "--out", &params]);
    assert_eq!(s["input"]["n"], 800);
    // Blind parity needs attribute predictions.
    let r = run(&["postprocess", "--model", &label_model, "--data", &data, "--schema", &schema, "--blind", "--out", &params]);
    assert_eq!(r.code, 2);
    let attr_model = path(&dir, "a.json");
    ok(&["fit", "--data", &data, "--schema", &schema, "--target", "a", "--out", &attr_model]);
    ok(&[
        "postprocess", "--model", &label_model, "--attr-model", &attr_model, "--data", &data, "--schema", &schema, "--blind",
        "--out", &params,
    ]);
}

#[test]
fn fit_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    let data = clusters(&dir, 40);
    let missing: PathBuf = dir.path().join("nope.json");
    let r = run(&["fit", "--data", &data, "--schema", missing.to_str().unwrap(), "--target", "y", "--out", &path(&dir, "m.json")]);
    assert_eq!(r.code, 2);
    assert!(r.summary["error"].as_str().unwrap().contains(missing.to_str().unwrap()));

    let schema = write(&dir, "s.json", r#"{"attribute": "a", "features": ["f1", "f2"]}"#);
    let r = run(&["fit", "--data", &data, "--schema", &schema, "--target", "y", "--out", &path(&dir, "m.json")]);
    assert_eq!(r.code, 2);
    assert_eq!(r.summary["status"], "error");
}
