use std::ffi::OsString;
use std::path::{Path, PathBuf};

use fairpost::data::{synth_random, synth_tightness, Dataset, RandomOptions, Schema};
use fairpost::eval::{
    classifier_policy, policy_risk, policy_violation, save_sweep, sweep as run_sweep, EvalSet, RiskMode,
    SweepConfig, SweepMode,
};
use fairpost::models::{LogisticModel, ModelFile, Target, TrainConfig};
use fairpost::postprocess::{linear_post, load_params_file, params_json, save_params_file, PostOptions};
use fairpost::{Error, RandomizedClassifier, ScoreBundle};
use ndarray::{Array2, ArrayView2};
use serde_json::{json, Value};

use crate::inputs::{load_bundle, load_scores, noise, read_matrix};
use crate::{
    EvaluateArgs, Failure, FitArgs, Metric, Outcome, PostprocessArgs, SweepArgs, SweepModeArg, SynthArgs,
    SynthKind, TargetArg,
};

/// `<prefix><suffix>`, keeping any dots already in the prefix.
fn suffixed(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = OsString::from(prefix.as_os_str());
    s.push(suffix);
    PathBuf::from(s)
}

fn risk_mode(draws: usize) -> RiskMode {
    if draws == 0 {
        RiskMode::Analytic
    } else {
        RiskMode::MonteCarlo(draws)
    }
}

fn truth_matrix(path: Option<&Path>, rows: usize, cols: usize, what: &'static str) -> Result<Option<Array2<f64>>, Failure> {
    let Some(path) = path else { return Ok(None) };
    let m = read_matrix(path)?;
    if m.nrows() != rows {
        return Err(Error::DimensionMismatch { what: "truth rows", expected: rows, actual: m.nrows() }.into());
    }
    if m.ncols() != cols {
        return Err(Error::DimensionMismatch { what, expected: cols, actual: m.ncols() }.into());
    }
    Ok(Some(m))
}

pub fn fit(a: &FitArgs) -> Outcome {
    let schema = Schema::load(&a.schema)?;
    let data = Dataset::load_csv(&a.data, &schema)?;
    let missing = |what: &str| Failure::usage(format!("{}: schema has no {what} column", a.data.display()));
    let (target, labels, classes) = match a.target {
        TargetArg::Y => (Target::Y, data.labels.clone().ok_or_else(|| missing("label"))?, data.num_classes),
        TargetArg::A => (Target::A, data.attrs.clone().ok_or_else(|| missing("attribute"))?, data.num_attrs),
        TargetArg::Joint => {
            let y = data.labels.as_ref().ok_or_else(|| missing("label"))?;
            let at = data.attrs.as_ref().ok_or_else(|| missing("attribute"))?;
            let joint = at.iter().zip(y).map(|(a, y)| a * data.num_classes + y).collect();
            (Target::Joint, joint, data.num_attrs * data.num_classes)
        }
    };
    let cfg = TrainConfig {
        learning_rate: a.learning_rate,
        epochs: a.epochs,
        l2: a.l2,
        seed: a.seed,
    };
    let model = LogisticModel::fit(data.features.view(), &labels, classes, &cfg)?;
    let loss = model.losses().last().copied();
    if loss.is_some_and(|l| !l.is_finite()) {
        return Err(Failure {
            code: 3,
            message: "training loss is not finite".into(),
            details: Value::Null,
        });
    }
    let pred = model.predict(data.features.view())?;
    let accuracy = pred.iter().zip(&labels).filter(|(p, y)| p == y).count() as f64 / labels.len() as f64;
    log::info!("train accuracy {accuracy:.4}");
    let file = ModelFile {
        target,
        num_attrs: data.num_attrs,
        num_classes: data.num_classes,
        features: data.feature_names.clone(),
        model,
    };
    file.save(&a.out)?;
    Ok(json!({
        "train_accuracy": accuracy,
        "final_loss": loss,
        "n": data.len(),
        "target": target,
        "classes": classes,
        "out": a.out,
    }))
}

pub fn postprocess(a: &PostprocessArgs) -> Outcome {
    let loaded = load_bundle(&a.bundle, a.alpha, a.seed)?;
    let noise = noise(a.sigma, &loaded.bundle, a.seed)?;
    let opts = PostOptions {
        drop_empty: a.drop_empty,
        ..PostOptions::default()
    };
    let fit = match linear_post(&loaded.bundle, &loaded.spec, noise, &opts) {
        Ok(fit) => fit,
        Err(Error::Solver { message, dump }) => {
            let mut details = json!({"input": loaded.info});
            if let Some(text) = dump {
                let path = suffixed(&a.out, ".lp.txt");
                std::fs::write(&path, text).map_err(Error::from)?;
                details["lp_dump"] = json!(path);
            }
            return Err(Failure {
                code: 3,
                message: format!("solver failed: {message}"),
                details,
            });
        }
        Err(e) => return Err(e.into()),
    };
    save_params_file(&fit.params, &a.out)?;
    let params = params_json(&fit.params);
    Ok(json!({
        "objective": fit.report.objective,
        "dual_objective": fit.report.dual_objective,
        "iterations": fit.report.iterations,
        "bland_retry": fit.report.bland_retry,
        "psi": params["psi"],
        "w": params["weights_w"],
        "group_mass": params["group_mass"],
        "q": fit.report.q,
        "dropped_groups": fit.report.dropped_groups,
        "dropped_constraints": fit.report.dropped_constraints,
        "alpha": a.alpha,
        "sigma": noise.sigma,
        "seed": noise.seed,
        "input": loaded.info,
        "out": a.out,
    }))
}

fn violation_json(metrics: &[Metric], risk: f64, policy: ArrayView2<'_, f64>, groups: ArrayView2<'_, f64>, bundle: &ScoreBundle, h: &RandomizedClassifier) -> Outcome {
    let v = policy_violation(policy, groups, bundle.weights(), h.params().spec())?;
    let mut out = json!({"risk": risk, "per_constraint": v.per_constraint});
    for m in metrics {
        match m {
            Metric::Max => out["violation_max"] = json!(v.max),
            Metric::Rms => out["violation_rms"] = json!(v.rms),
        }
    }
    Ok(out)
}

pub fn evaluate(a: &EvaluateArgs) -> Outcome {
    let params = load_params_file(&a.params)?;
    let bundle = load_scores(&a.scores, a.schema.as_deref())?;
    let h = RandomizedClassifier::new(params);
    h.check_bundle(&bundle)?;
    let n = bundle.len();
    let groups = truth_matrix(a.truth_groups.as_deref(), n, bundle.num_groups(), "truth group columns")?;
    let risks = truth_matrix(a.truth_risks.as_deref(), n, bundle.num_classes(), "truth risk columns")?;
    let policy = classifier_policy(&h, &bundle, risk_mode(a.draws))?;
    let risk = policy_risk(
        policy.view(),
        risks.as_ref().map_or(bundle.risks(), |r| r.view()),
        bundle.weights(),
    )?;
    let g = groups.as_ref().map_or(bundle.groups(), |g| g.view());
    let mut out = violation_json(&a.metrics, risk, policy.view(), g, &bundle, &h)?;
    out["n"] = json!(n);
    out["alpha"] = json!(h.params().spec().alpha());
    Ok(out)
}

pub fn sweep(a: &SweepArgs) -> Outcome {
    let loaded = load_bundle(&a.bundle, 1.0, a.seed)?;
    let noise = noise(a.sigma, &loaded.bundle, a.seed)?;
    let eval_bundle = match (&a.eval_scores, a.mode) {
        (Some(_), SweepModeArg::Tabular) => {
            return Err(Failure::usage("--eval-scores needs --mode classifier"));
        }
        (Some(path), _) => Some(load_scores(path, a.bundle.schema.as_deref())?),
        (None, _) => None,
    };
    let scores = eval_bundle.as_ref().unwrap_or(&loaded.bundle);
    if scores.num_classes() != loaded.bundle.num_classes() || scores.num_groups() != loaded.bundle.num_groups() {
        return Err(Failure::usage("evaluation bundle has different class or group counts"));
    }
    let n = scores.len();
    let groups = truth_matrix(a.truth_groups.as_deref(), n, scores.num_groups(), "truth group columns")?;
    let risks = truth_matrix(a.truth_risks.as_deref(), n, scores.num_classes(), "truth risk columns")?;
    let cfg = SweepConfig {
        alphas: a.alphas.clone(),
        noise,
        mode: match a.mode {
            SweepModeArg::Tabular => SweepMode::Tabular,
            SweepModeArg::Classifier => SweepMode::Classifier(risk_mode(a.draws)),
        },
        post: PostOptions::default(),
    };
    let eval = EvalSet {
        scores,
        truth_risks: risks.as_ref().map(|r| r.view()),
        truth_groups: groups.as_ref().map(|g| g.view()),
    };
    let rows = run_sweep(&loaded.bundle, &eval, &loaded.spec, &cfg)?;
    let csv = suffixed(&a.out, ".csv");
    let json_path = suffixed(&a.out, ".json");
    save_sweep(&rows, &csv, Some(&json_path))?;
    let table: Vec<Value> = rows
        .iter()
        .map(|r| json!({"alpha": r.alpha, "risk": r.risk, "violation_max": r.violation_max, "violation_rms": r.violation_rms}))
        .collect();
    Ok(json!({
        "rows": table,
        "sigma": noise.sigma,
        "seed": noise.seed,
        "input": loaded.info,
        "csv": csv,
        "json": json_path,
    }))
}

fn write_bundle(path: &Path, b: &ScoreBundle) -> Result<(), Failure> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Failure::usage(format!("cannot write {}: {e}", path.display())))?;
    let header: Vec<String> = (0..b.num_classes())
        .map(|y| format!("r_{y}"))
        .chain((0..b.num_groups()).map(|k| format!("g_{k}")))
        .chain(std::iter::once("w".to_string()))
        .collect();
    let io = |e: csv::Error| Failure::from(Error::from(e));
    w.write_record(&header).map_err(io)?;
    for i in 0..b.len() {
        let row: Vec<String> = b
            .risks()
            .row(i)
            .iter()
            .chain(b.groups().row(i).iter())
            .chain(std::iter::once(&b.weights()[i]))
            .map(|v| v.to_string())
            .collect();
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| Failure::from(Error::from(e)))?;
    Ok(())
}

fn write_json(path: &Path, v: &Value) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(v).expect("json serializes");
    std::fs::write(path, format!("{text}\n")).map_err(|e| Failure::usage(format!("cannot write {}: {e}", path.display())))
}

fn bundle_schema(b: &ScoreBundle) -> Value {
    json!({
        "risks": (0..b.num_classes()).map(|y| format!("r_{y}")).collect::<Vec<_>>(),
        "groups": (0..b.num_groups()).map(|k| format!("g_{k}")).collect::<Vec<_>>(),
        "weight": "w",
    })
}

const TABLE_ALPHAS: [f64; 8] = [0.0, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0];

pub fn synth(a: &SynthArgs) -> Outcome {
    let csv = suffixed(&a.out, ".csv");
    let schema = suffixed(&a.out, ".schema.json");
    let meta_path = suffixed(&a.out, ".json");
    let (bundle, mut meta) = match a.kind {
        SynthKind::Tightness => {
            let t = synth_tightness(a.p, a.epsilon)?;
            let plugin = suffixed(&a.out, ".plugin.csv");
            write_bundle(&plugin, &t.plugin)?;
            let table: Vec<Value> = TABLE_ALPHAS
                .iter()
                .map(|&alpha| {
                    json!({
                        "alpha": alpha,
                        "opt": t.opt(alpha),
                        "plugin_risk": t.plugin_risk(alpha),
                        "excess": t.excess(alpha),
                    })
                })
                .collect();
            let meta = json!({
                "kind": "tightness",
                "p": t.p,
                "epsilon": t.epsilon,
                "delta": t.delta,
                "p_hat": t.p_hat,
                "table": table,
                "plugin_csv": plugin,
            });
            (t.truth, meta)
        }
        SynthKind::Random => {
            let opts = RandomOptions {
                n: a.n,
                num_classes: a.classes,
                num_groups: a.groups,
                one_hot: a.one_hot,
                random_weights: a.random_weights,
            };
            let b = synth_random(a.seed, &opts)?;
            (b, json!({"kind": "random", "seed": a.seed, "options": opts}))
        }
    };
    write_bundle(&csv, &bundle)?;
    write_json(&schema, &bundle_schema(&bundle))?;
    meta["csv"] = json!(csv);
    meta["schema"] = json!(schema);
    write_json(&meta_path, &meta)?;
    meta["metadata"] = json!(meta_path);
    Ok(meta)
}
