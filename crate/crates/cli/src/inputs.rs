//! Turning command-line inputs into score bundles and fairness specs.

use std::path::{Path, PathBuf};

use fairpost::calibrate::{ColumnCalibrator, Method};
use fairpost::criteria::{build_group_scores, build_spec, derive_risks, Criterion, CriterionKind, GroupInputs, GroupIndexing};
use fairpost::data::{split, Dataset, Schema};
use fairpost::models::{joint_to_marginals, ModelFile, Target};
use fairpost::{Constraint, Error, FairnessSpec, NoiseSpec, ScoreBundle};
use ndarray::Array2;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::{BundleArgs, CalibrateArg, Failure};

/// User-supplied constraint collection.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CustomCriterion {
    num_classes: usize,
    num_groups: usize,
    constraints: Vec<Constraint>,
}

/// A criterion name, or the contents of a custom criterion file together
/// with its declared class count.
fn parse_criterion(arg: &str) -> Result<(CriterionKind, Option<usize>), Failure> {
    Ok(match arg {
        "sp" => (CriterionKind::StatisticalParity, None),
        "eopp" => (CriterionKind::EqualOpportunity, None),
        "meopp" => (CriterionKind::MulticlassEqualOpportunity, None),
        "eo" => (CriterionKind::EqualizedOdds, None),
        path => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Failure::usage(format!("unknown criterion {path:?} and cannot read it as a file: {e}"))
            })?;
            let c: CustomCriterion = serde_json::from_str(&text)
                .map_err(|e| Failure::usage(format!("invalid custom criterion {path}: {e}")))?;
            (
                CriterionKind::Custom {
                    num_groups: c.num_groups,
                    constraints: c.constraints,
                },
                Some(c.num_classes),
            )
        }
    })
}

/// Numeric CSV with a header row, one column per matrix column.
pub fn read_matrix(path: &Path) -> Result<Array2<f64>, Failure> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Failure::usage(format!("cannot open {}: {e}", path.display())))?;
    let cols = rdr
        .headers()
        .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?
        .len();
    let mut values = Vec::new();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
        for cell in rec.iter() {
            let v: f64 = cell
                .parse()
                .map_err(|_| Failure::usage(format!("{}: row {}: {cell:?} is not a number", path.display(), rows + 1)))?;
            values.push(v);
        }
        rows += 1;
    }
    Array2::from_shape_vec((rows, cols), values).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

/// Picks up `r_<y>`, `g_<k>` and `w` (or `weight`) columns by name.
fn infer_schema(path: &Path) -> Result<Schema, Failure> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Failure::usage(format!("cannot open {}: {e}", path.display())))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let indexed = |prefix: &str| -> Vec<String> {
        let mut cols: Vec<(usize, String)> = header
            .iter()
            .filter_map(|h| h.strip_prefix(prefix)?.parse::<usize>().ok().map(|i| (i, h.clone())))
            .collect();
        cols.sort();
        cols.into_iter().map(|c| c.1).collect()
    };
    Ok(Schema {
        risks: indexed("r_"),
        groups: indexed("g_"),
        weight: header.iter().find(|h| *h == "w" || *h == "weight").cloned(),
        ..Schema::default()
    })
}

pub fn load_scores(path: &Path, schema: Option<&Path>) -> Result<ScoreBundle, Failure> {
    let schema = match schema {
        Some(s) => Schema::load(s)?,
        None => infer_schema(path)?,
    };
    Ok(Dataset::load_csv(path, &schema)?.score_bundle()?)
}

pub fn noise(sigma: Option<f64>, bundle: &ScoreBundle, seed: u64) -> Result<NoiseSpec, Failure> {
    Ok(match sigma {
        Some(s) => NoiseSpec::new(s, seed)?,
        None => NoiseSpec::default_for(bundle, seed),
    })
}

/// Spec for a bundle whose group columns are already laid out for the
/// criterion: one per attribute value, or `a * |Y| + y` for label-defined
/// groups.
fn spec_for_scores(kind: CriterionKind, declared: Option<usize>, aware: bool, bundle: &ScoreBundle, alpha: f64) -> Result<FairnessSpec, Failure> {
    let nc = bundle.num_classes();
    let ng = bundle.num_groups();
    if let Some(d) = declared {
        if d != nc {
            return Err(Error::DimensionMismatch { what: "classes", expected: d, actual: nc }.into());
        }
    }
    let arity = match kind {
        CriterionKind::StatisticalParity | CriterionKind::Custom { .. } => ng,
        _ => (ng / nc).max(2),
    };
    let (spec, _) = build_spec(&Criterion::new(kind, arity, nc, aware)?, alpha)?;
    if spec.num_groups() != ng {
        return Err(Error::DimensionMismatch { what: "group columns", expected: spec.num_groups(), actual: ng }.into());
    }
    Ok(spec)
}

pub struct Loaded {
    pub bundle: ScoreBundle,
    pub spec: FairnessSpec,
    pub info: Value,
}

fn load_model(path: &Path) -> Result<ModelFile, Failure> {
    ModelFile::load(path).map_err(|e| Failure::usage(format!("cannot load model {}: {e}", path.display())))
}

fn method(c: CalibrateArg) -> Option<Method> {
    match c {
        CalibrateArg::None => None,
        CalibrateArg::Platt => Some(Method::Platt),
        CalibrateArg::Isotonic => Some(Method::Isotonic),
    }
}

/// Labels a model with this target was trained on.
fn targets(data: &Dataset, file: &ModelFile) -> Result<Vec<usize>, Failure> {
    let need = |v: &Option<Vec<usize>>, what: &str| {
        v.clone().ok_or_else(|| Failure::usage(format!("calibration needs the {what} column")))
    };
    Ok(match file.target {
        Target::Y => need(&data.labels, "label")?,
        Target::A => need(&data.attrs, "attribute")?,
        Target::Joint => {
            let y = need(&data.labels, "label")?;
            let a = need(&data.attrs, "attribute")?;
            a.iter().zip(&y).map(|(a, y)| a * file.num_classes + y).collect()
        }
    })
}

pub fn load_bundle(args: &BundleArgs, alpha: f64, seed: u64) -> Result<Loaded, Failure> {
    let aware = !args.blind;
    let (kind, declared) = parse_criterion(&args.criterion)?;
    if let Some(path) = &args.scores {
        if args.calibrate != CalibrateArg::None {
            return Err(Failure::usage("--calibrate applies to --model inputs"));
        }
        let bundle = load_scores(path, args.schema.as_deref())?;
        let spec = spec_for_scores(kind, declared, aware, &bundle, alpha)?;
        let info = json!({"source": path, "n": bundle.len()});
        return Ok(Loaded { bundle, spec, info });
    }
    let (Some(model), Some(data_path)) = (&args.model, &args.data) else {
        return Err(Failure::usage("give either --scores or --model with --data"));
    };
    let schema_path: &PathBuf = args
        .schema
        .as_ref()
        .ok_or_else(|| Failure::usage("--model inputs need --schema"))?;
    let schema = Schema::load(schema_path)?;
    let data = Dataset::load_csv(data_path, &schema)?;
    let file = load_model(model)?;
    if file.target == Target::A {
        return Err(Failure::usage("--model must predict y or joint; pass attribute models with --attr-model"));
    }
    let attr_file = args.attr_model.as_deref().map(load_model).transpose()?;
    if attr_file.as_ref().is_some_and(|f| f.target != Target::A) {
        return Err(Failure::usage("--attr-model must predict the attribute"));
    }

    // Calibration maps are fitted on held-out rows and applied to the rest.
    let (rows, calib_rows) = match method(args.calibrate) {
        None => ((0..data.len()).collect::<Vec<_>>(), vec![]),
        Some(_) => {
            let f = args.calibration_fraction;
            if !(f > 0.0 && f < 1.0) {
                return Err(Failure::usage("--calibration-fraction must lie in (0, 1)"));
            }
            let mut parts = split(data.len(), &[f, 1.0 - f], seed)?;
            let rest = parts.pop().unwrap();
            (rest, parts.pop().unwrap())
        }
    };
    let predict = |f: &ModelFile| -> Result<Array2<f64>, Failure> {
        let probs = f.model.predict_proba(data.features_for(&f.features).view())?;
        match method(args.calibrate) {
            None => Ok(probs),
            Some(m) => {
                let calib = data.subset(&calib_rows)?;
                let cal = ColumnCalibrator::fit(probs.select(ndarray::Axis(0), &calib_rows).view(), &targets(&calib, f)?, m)?;
                Ok(cal.apply(probs.select(ndarray::Axis(0), &rows).view())?)
            }
        }
    };
    let probs = predict(&file)?;
    let attr_probs = attr_file.as_ref().map(&predict).transpose()?;
    let data = data.subset(&rows)?;

    let nc = file.num_classes;
    let na = match (&file.target, &attr_file) {
        (Target::Joint, _) => file.num_attrs,
        (_, Some(a)) => a.num_attrs,
        _ => file.num_attrs.max(data.num_attrs),
    };
    if let Some(d) = declared {
        if d != nc {
            return Err(Error::DimensionMismatch { what: "classes", expected: d, actual: nc }.into());
        }
    }
    let (f_y, f_a, cond, f_ay) = if file.target == Target::Joint {
        let (f_a, f_y, cond) = joint_to_marginals(probs.view(), na, nc)?;
        (f_y, Some(f_a), Some(cond), Some(probs))
    } else {
        (probs, attr_probs, None, None)
    };
    let risks = derive_risks(f_y.view())?;
    let (spec, indexing) = build_spec(&Criterion::new(kind, na, nc, aware)?, alpha)?;
    let label_groups = matches!(indexing, GroupIndexing::AttrLabel { .. });
    let inputs = if aware {
        GroupInputs {
            attr_labels: Some(
                data.attrs
                    .as_deref()
                    .ok_or_else(|| Failure::usage("--aware needs an attribute column in the schema"))?,
            ),
            f_y_given_ax: if label_groups { cond.as_ref().map(|c| c.view()) } else { None },
            ..Default::default()
        }
    } else if label_groups {
        GroupInputs { f_ay: f_ay.as_ref().map(|m| m.view()), ..Default::default() }
    } else {
        GroupInputs { f_a: f_a.as_ref().map(|m| m.view()), ..Default::default() }
    };
    let groups = build_group_scores(indexing, aware, &inputs)?;
    let bundle = ScoreBundle::new(risks, groups, data.weights_or_uniform())?;
    let info = json!({
        "source": data_path,
        "model": model,
        "n": bundle.len(),
        "calibration_rows": calib_rows.len(),
    });
    Ok(Loaded { bundle, spec, info })
}
