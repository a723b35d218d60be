//! Dataset ingestion, seeded splits, and synthetic instances.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::{array, Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{renormalize, Constraint, FairnessSpec, ScoreBundle, WEIGHT_SUM_TOL};

/// Column roles of a CSV file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schema {
    pub label: Option<String>,
    pub attribute: Option<String>,
    pub features: Vec<String>,
    /// Feature columns to one-hot encode instead of parsing as numbers.
    pub categorical: Vec<String>,
    /// Precomputed risk columns `r_0, r_1, ...`.
    pub risks: Vec<String>,
    /// Precomputed group-score columns `g_0, g_1, ...`.
    pub groups: Vec<String>,
    pub weight: Option<String>,
    /// Label arity; inferred from the data when absent.
    pub num_classes: Option<usize>,
    /// Attribute arity; inferred from the data when absent.
    pub num_attrs: Option<usize>,
}

impl Schema {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("cannot read schema {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("invalid schema {}: {e}", path.display())))
    }

    fn check(&self) -> Result<()> {
        for c in &self.categorical {
            if !self.features.contains(c) {
                return Err(Error::Data(format!("categorical column {c} is not a feature")));
            }
        }
        if self.risks.len() == 1 {
            return Err(Error::Data("need at least two risk columns".into()));
        }
        Ok(())
    }
}

/// An in-memory dataset. Optional parts are present when the schema names
/// the corresponding columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Numeric features, categorical columns already one-hot encoded.
    pub features: Array2<f64>,
    pub feature_names: Vec<String>,
    pub labels: Option<Vec<usize>>,
    pub attrs: Option<Vec<usize>>,
    pub risks: Option<Array2<f64>>,
    pub groups: Option<Array2<f64>>,
    /// Normalised sample weights.
    pub weights: Option<Array1<f64>>,
    pub num_classes: usize,
    pub num_attrs: usize,
}

fn parse_f64(cell: &str, row: usize, col: &str) -> Result<f64> {
    cell.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Data(format!("row {row}, column {col}: {cell:?} is not a finite number")))
}

fn parse_index(cell: &str, row: usize, col: &str) -> Result<usize> {
    let v = parse_f64(cell, row, col)?;
    if v < 0.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
        return Err(Error::Data(format!(
            "row {row}, column {col}: {cell:?} is not a non-negative integer"
        )));
    }
    Ok(v as usize)
}

/// Arity from the schema, or inferred as `max + 1` (at least two).
fn arity(values: &[usize], declared: Option<usize>, col: &str) -> Result<usize> {
    let max = values.iter().copied().max().unwrap_or(0);
    match declared {
        Some(k) if max >= k => Err(Error::Data(format!(
            "column {col}: value {max} out of range for {k} classes"
        ))),
        Some(k) if k < 2 => Err(Error::Data(format!("column {col}: need at least two classes"))),
        Some(k) => Ok(k),
        None => Ok((max + 1).max(2)),
    }
}

/// Normalises weights; sums off by more than the tolerance are rescaled with
/// a warning, a zero sum is an error.
pub fn normalize_weights(w: Array1<f64>) -> Result<Array1<f64>> {
    if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Data("weights must be finite and non-negative".into()));
    }
    let total = w.sum();
    if total <= 0.0 {
        return Err(Error::Data("weights sum to zero".into()));
    }
    if (total - 1.0).abs() > WEIGHT_SUM_TOL {
        log::warn!("weights sum to {total}; renormalising");
    }
    Ok(renormalize(w))
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn load_csv(path: &Path, schema: &Schema) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
        Self::read_csv(file, schema)
    }

    pub fn read_csv<R: std::io::Read>(reader: R, schema: &Schema) -> Result<Self> {
        schema.check()?;
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let col = |name: &str| -> Result<usize> {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Data(format!("missing column {name}")))
        };
        let label_col = schema.label.as_deref().map(col).transpose()?;
        let attr_col = schema.attribute.as_deref().map(col).transpose()?;
        let weight_col = schema.weight.as_deref().map(col).transpose()?;
        let feat_cols = schema.features.iter().map(|f| col(f)).collect::<Result<Vec<_>>>()?;
        let risk_cols = schema.risks.iter().map(|f| col(f)).collect::<Result<Vec<_>>>()?;
        let group_cols = schema.groups.iter().map(|f| col(f)).collect::<Result<Vec<_>>>()?;

        let records: Vec<csv::StringRecord> = rdr.records().collect::<std::result::Result<_, _>>()?;
        let n = records.len();
        if n == 0 {
            return Err(Error::Data("file has no data rows".into()));
        }

        // Feature layout: numeric columns map to one column, categorical to
        // one column per distinct value (sorted).
        let mut feature_names = Vec::new();
        let mut layouts: Vec<(usize, Option<Vec<String>>)> = Vec::new();
        for (name, &c) in schema.features.iter().zip(&feat_cols) {
            if schema.categorical.contains(name) {
                let levels: BTreeSet<String> = records.iter().map(|r| r[c].to_string()).collect();
                let levels: Vec<String> = levels.into_iter().collect();
                feature_names.extend(levels.iter().map(|l| format!("{name}={l}")));
                layouts.push((c, Some(levels)));
            } else {
                feature_names.push(name.clone());
                layouts.push((c, None));
            }
        }
        let mut features = Array2::zeros((n, feature_names.len()));
        for (i, rec) in records.iter().enumerate() {
            let mut j = 0;
            for ((c, levels), name) in layouts.iter().zip(&schema.features) {
                match levels {
                    None => {
                        features[[i, j]] = parse_f64(&rec[*c], i + 1, name)?;
                        j += 1;
                    }
                    Some(levels) => {
                        let pos = levels.iter().position(|l| l == &rec[*c]).expect("level seen");
                        features[[i, j + pos]] = 1.0;
                        j += levels.len();
                    }
                }
            }
        }

        let read_indices = |c: usize, name: &str| -> Result<Vec<usize>> {
            records
                .iter()
                .enumerate()
                .map(|(i, r)| parse_index(&r[c], i + 1, name))
                .collect()
        };
        let read_matrix = |cols: &[usize], names: &[String]| -> Result<Array2<f64>> {
            let mut m = Array2::zeros((n, cols.len()));
            for (i, r) in records.iter().enumerate() {
                for (j, (&c, name)) in cols.iter().zip(names).enumerate() {
                    m[[i, j]] = parse_f64(&r[c], i + 1, name)?;
                }
            }
            Ok(m)
        };

        let labels = label_col
            .map(|c| read_indices(c, schema.label.as_deref().unwrap_or_default()))
            .transpose()?;
        let attrs = attr_col
            .map(|c| read_indices(c, schema.attribute.as_deref().unwrap_or_default()))
            .transpose()?;
        let mut num_classes = match &labels {
            Some(l) => arity(l, schema.num_classes, schema.label.as_deref().unwrap_or_default())?,
            None => schema.num_classes.unwrap_or(2),
        };
        let num_attrs = match &attrs {
            Some(a) => arity(a, schema.num_attrs, schema.attribute.as_deref().unwrap_or_default())?,
            None => schema.num_attrs.unwrap_or(2),
        };
        let risks = if risk_cols.is_empty() {
            None
        } else {
            let r = read_matrix(&risk_cols, &schema.risks)?;
            if let Some(v) = r.iter().find(|v| **v < 0.0) {
                return Err(Error::Data(format!("risk value {v} is negative")));
            }
            if labels.is_none() {
                num_classes = r.ncols();
            } else if r.ncols() != num_classes {
                return Err(Error::Data(format!(
                    "{} risk columns but {num_classes} classes",
                    r.ncols()
                )));
            }
            Some(r)
        };
        let groups = if group_cols.is_empty() {
            None
        } else {
            let g = read_matrix(&group_cols, &schema.groups)?;
            if let Some(v) = g.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Data(format!("group score {v} outside [0, 1]")));
            }
            Some(g)
        };
        let weights = weight_col
            .map(|c| -> Result<Array1<f64>> {
                let name = schema.weight.as_deref().unwrap_or_default();
                let w = records
                    .iter()
                    .enumerate()
                    .map(|(i, r)| parse_f64(&r[c], i + 1, name))
                    .collect::<Result<Vec<_>>>()?;
                normalize_weights(Array1::from(w))
            })
            .transpose()?;

        Ok(Dataset {
            features,
            feature_names,
            labels,
            attrs,
            risks,
            groups,
            weights,
            num_classes,
            num_attrs,
        })
    }

    /// Rows in `idx`, weights renormalised.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let sel2 = |m: &Array2<f64>| m.select(ndarray::Axis(0), idx);
        let weights = match &self.weights {
            Some(w) => Some(normalize_weights(w.select(ndarray::Axis(0), idx))?),
            None => None,
        };
        Ok(Dataset {
            features: sel2(&self.features),
            feature_names: self.feature_names.clone(),
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
            attrs: self.attrs.as_ref().map(|a| idx.iter().map(|&i| a[i]).collect()),
            risks: self.risks.as_ref().map(sel2),
            groups: self.groups.as_ref().map(sel2),
            weights,
            num_classes: self.num_classes,
            num_attrs: self.num_attrs,
        })
    }

    /// Sample weights, uniform if the file had none.
    pub fn weights_or_uniform(&self) -> Array1<f64> {
        match &self.weights {
            Some(w) => w.clone(),
            None => renormalize(Array1::from_elem(self.len(), 1.0)),
        }
    }

    /// Bundle from the precomputed risk and group columns.
    pub fn score_bundle(&self) -> Result<ScoreBundle> {
        let r = self
            .risks
            .clone()
            .ok_or_else(|| Error::Data("schema declares no risk columns".into()))?;
        let g = self
            .groups
            .clone()
            .ok_or_else(|| Error::Data("schema declares no group columns".into()))?;
        ScoreBundle::new(r, g, self.weights_or_uniform())
    }

    /// Features aligned to `names`: matching columns are copied, unknown
    /// names (e.g. categorical levels unseen here) are zero.
    pub fn features_for(&self, names: &[String]) -> Array2<f64> {
        let mut out = Array2::zeros((self.len(), names.len()));
        for (j, name) in names.iter().enumerate() {
            if let Some(src) = self.feature_names.iter().position(|f| f == name) {
                out.column_mut(j).assign(&self.features.column(src));
            }
        }
        out
    }
}

/// Sizes by largest-remainder rounding of `fractions * n`.
pub fn split_sizes(n: usize, fractions: &[f64]) -> Result<Vec<usize>> {
    if fractions.is_empty() || fractions.iter().any(|f| !(*f > 0.0) || !f.is_finite()) {
        return Err(Error::invalid("split fractions must be positive"));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split fractions sum to {total}, expected 1")));
    }
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|e| (e + 1e-9).floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    let rem = |i: usize| exact[i] - sizes[i] as f64;
    order.sort_by(|&a, &b| rem(b).total_cmp(&rem(a)).then(a.cmp(&b)));
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    Ok(sizes)
}

/// Disjoint, exhaustive index sets from a seeded permutation; each set is
/// returned sorted.
pub fn split(n: usize, fractions: &[f64], seed: u64) -> Result<Vec<Vec<usize>>> {
    let sizes = split_sizes(n, fractions)?;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for s in sizes {
        let mut part = perm[start..start + s].to_vec();
        part.sort_unstable();
        out.push(part);
        start += s;
    }
    Ok(out)
}

/// The two-atom construction with exact risks and an inaccurate group
/// predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tightness {
    pub p: f64,
    pub epsilon: f64,
    /// `1 - 2p`, the disparity of the Bayes classifier.
    pub delta: f64,
    /// `p - epsilon / 2`.
    pub p_hat: f64,
    /// Exact distribution with the true group scores.
    pub truth: ScoreBundle,
    /// Same atoms and risks with the plugin group scores.
    pub plugin: ScoreBundle,
}

impl Tightness {
    /// Optimal constrained risk `max(1 - alpha / delta, 0) / 2`.
    pub fn opt(&self, alpha: f64) -> f64 {
        if self.delta <= 0.0 {
            return 0.0;
        }
        0.5 * (1.0 - alpha / self.delta).max(0.0)
    }

    /// Risk of post-processing with the plugin scores.
    pub fn plugin_risk(&self, alpha: f64) -> f64 {
        let d = self.delta + self.epsilon;
        if d <= 0.0 {
            return 0.0;
        }
        0.5 * (1.0 - alpha / d).max(0.0)
    }

    pub fn excess(&self, alpha: f64) -> f64 {
        self.plugin_risk(alpha) - self.opt(alpha)
    }

    /// Statistical parity over the two groups.
    pub fn spec(&self, alpha: f64) -> Result<FairnessSpec> {
        FairnessSpec::new(
            2,
            2,
            vec![Constraint::new(0, vec![0, 1]), Constraint::new(1, vec![0, 1])],
            alpha,
        )
    }
}

/// Two atoms `X in {0, 1}` of mass one half with `Y = X` and
/// `P(X = 0 | A = 0) = P(X = 1 | A = 1) = p`.
pub fn synth_tightness(p: f64, epsilon: f64) -> Result<Tightness> {
    if !(0.0..=0.5).contains(&p) {
        return Err(Error::invalid(format!("p = {p} must lie in [0, 1/2]")));
    }
    let delta = 1.0 - 2.0 * p;
    if !(epsilon >= 0.0 && epsilon <= 1.0 - delta + 1e-12) {
        return Err(Error::invalid(format!(
            "epsilon = {epsilon} must lie in [0, {}]",
            1.0 - delta
        )));
    }
    let p_hat = (p - epsilon / 2.0).max(0.0);
    let risks = array![[0.0, 1.0], [1.0, 0.0]];
    let g = |q: f64| array![[q, 1.0 - q], [1.0 - q, q]];
    let w = array![0.5, 0.5];
    Ok(Tightness {
        p,
        epsilon,
        delta,
        p_hat,
        truth: ScoreBundle::new(risks.clone(), g(p), w.clone())?,
        plugin: ScoreBundle::new(risks, g(p_hat), w)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomOptions {
    pub n: usize,
    pub num_classes: usize,
    pub num_groups: usize,
    /// One-hot group rows (every group non-empty) instead of simplex rows.
    pub one_hot: bool,
    /// Random instead of uniform sample weights.
    pub random_weights: bool,
}

pub const MAX_RANDOM_SAMPLES: usize = 6;
pub const MAX_RANDOM_CLASSES: usize = 3;
pub const MAX_RANDOM_GROUPS: usize = 3;

/// Small random bundle for brute-force checks.
pub fn synth_random(seed: u64, opts: &RandomOptions) -> Result<ScoreBundle> {
    let RandomOptions {
        n,
        num_classes,
        num_groups,
        one_hot,
        random_weights,
    } = *opts;
    if !(1..=MAX_RANDOM_SAMPLES).contains(&n)
        || !(2..=MAX_RANDOM_CLASSES).contains(&num_classes)
        || !(2..=MAX_RANDOM_GROUPS).contains(&num_groups)
    {
        return Err(Error::invalid(format!(
            "random instances need 1..={MAX_RANDOM_SAMPLES} samples, \
             2..={MAX_RANDOM_CLASSES} classes and 2..={MAX_RANDOM_GROUPS} groups"
        )));
    }
    if one_hot && n < num_groups {
        return Err(Error::invalid("one-hot groups need at least one sample per group"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let risks = Array2::from_shape_fn((n, num_classes), |_| rng.gen_range(0.0..1.0));
    let mut groups = Array2::zeros((n, num_groups));
    if one_hot {
        let mut assign: Vec<usize> = (0..n).map(|i| if i < num_groups { i } else { rng.gen_range(0..num_groups) }).collect();
        assign.shuffle(&mut rng);
        for (i, k) in assign.into_iter().enumerate() {
            groups[[i, k]] = 1.0;
        }
    } else {
        for i in 0..n {
            let raw: Vec<f64> = (0..num_groups).map(|_| rng.gen_range(0.05..1.0)).collect();
            let s: f64 = raw.iter().sum();
            for (k, v) in raw.into_iter().enumerate() {
                groups[[i, k]] = v / s;
            }
        }
    }
    let w = if random_weights {
        renormalize(Array1::from_shape_fn(n, |_| rng.gen_range(0.2..1.0)))
    } else {
        renormalize(Array1::from_elem(n, 1.0))
    };
    ScoreBundle::new(risks, groups, w)
}

/// Constraint collections worth testing on a random instance: parity of
/// every class over all groups, parity of class 0 only, and (with three
/// groups) parity of the last class over the first two groups.
pub fn candidate_specs(num_classes: usize, num_groups: usize, alpha: f64) -> Result<Vec<FairnessSpec>> {
    let all: Vec<usize> = (0..num_groups).collect();
    let mut out = vec![
        FairnessSpec::new(
            num_classes,
            num_groups,
            (0..num_classes).map(|y| Constraint::new(y, all.clone())).collect(),
            alpha,
        )?,
        FairnessSpec::new(num_classes, num_groups, vec![Constraint::new(0, all.clone())], alpha)?,
    ];
    if num_groups >= 3 {
        out.push(FairnessSpec::new(
            num_classes,
            num_groups,
            vec![Constraint::new(num_classes - 1, vec![0, 1])],
            alpha,
        )?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_examples() {
        assert_eq!(split_sizes(100, &[0.35, 0.35, 0.3]).unwrap(), vec![35, 35, 30]);
        assert_eq!(split_sizes(10, &[0.63, 0.07, 0.3]).unwrap(), vec![6, 1, 3]);
        assert!(split_sizes(10, &[0.5, 0.4]).is_err());
        assert!(split_sizes(10, &[1.2, -0.2]).is_err());
        let a = split(50, &[0.35, 0.35, 0.3], 9).unwrap();
        let b = split(50, &[0.35, 0.35, 0.3], 9).unwrap();
        assert_eq!(a, b);
        let mut all: Vec<usize> = a.concat();
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn tightness_metadata() {
        let t = synth_tightness(0.25, 0.0).unwrap();
        assert!((t.delta - 0.5).abs() < 1e-15);
        assert!((t.opt(0.1) - 0.4).abs() < 1e-15);
        assert_eq!(t.truth, t.plugin);
        let t = synth_tightness(0.45, 0.2).unwrap();
        assert!((t.excess(0.1) - 1.0 / 3.0).abs() < 1e-12);
        assert!(synth_tightness(0.45, 0.95).is_err());
        assert!(synth_tightness(0.6, 0.0).is_err());
    }

    #[test]
    fn random_instances() {
        let opts = RandomOptions {
            n: 5,
            num_classes: 3,
            num_groups: 3,
            one_hot: true,
            random_weights: true,
        };
        let a = synth_random(0, &opts).unwrap();
        assert_eq!(a, synth_random(0, &opts).unwrap());
        assert!(a.groups().rows().into_iter().all(|r| r.sum() == 1.0 && r.iter().all(|v| *v == 0.0 || *v == 1.0)));
        assert!(a.group_mass().iter().all(|m| *m > 0.0));
        let big = RandomOptions { n: 7, ..opts };
        assert!(synth_random(0, &big).is_err());
    }

    #[test]
    fn csv_roles() {
        let text = "y,a,f1,color\n0,1,0.5,red\n1,0,1.5,blue\n1,1,2.5,red\n";
        let schema = Schema {
            label: Some("y".into()),
            attribute: Some("a".into()),
            features: vec!["f1".into(), "color".into()],
            categorical: vec!["color".into()],
            ..Schema::default()
        };
        let d = Dataset::read_csv(text.as_bytes(), &schema).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.feature_names, vec!["f1", "color=blue", "color=red"]);
        assert_eq!(d.features.row(0).to_vec(), vec![0.5, 0.0, 1.0]);
        assert_eq!(d.labels, Some(vec![0, 1, 1]));
        assert_eq!(d.num_classes, 2);
    }

    #[test]
    fn csv_errors() {
        let schema = Schema {
            label: Some("y".into()),
            features: vec!["f1".into()],
            ..Schema::default()
        };
        let missing = Dataset::read_csv("y,f2\n0,1\n".as_bytes(), &schema).unwrap_err();
        assert!(missing.to_string().contains("missing column f1"));
        assert!(Dataset::read_csv("y,f1\n0,abc\n".as_bytes(), &schema).is_err());
        let declared = Schema {
            num_classes: Some(2),
            ..schema
        };
        assert!(Dataset::read_csv("y,f1\n2,1\n".as_bytes(), &declared).is_err());
    }

    #[test]
    fn weight_normalisation() {
        let w = normalize_weights(array![0.5, 0.499999]).unwrap();
        assert!((w.sum() - 1.0).abs() < 1e-15);
        assert!(normalize_weights(array![0.0, 0.0]).is_err());
    }
}
