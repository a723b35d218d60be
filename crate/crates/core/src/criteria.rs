//! Encodings of common fairness criteria as constraint collections, and the
//! recipes that turn plugin predictors into group-membership scores.
//!
//! Groups defined by `(attribute, label)` pairs are flattened row-major:
//! `k = a * num_classes + y`. The ordering is part of the parameter file
//! format and must not change.

use ndarray::{Array2, ArrayView2, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Constraint, FairnessSpec};

/// Slack allowed when checking that rows lie in the probability simplex.
pub const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CriterionKind {
    /// Statistical parity: equal output rates across attributes for every class.
    StatisticalParity,
    /// Binary equal opportunity: equal true-positive rates.
    EqualOpportunity,
    /// Multiclass equal opportunity: equal `P(h = y | A, Y = y)` for every `y`.
    MulticlassEqualOpportunity,
    /// Equalized odds: equal `P(h = y | A, Y = y')` for every `y, y'`.
    EqualizedOdds,
    /// User-supplied constraints over explicitly indexed groups.
    Custom {
        num_groups: usize,
        constraints: Vec<Constraint>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub kind: CriterionKind,
    pub attr_arity: usize,
    pub num_classes: usize,
    pub aware: bool,
}

impl Criterion {
    pub fn new(kind: CriterionKind, attr_arity: usize, num_classes: usize, aware: bool) -> Result<Self> {
        if attr_arity < 2 {
            return Err(Error::invalid("need at least two attribute values"));
        }
        if num_classes < 2 {
            return Err(Error::invalid("need at least two classes"));
        }
        Ok(Criterion {
            kind,
            attr_arity,
            num_classes,
            aware,
        })
    }
}

/// How group index `k` maps back to attributes and labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupIndexing {
    /// `K = |A|`, `Z_a = 1[A = a]`.
    Attr { num_attrs: usize },
    /// `K = |A| |Y|`, `Z_{a,y} = 1[A = a, Y = y]`, flattened as `a * |Y| + y`.
    AttrLabel { num_attrs: usize, num_classes: usize },
    /// Groups supplied directly by the caller.
    Explicit { num_groups: usize },
}

impl GroupIndexing {
    pub fn num_groups(&self) -> usize {
        match *self {
            GroupIndexing::Attr { num_attrs } => num_attrs,
            GroupIndexing::AttrLabel {
                num_attrs,
                num_classes,
            } => num_attrs * num_classes,
            GroupIndexing::Explicit { num_groups } => num_groups,
        }
    }

    /// Flat group index of `(attr, label)`; the label is ignored under `Attr`.
    pub fn index(&self, attr: usize, label: usize) -> Option<usize> {
        match *self {
            GroupIndexing::Attr { num_attrs } => (attr < num_attrs).then_some(attr),
            GroupIndexing::AttrLabel {
                num_attrs,
                num_classes,
            } => (attr < num_attrs && label < num_classes).then_some(attr * num_classes + label),
            GroupIndexing::Explicit { .. } => None,
        }
    }

    /// Inverse of [`index`](Self::index): `(attr, Some(label))` under `AttrLabel`.
    pub fn decode(&self, k: usize) -> Option<(usize, Option<usize>)> {
        match *self {
            GroupIndexing::Attr { num_attrs } => (k < num_attrs).then_some((k, None)),
            GroupIndexing::AttrLabel {
                num_attrs,
                num_classes,
            } => (k < num_attrs * num_classes).then_some((k / num_classes, Some(k % num_classes))),
            GroupIndexing::Explicit { .. } => None,
        }
    }

    /// Hard 0/1 membership from observed attributes (and labels, when the
    /// groups involve them).
    pub fn indicators(&self, attrs: &[usize], labels: Option<&[usize]>) -> Result<Array2<f64>> {
        let n = attrs.len();
        let mut z = Array2::<f64>::zeros((n, self.num_groups()));
        for i in 0..n {
            let label = match (self, labels) {
                (GroupIndexing::AttrLabel { .. }, Some(l)) => {
                    if l.len() != n {
                        return Err(Error::dims("labels", n, l.len()));
                    }
                    l[i]
                }
                (GroupIndexing::AttrLabel { .. }, None) => {
                    return Err(Error::invalid("label-defined groups need labels"))
                }
                (GroupIndexing::Explicit { .. }, _) => {
                    return Err(Error::invalid("explicit groups have no attribute mapping"))
                }
                _ => 0,
            };
            let k = self.index(attrs[i], label).ok_or_else(|| {
                Error::invalid(format!("sample {i}: attribute/label out of range"))
            })?;
            z[[i, k]] = 1.0;
        }
        Ok(z)
    }
}

/// Builds the constraint collection for a criterion.
pub fn build_spec(criterion: &Criterion, alpha: f64) -> Result<(FairnessSpec, GroupIndexing)> {
    let na = criterion.attr_arity;
    let nc = criterion.num_classes;
    let attr_label = GroupIndexing::AttrLabel {
        num_attrs: na,
        num_classes: nc,
    };
    let across = |y: usize| -> Vec<usize> { (0..na).map(|a| a * nc + y).collect() };
    let (constraints, indexing) = match &criterion.kind {
        CriterionKind::StatisticalParity => (
            (0..nc)
                .map(|y| Constraint::new(y, (0..na).collect()))
                .collect(),
            GroupIndexing::Attr { num_attrs: na },
        ),
        CriterionKind::EqualOpportunity => {
            if nc != 2 {
                return Err(Error::invalid(format!(
                    "binary equal opportunity needs 2 classes, got {nc}"
                )));
            }
            (vec![Constraint::new(1, across(1))], attr_label)
        }
        CriterionKind::MulticlassEqualOpportunity => (
            (0..nc).map(|y| Constraint::new(y, across(y))).collect(),
            attr_label,
        ),
        CriterionKind::EqualizedOdds => (
            (0..nc)
                .flat_map(|y| (0..nc).map(move |yp| (y, yp)))
                .map(|(y, yp)| Constraint::new(y, across(yp)))
                .collect(),
            attr_label,
        ),
        CriterionKind::Custom {
            num_groups,
            constraints,
        } => (
            constraints.clone(),
            GroupIndexing::Explicit {
                num_groups: *num_groups,
            },
        ),
    };
    let spec = FairnessSpec::new(nc, indexing.num_groups(), constraints, alpha)?;
    Ok((spec, indexing))
}

/// Inputs available for building group scores. Which fields must be set
/// depends on the indexing scheme and on attribute awareness.
#[derive(Debug, Default, Clone, Copy)]
pub struct GroupInputs<'a> {
    /// Observed attribute per sample (attribute-aware mode).
    pub attr_labels: Option<&'a [usize]>,
    /// `P(A = a | x)`, shape `n x |A|`.
    pub f_a: Option<ArrayView2<'a, f64>>,
    /// `P(Y = y | A = a, x)`, shape `n x |A| x |Y|`.
    pub f_y_given_ax: Option<ArrayView3<'a, f64>>,
    /// `P(A = a, Y = y | x)`, shape `n x |A||Y|`, flattened row-major.
    pub f_ay: Option<ArrayView2<'a, f64>>,
}

fn check_simplex_rows(m: ArrayView2<'_, f64>, what: &str) -> Result<()> {
    for (i, row) in m.rows().into_iter().enumerate() {
        let s: f64 = row.sum();
        if row.iter().any(|v| *v < -SIMPLEX_TOL || *v > 1.0 + SIMPLEX_TOL || !v.is_finite())
            || (s - 1.0).abs() > SIMPLEX_TOL
        {
            return Err(Error::invalid(format!(
                "{what}: row {i} is not a probability vector"
            )));
        }
    }
    Ok(())
}

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// Group-membership scores `g(x, k)` for every sample.
///
/// Accepted combinations:
/// - aware, `Attr`: `attr_labels`
/// - blind, `Attr`: `f_a`
/// - aware, `AttrLabel`: `attr_labels` and `f_y_given_ax`
/// - blind, `AttrLabel`: `f_ay`, or `f_a` and `f_y_given_ax`
pub fn build_group_scores(
    indexing: GroupIndexing,
    aware: bool,
    inputs: &GroupInputs<'_>,
) -> Result<Array2<f64>> {
    let have = (
        inputs.attr_labels.is_some(),
        inputs.f_a.is_some(),
        inputs.f_y_given_ax.is_some(),
        inputs.f_ay.is_some(),
    );
    let bad = |msg: &str| Err(Error::invalid(format!("inconsistent group inputs: {msg}")));
    match (indexing, aware, have) {
        (GroupIndexing::Explicit { .. }, _, _) => {
            bad("explicit groups must be supplied as a score matrix")
        }
        (GroupIndexing::Attr { num_attrs }, true, (true, false, false, false)) => {
            let attrs = inputs.attr_labels.unwrap();
            let mut g = Array2::zeros((attrs.len(), num_attrs));
            for (i, &a) in attrs.iter().enumerate() {
                if a >= num_attrs {
                    return Err(Error::invalid(format!("sample {i}: attribute {a} out of range")));
                }
                g[[i, a]] = 1.0;
            }
            Ok(g)
        }
        (GroupIndexing::Attr { num_attrs }, false, (false, true, false, false)) => {
            let f_a = inputs.f_a.unwrap();
            if f_a.ncols() != num_attrs {
                return Err(Error::dims("f_A columns", num_attrs, f_a.ncols()));
            }
            check_simplex_rows(f_a, "f_A")?;
            Ok(f_a.mapv(clamp01))
        }
        (
            GroupIndexing::AttrLabel {
                num_attrs,
                num_classes,
            },
            true,
            (true, false, true, false),
        ) => {
            let attrs = inputs.attr_labels.unwrap();
            let f_y = inputs.f_y_given_ax.unwrap();
            check_conditional(f_y, attrs.len(), num_attrs, num_classes)?;
            let mut g = Array2::zeros((attrs.len(), num_attrs * num_classes));
            for (i, &a) in attrs.iter().enumerate() {
                if a >= num_attrs {
                    return Err(Error::invalid(format!("sample {i}: attribute {a} out of range")));
                }
                for y in 0..num_classes {
                    g[[i, a * num_classes + y]] = clamp01(f_y[[i, a, y]]);
                }
            }
            Ok(g)
        }
        (
            GroupIndexing::AttrLabel {
                num_attrs,
                num_classes,
            },
            false,
            (false, false, false, true),
        ) => {
            let f_ay = inputs.f_ay.unwrap();
            if f_ay.ncols() != num_attrs * num_classes {
                return Err(Error::dims("f_AY columns", num_attrs * num_classes, f_ay.ncols()));
            }
            check_simplex_rows(f_ay, "f_AY")?;
            Ok(f_ay.mapv(clamp01))
        }
        (
            GroupIndexing::AttrLabel {
                num_attrs,
                num_classes,
            },
            false,
            (false, true, true, false),
        ) => {
            let f_a = inputs.f_a.unwrap();
            let f_y = inputs.f_y_given_ax.unwrap();
            if f_a.ncols() != num_attrs {
                return Err(Error::dims("f_A columns", num_attrs, f_a.ncols()));
            }
            check_simplex_rows(f_a, "f_A")?;
            check_conditional(f_y, f_a.nrows(), num_attrs, num_classes)?;
            let mut g = Array2::zeros((f_a.nrows(), num_attrs * num_classes));
            for i in 0..f_a.nrows() {
                for a in 0..num_attrs {
                    for y in 0..num_classes {
                        g[[i, a * num_classes + y]] = clamp01(f_a[[i, a]] * f_y[[i, a, y]]);
                    }
                }
            }
            Ok(g)
        }
        (_, true, _) => bad("attribute-aware mode takes attribute labels (plus f_Y|A,X for label-defined groups)"),
        (_, false, _) => bad("attribute-blind mode takes f_A, f_AY, or f_A with f_Y|A,X"),
    }
}

fn check_conditional(f: ArrayView3<'_, f64>, n: usize, na: usize, nc: usize) -> Result<()> {
    if f.dim() != (n, na, nc) {
        return Err(Error::invalid(format!(
            "f_Y|A,X has shape {:?}, expected ({n}, {na}, {nc})",
            f.dim()
        )));
    }
    for i in 0..n {
        check_simplex_rows(f.index_axis(ndarray::Axis(0), i), "f_Y|A,X")?;
    }
    Ok(())
}

/// 0-1 loss pointwise risk: `r(x, y) = 1 - P(Y = y | x)`.
pub fn derive_risks(f_y: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    check_simplex_rows(f_y, "f_Y")?;
    Ok(f_y.mapv(|p| clamp01(1.0 - p)))
}
