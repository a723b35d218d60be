//! Domain types shared by every stage of the pipeline.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `sum(weights) == 1`.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;
/// Tolerance on `sum_k psi[c, k] == 0` for every constraint.
pub const PSI_SUM_TOL: f64 = 1e-7;

/// A class id in `[0, num_classes)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Label(pub usize);

impl Label {
    pub fn new(index: usize, num_classes: usize) -> Result<Self> {
        if index >= num_classes {
            return Err(Error::invalid(format!(
                "label {index} out of range for {num_classes} classes"
            )));
        }
        Ok(Label(index))
    }

    pub fn index(self) -> usize {
        self.0
    }
}

/// One parity requirement: the rate of predicting `class` must agree across
/// every group in `groups`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Constraint {
    pub class: usize,
    pub groups: Vec<usize>,
}

impl Constraint {
    pub fn new(class: usize, groups: Vec<usize>) -> Self {
        Constraint { class, groups }
    }
}

/// A collection of parity constraints with a common tolerance `alpha`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessSpec {
    num_classes: usize,
    num_groups: usize,
    constraints: Vec<Constraint>,
    alpha: f64,
}

impl FairnessSpec {
    pub fn new(
        num_classes: usize,
        num_groups: usize,
        constraints: Vec<Constraint>,
        alpha: f64,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::invalid("need at least two classes"));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::invalid(format!("alpha {alpha} outside [0, 1]")));
        }
        for (c, con) in constraints.iter().enumerate() {
            if con.class >= num_classes {
                return Err(Error::invalid(format!(
                    "constraint {c}: class {} out of range for {num_classes} classes",
                    con.class
                )));
            }
            if con.groups.len() < 2 {
                return Err(Error::invalid(format!(
                    "constraint {c}: needs at least two groups"
                )));
            }
            for (i, &k) in con.groups.iter().enumerate() {
                if k >= num_groups {
                    return Err(Error::invalid(format!(
                        "constraint {c}: group {k} out of range for {num_groups} groups"
                    )));
                }
                if con.groups[..i].contains(&k) {
                    return Err(Error::invalid(format!(
                        "constraint {c}: group {k} listed twice"
                    )));
                }
            }
        }
        Ok(FairnessSpec {
            num_classes,
            num_groups,
            constraints,
            alpha,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_groups(&self) -> usize {
        self.num_groups
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        FairnessSpec::new(
            self.num_classes,
            self.num_groups,
            self.constraints.clone(),
            alpha,
        )
    }

    /// Every `(constraint, group)` pair in constraint order, then group order.
    /// Dual values and the fairness rows of the linear programs use this order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.constraints
            .iter()
            .enumerate()
            .flat_map(|(c, con)| con.groups.iter().map(move |&k| (c, k)))
            .collect()
    }

    pub fn num_pairs(&self) -> usize {
        self.constraints.iter().map(|c| c.groups.len()).sum()
    }

    /// Groups referenced by at least one constraint, ascending.
    pub fn referenced_groups(&self) -> Vec<usize> {
        let mut used = vec![false; self.num_groups];
        for con in &self.constraints {
            for &k in &con.groups {
                used[k] = true;
            }
        }
        (0..self.num_groups).filter(|&k| used[k]).collect()
    }
}

/// Per-sample pointwise risks, group scores and sample weights.
///
/// Weights generalise the uniform empirical measure, so exact finite
/// distributions can be represented without sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreBundle {
    risks: Array2<f64>,
    groups: Array2<f64>,
    weights: Array1<f64>,
}

impl ScoreBundle {
    pub fn new(risks: Array2<f64>, groups: Array2<f64>, weights: Array1<f64>) -> Result<Self> {
        let n = risks.nrows();
        if groups.nrows() != n {
            return Err(Error::dims("group rows", n, groups.nrows()));
        }
        if weights.len() != n {
            return Err(Error::dims("weights", n, weights.len()));
        }
        if n == 0 {
            return Err(Error::invalid("score bundle has no samples"));
        }
        if risks.ncols() < 2 {
            return Err(Error::invalid("need at least two classes"));
        }
        if let Some(v) = risks.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::invalid(format!("risk {v} is not finite and >= 0")));
        }
        if let Some(v) = groups.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("group score {v} outside [0, 1]")));
        }
        if let Some(v) = weights.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::invalid(format!("weight {v} is not finite and >= 0")));
        }
        let total: f64 = weights.sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::invalid(format!("weights sum to {total}, expected 1")));
        }
        Ok(ScoreBundle {
            risks,
            groups,
            weights,
        })
    }

    /// Bundle with uniform weights `1/n`.
    pub fn uniform(risks: Array2<f64>, groups: Array2<f64>) -> Result<Self> {
        let n = risks.nrows();
        let w = Array1::from_elem(n, 1.0 / n.max(1) as f64);
        // 1/n summed n times can drift by an ulp or two; renormalise exactly.
        let w = renormalize(w);
        ScoreBundle::new(risks, groups, w)
    }

    pub fn len(&self) -> usize {
        self.risks.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_classes(&self) -> usize {
        self.risks.ncols()
    }

    pub fn num_groups(&self) -> usize {
        self.groups.ncols()
    }

    pub fn risks(&self) -> ArrayView2<'_, f64> {
        self.risks.view()
    }

    pub fn groups(&self) -> ArrayView2<'_, f64> {
        self.groups.view()
    }

    pub fn weights(&self) -> ArrayView1<'_, f64> {
        self.weights.view()
    }

    /// Weighted column means of the group scores.
    pub fn group_mass(&self) -> Vec<f64> {
        (0..self.num_groups())
            .map(|k| {
                self.groups
                    .column(k)
                    .iter()
                    .zip(self.weights.iter())
                    .map(|(g, w)| g * w)
                    .sum()
            })
            .collect()
    }

    /// Same groups and weights, different risks.
    pub fn with_risks(&self, risks: Array2<f64>) -> Result<Self> {
        ScoreBundle::new(risks, self.groups.clone(), self.weights.clone())
    }

    /// Same groups and weights with perturbed risks, which may dip below zero.
    pub(crate) fn with_perturbed_risks(&self, risks: Array2<f64>) -> Result<Self> {
        if risks.dim() != self.risks.dim() {
            return Err(Error::invalid(format!(
                "risks have shape {:?}, expected {:?}",
                risks.dim(),
                self.risks.dim()
            )));
        }
        if risks.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("perturbed risks must be finite"));
        }
        Ok(ScoreBundle {
            risks,
            groups: self.groups.clone(),
            weights: self.weights.clone(),
        })
    }

    /// Same risks and weights, different group scores.
    pub fn with_groups(&self, groups: Array2<f64>) -> Result<Self> {
        ScoreBundle::new(self.risks.clone(), groups, self.weights.clone())
    }

    /// Rows selected by `idx`, with weights renormalised to sum to one.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let risks = self.risks.select(ndarray::Axis(0), idx);
        let groups = self.groups.select(ndarray::Axis(0), idx);
        let w = self.weights.select(ndarray::Axis(0), idx);
        if w.sum() <= 0.0 {
            return Err(Error::invalid("subset has zero total weight"));
        }
        ScoreBundle::new(risks, groups, renormalize(w))
    }

    /// Checks the bundle against a spec: matching dimensions, positive mass
    /// for every referenced group.
    pub fn check_spec(&self, spec: &FairnessSpec) -> Result<()> {
        if spec.num_classes() != self.num_classes() {
            return Err(Error::dims("classes", spec.num_classes(), self.num_classes()));
        }
        if spec.num_groups() != self.num_groups() {
            return Err(Error::dims("groups", spec.num_groups(), self.num_groups()));
        }
        let mass = self.group_mass();
        for k in spec.referenced_groups() {
            if mass[k] <= 0.0 {
                return Err(Error::EmptyGroup { group: k });
            }
        }
        Ok(())
    }
}

/// Divides by the sum, then nudges the largest entry so the sum is as close
/// to one as floating point allows.
pub(crate) fn renormalize(mut w: Array1<f64>) -> Array1<f64> {
    let total: f64 = w.sum();
    w.mapv_inplace(|v| v / total);
    let drift = 1.0 - w.sum();
    if drift != 0.0 {
        if let Some((i, _)) = w
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
        {
            w[i] += drift;
        }
    }
    w
}

/// Uniform per-class perturbation `U(-sigma, sigma)` and its seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!("sigma {sigma} must be finite and >= 0")));
        }
        Ok(NoiseSpec { sigma, seed })
    }

    pub fn none(seed: u64) -> Self {
        NoiseSpec { sigma: 0.0, seed }
    }

    /// `sigma = 1e-4 * E[max_y r(X, y)]` under the bundle's weights.
    pub fn default_for(scores: &ScoreBundle, seed: u64) -> Self {
        let mean_max: f64 = scores
            .risks()
            .rows()
            .into_iter()
            .zip(scores.weights().iter())
            .map(|(row, w)| w * row.iter().fold(0.0f64, |m, v| m.max(v.abs())))
            .sum();
        NoiseSpec {
            sigma: 1e-4 * mean_max,
            seed,
        }
    }
}

/// Everything needed to run the post-processed classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct PostprocessParams {
    spec: FairnessSpec,
    psi: Vec<f64>,
    group_mass: Vec<f64>,
    weights_w: Array2<f64>,
    noise: NoiseSpec,
}

impl PostprocessParams {
    /// Builds params from dual values ordered as `spec.pairs()`, deriving
    /// `w(y, k) = -sum_{c: y_c = y, k in I_c} psi[c, k] / mass[k]`.
    pub fn new(
        spec: FairnessSpec,
        psi: Vec<f64>,
        group_mass: Vec<f64>,
        noise: NoiseSpec,
    ) -> Result<Self> {
        let pairs = spec.pairs();
        if psi.len() != pairs.len() {
            return Err(Error::dims("psi", pairs.len(), psi.len()));
        }
        if group_mass.len() != spec.num_groups() {
            return Err(Error::dims("group mass", spec.num_groups(), group_mass.len()));
        }
        let mut offset = 0;
        for (c, con) in spec.constraints().iter().enumerate() {
            let s: f64 = psi[offset..offset + con.groups.len()].iter().sum();
            let scale = psi[offset..offset + con.groups.len()]
                .iter()
                .fold(1.0f64, |m, v| m.max(v.abs()));
            if s.abs() > PSI_SUM_TOL * scale {
                return Err(Error::invalid(format!(
                    "dual values of constraint {c} sum to {s}, expected 0"
                )));
            }
            offset += con.groups.len();
        }
        let mut w = Array2::<f64>::zeros((spec.num_classes(), spec.num_groups()));
        for (&(c, k), &p) in pairs.iter().zip(&psi) {
            let m = group_mass[k];
            if m <= 0.0 {
                return Err(Error::EmptyGroup { group: k });
            }
            w[[spec.constraints()[c].class, k]] -= p / m;
        }
        Ok(PostprocessParams {
            spec,
            psi,
            group_mass,
            weights_w: w,
            noise,
        })
    }

    /// Reassembles params from stored parts; `weights_w` is kept as stored.
    pub(crate) fn from_parts(
        spec: FairnessSpec,
        psi: Vec<f64>,
        group_mass: Vec<f64>,
        weights_w: Array2<f64>,
        noise: NoiseSpec,
    ) -> Result<Self> {
        if weights_w.dim() != (spec.num_classes(), spec.num_groups()) {
            return Err(Error::Format("weight matrix shape does not match spec".into()));
        }
        if psi.len() != spec.num_pairs() || group_mass.len() != spec.num_groups() {
            return Err(Error::Format("dual values do not match spec".into()));
        }
        Ok(PostprocessParams {
            spec,
            psi,
            group_mass,
            weights_w,
            noise,
        })
    }

    /// Params with all weights zero: the plain argmin-risk classifier.
    pub fn unconstrained(num_classes: usize, num_groups: usize, noise: NoiseSpec) -> Result<Self> {
        let spec = FairnessSpec::new(num_classes, num_groups, vec![], 1.0)?;
        PostprocessParams::new(spec, vec![], vec![1.0; num_groups], noise)
    }

    pub fn spec(&self) -> &FairnessSpec {
        &self.spec
    }

    /// Dual values ordered as `spec().pairs()`.
    pub fn psi(&self) -> &[f64] {
        &self.psi
    }

    pub fn psi_at(&self, constraint: usize, group: usize) -> Option<f64> {
        self.spec
            .pairs()
            .iter()
            .position(|&p| p == (constraint, group))
            .map(|i| self.psi[i])
    }

    pub fn group_mass(&self) -> &[f64] {
        &self.group_mass
    }

    pub fn weights_w(&self) -> ArrayView2<'_, f64> {
        self.weights_w.view()
    }

    pub fn noise(&self) -> NoiseSpec {
        self.noise
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes()
    }

    pub fn num_groups(&self) -> usize {
        self.spec.num_groups()
    }

    /// Per-constraint `sum_k psi[c, k]`.
    pub fn psi_sums(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.spec.constraints().len());
        let mut offset = 0;
        for con in self.spec.constraints() {
            out.push(self.psi[offset..offset + con.groups.len()].iter().sum());
            offset += con.groups.len();
        }
        out
    }
}
