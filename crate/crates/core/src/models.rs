//! Multinomial logistic regression, the plugin predictor used for
//! end-to-end runs, and helpers to split a joint `(A, Y)` predictor into
//! its marginals.

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Initial step size; each step is then chosen by backtracking.
    pub learning_rate: f64,
    pub epochs: usize,
    /// L2 penalty on the non-bias weights.
    pub l2: f64,
    /// Seeds the small random initial weights.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1.0,
            epochs: 300,
            l2: 1e-4,
            seed: 0,
        }
    }
}

/// Softmax-linear model over standardised features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    /// `(d + 1) x classes`; the last row is the bias.
    weights: Array2<f64>,
    mean: Array1<f64>,
    scale: Array1<f64>,
    config: TrainConfig,
    /// Training loss after each epoch.
    losses: Vec<f64>,
}

fn check_finite(x: ArrayView2<'_, f64>) -> Result<()> {
    if let Some(((i, j), v)) = x.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::invalid(format!("feature ({i}, {j}) is {v}")));
    }
    Ok(())
}

/// Appends a constant-one column.
fn with_bias(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let (n, d) = x.dim();
    let mut out = Array2::ones((n, d + 1));
    out.slice_mut(s![.., ..d]).assign(&x);
    out
}

fn softmax_rows(mut logits: Array2<f64>) -> Array2<f64> {
    for mut row in logits.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    logits
}

/// Mean cross-entropy plus `l2 / 2 * |W without bias row|^2`, and its
/// gradient. `xb` already carries the bias column.
pub fn loss_and_gradient(
    xb: ArrayView2<'_, f64>,
    labels: &[usize],
    weights: ArrayView2<'_, f64>,
    l2: f64,
) -> (f64, Array2<f64>) {
    let n = xb.nrows() as f64;
    let probs = softmax_rows(xb.dot(&weights));
    let mut loss = 0.0;
    let mut resid = probs;
    for (i, &y) in labels.iter().enumerate() {
        loss -= resid[[i, y]].max(1e-300).ln();
        resid[[i, y]] -= 1.0;
    }
    loss /= n;
    let mut grad = xb.t().dot(&resid) / n;
    let d = weights.nrows() - 1;
    let w = weights.slice(s![..d, ..]);
    loss += 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>();
    grad.slice_mut(s![..d, ..]).scaled_add(l2, &w);
    (loss, grad)
}

impl LogisticModel {
    /// Full-batch gradient descent with Armijo backtracking, so the training
    /// loss never increases between epochs.
    pub fn fit(
        features: ArrayView2<'_, f64>,
        labels: &[usize],
        num_classes: usize,
        config: &TrainConfig,
    ) -> Result<Self> {
        let (n, d) = features.dim();
        if n == 0 {
            return Err(Error::invalid("cannot fit on an empty dataset"));
        }
        if labels.len() != n {
            return Err(Error::dims("labels", n, labels.len()));
        }
        if num_classes < 2 {
            return Err(Error::invalid("need at least two classes"));
        }
        if let Some(y) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::invalid(format!("label {y} out of range")));
        }
        check_finite(features)?;
        if !(config.learning_rate > 0.0) || !(config.l2 >= 0.0) {
            return Err(Error::invalid("learning rate must be > 0 and l2 >= 0"));
        }

        let mean = features.mean_axis(Axis(0)).expect("n > 0");
        let scale = features.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
        let xs = (&features - &mean) / &scale;
        let xb = with_bias(xs.view());

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut w = Array2::from_shape_fn((d + 1, num_classes), |_| rng.gen_range(-1e-3..1e-3));
        let (mut loss, mut grad) = loss_and_gradient(xb.view(), labels, w.view(), config.l2);
        let mut step = config.learning_rate;
        let mut losses = Vec::with_capacity(config.epochs);
        for _ in 0..config.epochs {
            let gnorm2: f64 = grad.iter().map(|g| g * g).sum();
            if gnorm2 < 1e-20 {
                break;
            }
            let mut accepted = false;
            for _ in 0..60 {
                let cand = &w - &(&grad * step);
                let (cl, cg) = loss_and_gradient(xb.view(), labels, cand.view(), config.l2);
                if cl <= loss - 1e-4 * step * gnorm2 {
                    w = cand;
                    loss = cl;
                    grad = cg;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            losses.push(loss);
            if !accepted {
                break;
            }
            step = (step * 2.0).min(1e6);
        }
        Ok(LogisticModel {
            weights: w,
            mean,
            scale,
            config: *config,
            losses,
        })
    }

    /// Model with the given raw weights (`(d + 1) x classes`, bias last) and
    /// no feature standardisation.
    pub fn from_weights(weights: Array2<f64>) -> Result<Self> {
        if weights.nrows() < 1 || weights.ncols() < 2 {
            return Err(Error::invalid("weights need a bias row and two classes"));
        }
        if weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("weights must be finite"));
        }
        let d = weights.nrows() - 1;
        Ok(LogisticModel {
            weights,
            mean: Array1::zeros(d),
            scale: Array1::ones(d),
            config: TrainConfig::default(),
            losses: vec![],
        })
    }

    pub fn num_features(&self) -> usize {
        self.mean.len()
    }

    pub fn num_classes(&self) -> usize {
        self.weights.ncols()
    }

    pub fn weights(&self) -> ArrayView2<'_, f64> {
        self.weights.view()
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    pub fn predict_proba(&self, features: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if features.ncols() != self.num_features() {
            return Err(Error::dims("features", self.num_features(), features.ncols()));
        }
        check_finite(features)?;
        let xs = (&features - &self.mean) / &self.scale;
        Ok(softmax_rows(with_bias(xs.view()).dot(&self.weights)))
    }

    pub fn predict(&self, features: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        let p = self.predict_proba(features)?;
        Ok(p.rows().into_iter().map(|r| argmax(r)).collect())
    }
}

fn argmax(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Splits a joint predictor `P(A = a, Y = y | x)` (columns `a * |Y| + y`)
/// into `P(A | x)`, `P(Y | x)` and `P(Y | A, x)`. A zero-mass slice gives a
/// uniform conditional.
pub fn joint_to_marginals(
    f_ay: ArrayView2<'_, f64>,
    num_attrs: usize,
    num_classes: usize,
) -> Result<(Array2<f64>, Array2<f64>, Array3<f64>)> {
    let n = f_ay.nrows();
    if f_ay.ncols() != num_attrs * num_classes {
        return Err(Error::dims("joint columns", num_attrs * num_classes, f_ay.ncols()));
    }
    let mut f_a = Array2::zeros((n, num_attrs));
    let mut f_y = Array2::zeros((n, num_classes));
    let mut cond = Array3::zeros((n, num_attrs, num_classes));
    for i in 0..n {
        for a in 0..num_attrs {
            let slice = f_ay.slice(s![i, a * num_classes..(a + 1) * num_classes]);
            let mass = slice.sum();
            f_a[[i, a]] = mass;
            for y in 0..num_classes {
                f_y[[i, y]] += slice[y];
                cond[[i, a, y]] = if mass > 0.0 {
                    slice[y] / mass
                } else {
                    1.0 / num_classes as f64
                };
            }
        }
    }
    Ok((f_a, f_y, cond))
}

/// Model file target: which variable the model predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    /// The label `Y`.
    Y,
    /// The sensitive attribute `A`.
    A,
    /// The pair `(A, Y)`, classes `a * |Y| + y`.
    Joint,
}

/// A trained model together with what it predicts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub target: Target,
    pub num_attrs: usize,
    pub num_classes: usize,
    /// Feature column names the model was trained on, in order.
    pub features: Vec<String>,
    pub model: LogisticModel,
}

impl ModelFile {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let m: ModelFile = serde_json::from_slice(&std::fs::read(path)?)?;
        let expected = match m.target {
            Target::Y => m.num_classes,
            Target::A => m.num_attrs,
            Target::Joint => m.num_attrs * m.num_classes,
        };
        if m.model.num_classes() != expected {
            return Err(Error::Format(format!(
                "model predicts {} classes, target needs {expected}",
                m.model.num_classes()
            )));
        }
        if m.model.num_features() != m.features.len() {
            return Err(Error::Format("model feature count does not match its column list".into()));
        }
        Ok(m)
    }
}
