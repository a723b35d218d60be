//! The fairness-risk prediction rule and its randomised classifier.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::{Label, NoiseSpec, PostprocessParams, ScoreBundle};

const FIT_STREAM: u64 = 0;
const PREDICT_STREAM: u64 = 1;
const SAMPLE_STREAM_BASE: u64 = 2;

/// `r[y] + sum_k g[k] * w[y, k]` for every class `y`.
pub fn fairness_risk(
    r_row: ArrayView1<'_, f64>,
    g_row: ArrayView1<'_, f64>,
    weights_w: ArrayView2<'_, f64>,
) -> Result<Vec<f64>> {
    if weights_w.nrows() != r_row.len() {
        return Err(Error::dims("weight rows", r_row.len(), weights_w.nrows()));
    }
    if weights_w.ncols() != g_row.len() {
        return Err(Error::dims("weight columns", g_row.len(), weights_w.ncols()));
    }
    Ok(r_row
        .iter()
        .zip(weights_w.rows())
        .map(|(r, w)| r + w.dot(&g_row))
        .collect())
}

/// Index of the smallest entry; ties go to the smallest index.
pub(crate) fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

fn noise_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// splitmix64 finaliser, used to derive independent seeds for repeated batches.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn draw_into(rng: &mut ChaCha8Rng, sigma: f64, out: &mut [f64]) {
    if sigma > 0.0 {
        for v in out.iter_mut() {
            *v = rng.gen_range(-sigma..sigma);
        }
    } else {
        out.fill(0.0);
    }
}

/// Adds an independent `U(-sigma, sigma)` draw to every entry.
pub fn perturb(risks: ArrayView2<'_, f64>, noise: NoiseSpec) -> Array2<f64> {
    let mut out = risks.to_owned();
    if noise.sigma > 0.0 {
        let mut rng = noise_rng(noise.seed, FIT_STREAM);
        for v in out.iter_mut() {
            *v += rng.gen_range(-noise.sigma..noise.sigma);
        }
    }
    out
}

/// Post-processed classifier `x -> argmin_y r(x, y) + xi_y + sum_k g(x, k) w(y, k)`
/// with fresh noise `xi` on every call.
#[derive(Debug, Clone)]
pub struct RandomizedClassifier {
    params: PostprocessParams,
    rng: ChaCha8Rng,
    batches: u64,
}

impl RandomizedClassifier {
    pub fn new(params: PostprocessParams) -> Self {
        let rng = noise_rng(params.noise().seed, PREDICT_STREAM);
        RandomizedClassifier {
            params,
            rng,
            batches: 0,
        }
    }

    pub fn params(&self) -> &PostprocessParams {
        &self.params
    }

    fn check_dims(&self, r_len: usize, g_len: usize) -> Result<()> {
        if r_len != self.params.num_classes() {
            return Err(Error::dims("risk row", self.params.num_classes(), r_len));
        }
        if g_len != self.params.num_groups() {
            return Err(Error::dims("group row", self.params.num_groups(), g_len));
        }
        Ok(())
    }

    /// Checks that a bundle matches the classifier's class and group counts.
    pub fn check_bundle(&self, scores: &ScoreBundle) -> Result<()> {
        self.check_dims(scores.num_classes(), scores.num_groups())
    }

    /// Prediction under an explicit noise vector.
    pub fn predict_with_noise(
        &self,
        r_row: ArrayView1<'_, f64>,
        g_row: ArrayView1<'_, f64>,
        xi: &[f64],
    ) -> Result<Label> {
        self.check_dims(r_row.len(), g_row.len())?;
        if xi.len() != r_row.len() {
            return Err(Error::dims("noise", r_row.len(), xi.len()));
        }
        let mut fr = fairness_risk(r_row, g_row, self.params.weights_w())?;
        for (v, x) in fr.iter_mut().zip(xi) {
            *v += x;
        }
        Ok(Label(argmin(&fr)))
    }

    /// Draws fresh noise and predicts.
    pub fn predict(&mut self, r_row: ArrayView1<'_, f64>, g_row: ArrayView1<'_, f64>) -> Result<Label> {
        let mut xi = vec![0.0; r_row.len()];
        draw_into(&mut self.rng, self.params.noise().sigma, &mut xi);
        self.predict_with_noise(r_row, g_row, &xi)
    }

    /// Noise-free prediction (`xi = 0`) for every sample.
    pub fn predict_deterministic(&self, scores: &ScoreBundle) -> Result<Vec<usize>> {
        self.check_bundle(scores)?;
        let zero = vec![0.0; scores.num_classes()];
        (0..scores.len())
            .map(|i| {
                self.predict_with_noise(scores.risks().row(i), scores.groups().row(i), &zero)
                    .map(Label::index)
            })
            .collect()
    }

    /// One prediction per sample with fresh noise. Sample `i` of batch `b`
    /// uses its own stream derived from `(seed, b, i)`, so results do not
    /// depend on thread scheduling.
    pub fn predict_batch(&mut self, scores: &ScoreBundle) -> Result<Vec<usize>> {
        self.check_bundle(scores)?;
        let batch = self.batches;
        self.batches += 1;
        let seed = mix(self.params.noise().seed ^ mix(batch));
        let sigma = self.params.noise().sigma;
        let this = &*self;
        (0..scores.len())
            .into_par_iter()
            .map(|i| {
                let mut rng = noise_rng(seed, SAMPLE_STREAM_BASE + i as u64);
                let mut xi = vec![0.0; scores.num_classes()];
                draw_into(&mut rng, sigma, &mut xi);
                this.predict_with_noise(scores.risks().row(i), scores.groups().row(i), &xi)
                    .map(Label::index)
            })
            .collect()
    }

    /// Monte-Carlo estimate of `P(h(x_i) = y)` from `draws` noise draws per
    /// sample. Deterministic given the seed; exact one-hot when `sigma = 0`.
    pub fn class_frequencies(&self, scores: &ScoreBundle, draws: usize) -> Result<Array2<f64>> {
        self.check_bundle(scores)?;
        let sigma = self.params.noise().sigma;
        let nc = scores.num_classes();
        let mut out = Array2::<f64>::zeros((scores.len(), nc));
        if sigma == 0.0 {
            for (i, y) in self.predict_deterministic(scores)?.into_iter().enumerate() {
                out[[i, y]] = 1.0;
            }
            return Ok(out);
        }
        if draws == 0 {
            return Err(Error::invalid("Monte-Carlo evaluation needs at least one draw"));
        }
        let seed = mix(self.params.noise().seed ^ 0x5eed_f00d);
        let rows: Vec<Vec<f64>> = (0..scores.len())
            .into_par_iter()
            .map(|i| {
                let mut rng = noise_rng(seed, SAMPLE_STREAM_BASE + i as u64);
                let fr = fairness_risk(
                    scores.risks().row(i),
                    scores.groups().row(i),
                    self.params.weights_w(),
                )
                .expect("dimensions checked");
                let mut counts = vec![0usize; nc];
                let mut xi = vec![0.0; nc];
                for _ in 0..draws {
                    draw_into(&mut rng, sigma, &mut xi);
                    let noisy: Vec<f64> = fr.iter().zip(&xi).map(|(a, b)| a + b).collect();
                    counts[argmin(&noisy)] += 1;
                }
                counts.iter().map(|&c| c as f64 / draws as f64).collect()
            })
            .collect();
        for (i, row) in rows.into_iter().enumerate() {
            for (y, v) in row.into_iter().enumerate() {
                out[[i, y]] = v;
            }
        }
        Ok(out)
    }
}
