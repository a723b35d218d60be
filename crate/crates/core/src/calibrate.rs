//! Calibration of predicted probabilities (Platt scaling, isotonic
//! regression) and the binned multicalibration error of group scores.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_lengths(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::dims("labels", scores.len(), labels.len()));
    }
    if scores.is_empty() {
        return Err(Error::invalid("calibration needs at least one sample"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("scores must be finite"));
    }
    Ok(())
}

fn check_binary(scores: &[f64], labels: &[bool]) -> Result<()> {
    check_lengths(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::invalid("calibration needs both label values"));
    }
    Ok(())
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `s -> sigmoid(a * s + b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Platt {
    pub a: f64,
    pub b: f64,
}

impl Platt {
    pub fn apply(&self, s: f64) -> f64 {
        sigmoid(self.a * s + self.b)
    }
}

fn platt_loss(scores: &[f64], labels: &[bool], a: f64, b: f64) -> f64 {
    scores
        .iter()
        .zip(labels)
        .map(|(&s, &l)| {
            let t = a * s + b;
            // log(1 + e^t) - l * t, computed stably.
            let softplus = if t > 0.0 { t + (-t).exp().ln_1p() } else { t.exp().ln_1p() };
            softplus - if l { t } else { 0.0 }
        })
        .sum::<f64>()
        / scores.len() as f64
}

/// Fits Platt scaling by damped Newton on the mean logistic loss.
pub fn platt(scores: &[f64], labels: &[bool]) -> Result<Platt> {
    check_binary(scores, labels)?;
    let n = scores.len() as f64;
    let (mut a, mut b) = (1.0, 0.0);
    let mut loss = platt_loss(scores, labels, a, b);
    for _ in 0..100 {
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&s, &l) in scores.iter().zip(labels) {
            let p = sigmoid(a * s + b);
            let r = p - if l { 1.0 } else { 0.0 };
            let v = p * (1.0 - p);
            ga += r * s;
            gb += r;
            haa += v * s * s;
            hab += v * s;
            hbb += v;
        }
        let (ga, gb) = (ga / n, gb / n);
        // A tiny ridge keeps the Hessian invertible on separable data.
        let (haa, hab, hbb) = (haa / n + 1e-12, hab / n, hbb / n + 1e-12);
        let det = haa * hbb - hab * hab;
        let (da, db) = if det > 1e-300 {
            ((hbb * ga - hab * gb) / det, (haa * gb - hab * ga) / det)
        } else {
            (ga, gb)
        };
        let mut t = 1.0;
        let mut improved = false;
        while t > 1e-10 {
            let (na, nb) = (a - t * da, b - t * db);
            let nl = platt_loss(scores, labels, na, nb);
            if nl <= loss {
                improved = loss - nl > 1e-15;
                a = na;
                b = nb;
                loss = nl;
                break;
            }
            t *= 0.5;
        }
        if !improved || (ga.abs() + gb.abs()) < 1e-12 {
            break;
        }
    }
    Ok(Platt { a, b })
}

/// Nondecreasing step function from pool-adjacent-violators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Isotonic {
    /// Smallest score of each pooled block, ascending.
    lower: Vec<f64>,
    values: Vec<f64>,
}

impl Isotonic {
    /// Value of the last block starting at or below `s`; scores below the
    /// first block get its value.
    pub fn apply(&self, s: f64) -> f64 {
        let idx = self.lower.partition_point(|&lo| lo <= s);
        self.values[idx.saturating_sub(1)]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Least-squares nondecreasing fit. Samples with equal scores are pooled
/// before the violators pass, so the map is a function of the score. With a
/// single label value the map is that constant.
pub fn isotonic(scores: &[f64], labels: &[bool]) -> Result<Isotonic> {
    check_lengths(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));
    // Blocks as (lower score, total weight, mean).
    let mut blocks: Vec<(f64, f64, f64)> = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let mut cnt = 0.0;
        let mut sum = 0.0;
        while i < order.len() && scores[order[i]] == s {
            cnt += 1.0;
            sum += if labels[order[i]] { 1.0 } else { 0.0 };
            i += 1;
        }
        blocks.push((s, cnt, sum / cnt));
        while blocks.len() >= 2 && blocks[blocks.len() - 2].2 > blocks[blocks.len() - 1].2 {
            let (_, w2, m2) = blocks.pop().expect("two blocks");
            let last = blocks.last_mut().expect("one block");
            let w = last.1 + w2;
            last.2 = (last.1 * last.2 + w2 * m2) / w;
            last.1 = w;
        }
    }
    Ok(Isotonic {
        lower: blocks.iter().map(|b| b.0).collect(),
        values: blocks.iter().map(|b| b.2).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Platt,
    Isotonic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Calibrator {
    Platt(Platt),
    Isotonic(Isotonic),
}

/// Log-odds of a probability, clamped away from 0 and 1.
fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    (p / (1.0 - p)).ln()
}

/// Calibration map for probability scores. Platt scaling is fitted on their
/// log-odds, so a calibrated input maps to itself with `a = 1, b = 0`.
impl Calibrator {
    pub fn fit(method: Method, scores: &[f64], labels: &[bool]) -> Result<Self> {
        Ok(match method {
            Method::Platt => {
                let z: Vec<f64> = scores.iter().map(|&p| logit(p)).collect();
                Calibrator::Platt(platt(&z, labels)?)
            }
            Method::Isotonic => Calibrator::Isotonic(isotonic(scores, labels)?),
        })
    }

    pub fn apply(&self, p: f64) -> f64 {
        match self {
            Calibrator::Platt(m) => m.apply(logit(p)),
            Calibrator::Isotonic(m) => m.apply(p),
        }
    }
}

/// One-vs-rest calibrators for every column of a probability matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnCalibrator {
    maps: Vec<Calibrator>,
}

impl ColumnCalibrator {
    pub fn fit(probs: ArrayView2<'_, f64>, labels: &[usize], method: Method) -> Result<Self> {
        if labels.len() != probs.nrows() {
            return Err(Error::dims("labels", probs.nrows(), labels.len()));
        }
        let maps = (0..probs.ncols())
            .map(|j| {
                let col: Vec<f64> = probs.column(j).to_vec();
                let hits: Vec<bool> = labels.iter().map(|&y| y == j).collect();
                Calibrator::fit(method, &col, &hits)
                    .map_err(|e| Error::invalid(format!("cell {j}: {e}")))
            })
            .collect::<Result<_>>()?;
        Ok(ColumnCalibrator { maps })
    }

    /// Calibrates each cell, then renormalises rows onto the simplex
    /// (all-zero rows become uniform).
    pub fn apply(&self, probs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if probs.ncols() != self.maps.len() {
            return Err(Error::dims("probability columns", self.maps.len(), probs.ncols()));
        }
        let mut out = Array2::zeros(probs.dim());
        for (i, row) in probs.rows().into_iter().enumerate() {
            for (j, &p) in row.iter().enumerate() {
                out[[i, j]] = self.maps[j].apply(p).clamp(0.0, 1.0);
            }
            let total: f64 = out.row(i).sum();
            let k = self.maps.len() as f64;
            out.row_mut(i)
                .mapv_inplace(|v| if total > 0.0 { v / total } else { 1.0 / k });
        }
        Ok(out)
    }
}

/// Fits per-cell calibrators on `(f_ay, labels_ay)` and applies them to the
/// same matrix.
pub fn calibrate_joint(f_ay: ArrayView2<'_, f64>, labels_ay: &[usize], method: Method) -> Result<Array2<f64>> {
    ColumnCalibrator::fit(f_ay, labels_ay, method)?.apply(f_ay)
}

/// Per-group binned multicalibration error
/// `(2 / m_k) * sum_bins |E[(g_hat_k - z_k) 1[bin]]|` with `m_k = E[z_k]`.
pub fn multical_error(
    g_hat: ArrayView2<'_, f64>,
    z_true: ArrayView2<'_, f64>,
    level_keys: &[usize],
    weights: Option<ArrayView1<'_, f64>>,
) -> Result<Vec<f64>> {
    let n = g_hat.nrows();
    if z_true.dim() != g_hat.dim() {
        return Err(Error::dims("true group rows", n, z_true.nrows()));
    }
    if level_keys.len() != n {
        return Err(Error::dims("level keys", n, level_keys.len()));
    }
    let uniform = vec![1.0 / n as f64; n];
    let w: Vec<f64> = match weights {
        Some(w) if w.len() == n => w.to_vec(),
        Some(w) => return Err(Error::dims("weights", n, w.len())),
        None => uniform,
    };
    let num_bins = level_keys.iter().max().map_or(0, |m| m + 1);
    (0..g_hat.ncols())
        .map(|k| {
            let m: f64 = (0..n).map(|i| w[i] * z_true[[i, k]]).sum();
            if m <= 0.0 {
                return Err(Error::EmptyGroup { group: k });
            }
            let mut per_bin = vec![0.0; num_bins];
            for i in 0..n {
                per_bin[level_keys[i]] += w[i] * (g_hat[[i, k]] - z_true[[i, k]]);
            }
            Ok(2.0 / m * per_bin.iter().map(|v| v.abs()).sum::<f64>())
        })
        .collect()
}

/// Quantile bin of every entry of `col`, with ties kept together.
fn quantile_bins(col: ArrayView1<'_, f64>, bins: usize) -> Vec<usize> {
    let n = col.len();
    let mut sorted: Vec<f64> = col.to_vec();
    sorted.sort_by(f64::total_cmp);
    col.iter()
        .map(|v| {
            let below = sorted.partition_point(|s| s < v);
            (below * bins / n.max(1)).min(bins - 1)
        })
        .collect()
}

/// Dense level-set ids over the columns of `r` and `g`, binning each
/// coordinate by quantiles. The per-coordinate bin count shrinks so the
/// number of joint cells stays within `max_bins`.
pub fn level_keys(
    r: ArrayView2<'_, f64>,
    g: ArrayView2<'_, f64>,
    bins_per_coord: usize,
    max_bins: usize,
) -> Result<Vec<usize>> {
    if r.nrows() != g.nrows() {
        return Err(Error::dims("group rows", r.nrows(), g.nrows()));
    }
    if bins_per_coord == 0 || max_bins == 0 {
        return Err(Error::invalid("bin counts must be positive"));
    }
    let dims = r.ncols() + g.ncols();
    let mut b = bins_per_coord;
    while b > 1 && (b as f64).powi(dims as i32) > max_bins as f64 {
        b -= 1;
    }
    let cols: Vec<Vec<usize>> = r
        .columns()
        .into_iter()
        .chain(g.columns())
        .map(|c| quantile_bins(c, b))
        .collect();
    let mut ids = std::collections::HashMap::new();
    Ok((0..r.nrows())
        .map(|i| {
            let key: Vec<usize> = cols.iter().map(|c| c[i]).collect();
            let next = ids.len();
            *ids.entry(key).or_insert(next)
        })
        .collect())
}

pub const DEFAULT_BINS_PER_COORD: usize = 10;
pub const DEFAULT_MAX_BINS: usize = 1000;

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn pav_hand_example() {
        let m = isotonic(&[1.0, 2.0, 3.0, 4.0], &[false, true, false, true]).unwrap();
        let fitted: Vec<f64> = [1.0, 2.0, 3.0, 4.0].iter().map(|&s| m.apply(s)).collect();
        assert_eq!(fitted, vec![0.0, 0.5, 0.5, 1.0]);
    }

    #[test]
    fn pav_pools_ties() {
        let m = isotonic(&[1.0, 1.0, 2.0], &[true, false, true]).unwrap();
        assert_eq!(m.apply(1.0), 0.5);
        assert_eq!(m.apply(2.0), 1.0);
    }

    #[test]
    fn single_class_labels() {
        assert!(platt(&[0.1, 0.2], &[true, true]).is_err());
        assert!(isotonic(&[0.1, 0.2], &[true, false, true]).is_err());
        let all_ones = isotonic(&[0.1, 0.5, 0.2], &[true, true, true]).unwrap();
        assert!(all_ones.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn anti_correlated_platt() {
        let s: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        let l: Vec<bool> = s.iter().enumerate().map(|(i, &v)| v < 0.5 || i % 7 == 0).collect();
        assert!(platt(&s, &l).unwrap().a < 0.0);
    }

    #[test]
    fn multical_examples() {
        let z = array![[1.0, 0.0], [0.0, 1.0]];
        assert_eq!(multical_error(z.view(), z.view(), &[0, 1], None).unwrap(), vec![0.0, 0.0]);
        let g = array![[0.6], [0.6]];
        let z = array![[1.0], [0.0]];
        let e = multical_error(g.view(), z.view(), &[0, 0], None).unwrap();
        assert!((e[0] - 0.4).abs() < 1e-12);
        let g = array![[0.9], [0.1]];
        let e = multical_error(g.view(), z.view(), &[0, 0], None).unwrap();
        assert!(e[0].abs() < 1e-12);
        let z0 = array![[0.0], [0.0]];
        assert!(matches!(
            multical_error(g.view(), z0.view(), &[0, 0], None),
            Err(Error::EmptyGroup { group: 0 })
        ));
    }

    #[test]
    fn level_keys_cap() {
        let r = Array2::from_shape_fn((200, 2), |(i, j)| ((i * 7 + j * 13) % 100) as f64);
        let g = Array2::from_shape_fn((200, 2), |(i, j)| ((i * 11 + j * 3) % 97) as f64);
        let keys = level_keys(r.view(), g.view(), 10, 1000).unwrap();
        let distinct: std::collections::HashSet<_> = keys.iter().collect();
        assert!(distinct.len() <= 1000);
        assert_eq!(*keys.iter().max().unwrap() + 1, distinct.len());
    }

    #[test]
    fn one_hot_joint_is_unchanged() {
        let f = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]];
        let out = calibrate_joint(f.view(), &[0, 1, 2, 0], Method::Isotonic).unwrap();
        assert_eq!(out, f);
    }
}
