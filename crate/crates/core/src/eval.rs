//! Risk and fairness measurement, estimation-error metrics, and alpha sweeps.
//!
//! Everything is computed from a *policy*: an `n x |Y|` row-stochastic
//! matrix giving the probability of each prediction on each sample. A fitted
//! classifier yields its policy exactly when noise is off and by Monte Carlo
//! otherwise; the optimal tabular policy of the fairness program can be
//! evaluated directly.

use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::Serialize;

use crate::classifier::RandomizedClassifier;
use crate::error::{Error, Result};
use crate::postprocess::{linear_post, PostOptions};
use crate::types::{FairnessSpec, NoiseSpec, ScoreBundle};

pub const DEFAULT_MC_DRAWS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RiskMode {
    /// Exact when noise is off; otherwise `DEFAULT_MC_DRAWS` noise draws.
    Analytic,
    /// Average over this many noise draws per sample.
    MonteCarlo(usize),
}

/// Probability of each prediction on each sample.
pub fn classifier_policy(
    h: &RandomizedClassifier,
    scores: &ScoreBundle,
    mode: RiskMode,
) -> Result<Array2<f64>> {
    let draws = match mode {
        RiskMode::Analytic => DEFAULT_MC_DRAWS,
        RiskMode::MonteCarlo(m) => m,
    };
    h.class_frequencies(scores, draws)
}

fn check_policy(policy: ArrayView2<'_, f64>, n: usize, nc: usize) -> Result<()> {
    if policy.dim() != (n, nc) {
        return Err(Error::invalid(format!(
            "policy has shape {:?}, expected ({n}, {nc})",
            policy.dim()
        )));
    }
    Ok(())
}

/// `sum_i w_i sum_y r(i, y) pi(i, y)`.
pub fn policy_risk(
    policy: ArrayView2<'_, f64>,
    risks: ArrayView2<'_, f64>,
    weights: ArrayView1<'_, f64>,
) -> Result<f64> {
    check_policy(policy, risks.nrows(), risks.ncols())?;
    if weights.len() != risks.nrows() {
        return Err(Error::dims("weights", risks.nrows(), weights.len()));
    }
    Ok(policy
        .rows()
        .into_iter()
        .zip(risks.rows())
        .zip(weights.iter())
        .map(|((p, r), w)| w * p.dot(&r))
        .sum())
}

/// A risk value with its Monte-Carlo standard error (zero when exact).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

/// Risk of `h` measured with `truth_risks` (defaults to the bundle's own).
pub fn risk_estimate(
    h: &RandomizedClassifier,
    scores: &ScoreBundle,
    truth_risks: Option<ArrayView2<'_, f64>>,
    mode: RiskMode,
) -> Result<Estimate> {
    let policy = classifier_policy(h, scores, mode)?;
    let r = truth_risks.unwrap_or(scores.risks());
    let value = policy_risk(policy.view(), r, scores.weights())?;
    let std_error = if h.params().noise().sigma > 0.0 {
        let draws = match mode {
            RiskMode::Analytic => DEFAULT_MC_DRAWS,
            RiskMode::MonteCarlo(m) => m,
        } as f64;
        let var: f64 = (0..scores.len())
            .map(|i| {
                let p = policy.row(i);
                let ri = r.row(i);
                let m1 = p.dot(&ri);
                let m2: f64 = p.iter().zip(ri.iter()).map(|(p, r)| p * r * r).sum();
                scores.weights()[i].powi(2) * (m2 - m1 * m1).max(0.0)
            })
            .sum();
        (var / draws).sqrt()
    } else {
        0.0
    };
    Ok(Estimate { value, std_error })
}

pub fn risk(h: &RandomizedClassifier, scores: &ScoreBundle, mode: RiskMode) -> Result<f64> {
    Ok(risk_estimate(h, scores, None, mode)?.value)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairDisparity {
    pub constraint: usize,
    pub group: usize,
    pub other: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    /// Largest disparity within each constraint.
    pub per_constraint: Vec<f64>,
    pub pairs: Vec<PairDisparity>,
    pub max: f64,
    /// Root mean square over all pair disparities.
    pub rms: f64,
}

/// `P(h = y_c | Z_k = 1)` for every pair, via the weighted Bayes form
/// `E[g_k pi(., y_c)] / E[g_k]`; `None` for zero-mass groups.
pub fn group_rates(
    policy: ArrayView2<'_, f64>,
    groups: ArrayView2<'_, f64>,
    weights: ArrayView1<'_, f64>,
    spec: &FairnessSpec,
) -> Result<Vec<Option<f64>>> {
    check_policy(policy, groups.nrows(), spec.num_classes())?;
    if groups.ncols() != spec.num_groups() {
        return Err(Error::dims("group columns", spec.num_groups(), groups.ncols()));
    }
    if weights.len() != groups.nrows() {
        return Err(Error::dims("weights", groups.nrows(), weights.len()));
    }
    Ok(spec
        .pairs()
        .iter()
        .map(|&(c, k)| {
            let y = spec.constraints()[c].class;
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..groups.nrows() {
                num += weights[i] * groups[[i, k]] * policy[[i, y]];
                den += weights[i] * groups[[i, k]];
            }
            (den > 0.0).then(|| num / den)
        })
        .collect())
}

/// Disparities of a policy measured against `groups` (true indicators or
/// exact group probabilities).
pub fn policy_violation(
    policy: ArrayView2<'_, f64>,
    groups: ArrayView2<'_, f64>,
    weights: ArrayView1<'_, f64>,
    spec: &FairnessSpec,
) -> Result<Violation> {
    let rates = group_rates(policy, groups, weights, spec)?;
    let pairs_ck = spec.pairs();
    let mut per_constraint = vec![0.0f64; spec.constraints().len()];
    let mut pairs = Vec::new();
    let mut offset = 0;
    for (c, con) in spec.constraints().iter().enumerate() {
        let m = con.groups.len();
        for a in 0..m {
            for b in a + 1..m {
                let (ka, kb) = (pairs_ck[offset + a].1, pairs_ck[offset + b].1);
                match (rates[offset + a], rates[offset + b]) {
                    (Some(ra), Some(rb)) => {
                        let v = (ra - rb).abs();
                        per_constraint[c] = per_constraint[c].max(v);
                        pairs.push(PairDisparity {
                            constraint: c,
                            group: ka,
                            other: kb,
                            value: v,
                        });
                    }
                    _ => log::warn!(
                        "constraint {c}: skipping groups ({ka}, {kb}) because one has zero mass"
                    ),
                }
            }
        }
        offset += m;
    }
    let max = per_constraint.iter().fold(0.0f64, |a, &b| a.max(b));
    let rms = if pairs.is_empty() {
        0.0
    } else {
        (pairs.iter().map(|p| p.value * p.value).sum::<f64>() / pairs.len() as f64).sqrt()
    };
    Ok(Violation {
        per_constraint,
        pairs,
        max,
        rms,
    })
}

/// Violation of `h`'s predictions on `scores`, measured against
/// `truth_groups` (defaults to the bundle's own group scores).
pub fn violation_max(
    h: &RandomizedClassifier,
    scores: &ScoreBundle,
    truth_groups: Option<ArrayView2<'_, f64>>,
    spec: &FairnessSpec,
    mode: RiskMode,
) -> Result<Violation> {
    let policy = classifier_policy(h, scores, mode)?;
    policy_violation(
        policy.view(),
        truth_groups.unwrap_or(scores.groups()),
        scores.weights(),
        spec,
    )
}

pub fn violation_rms(
    h: &RandomizedClassifier,
    scores: &ScoreBundle,
    truth_groups: Option<ArrayView2<'_, f64>>,
    spec: &FairnessSpec,
    mode: RiskMode,
) -> Result<f64> {
    Ok(violation_max(h, scores, truth_groups, spec, mode)?.rms)
}

fn masses(g: ArrayView2<'_, f64>, w: ArrayView1<'_, f64>) -> Result<Vec<f64>> {
    (0..g.ncols())
        .map(|k| {
            let m: f64 = g.column(k).iter().zip(w.iter()).map(|(g, w)| g * w).sum();
            if m > 0.0 {
                Ok(m)
            } else {
                Err(Error::EmptyGroup { group: k })
            }
        })
        .collect()
}

fn check_same(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, w: ArrayView1<'_, f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::invalid(format!(
            "shapes {:?} and {:?} differ",
            a.dim(),
            b.dim()
        )));
    }
    if w.len() != a.nrows() {
        return Err(Error::dims("weights", a.nrows(), w.len()));
    }
    Ok(())
}

/// `max_k E[ |g_hat_k / E g_hat_k - g_k / E g_k| ]`.
pub fn epsilon_g(
    g_hat: ArrayView2<'_, f64>,
    g_true: ArrayView2<'_, f64>,
    weights: ArrayView1<'_, f64>,
) -> Result<f64> {
    check_same(g_hat, g_true, weights)?;
    let mh = masses(g_hat, weights)?;
    let mt = masses(g_true, weights)?;
    Ok((0..g_hat.ncols())
        .map(|k| {
            (0..g_hat.nrows())
                .map(|i| weights[i] * (g_hat[[i, k]] / mh[k] - g_true[[i, k]] / mt[k]).abs())
                .sum::<f64>()
        })
        .fold(0.0, f64::max))
}

/// `2 max_k E|g_hat_k - g_k| / E g_k`, an upper bound on [`epsilon_g`].
pub fn epsilon_g_bound(
    g_hat: ArrayView2<'_, f64>,
    g_true: ArrayView2<'_, f64>,
    weights: ArrayView1<'_, f64>,
) -> Result<f64> {
    check_same(g_hat, g_true, weights)?;
    let mt = masses(g_true, weights)?;
    Ok((0..g_hat.ncols())
        .map(|k| {
            2.0 * (0..g_hat.nrows())
                .map(|i| weights[i] * (g_hat[[i, k]] - g_true[[i, k]]).abs())
                .sum::<f64>()
                / mt[k]
        })
        .fold(0.0, f64::max))
}

/// `E[ sum_y |r_hat - r| ]`.
pub fn epsilon_r(
    r_hat: ArrayView2<'_, f64>,
    r_true: ArrayView2<'_, f64>,
    weights: ArrayView1<'_, f64>,
) -> Result<f64> {
    check_same(r_hat, r_true, weights)?;
    Ok((0..r_hat.nrows())
        .map(|i| {
            weights[i]
                * r_hat
                    .row(i)
                    .iter()
                    .zip(r_true.row(i).iter())
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>()
        })
        .sum())
}

/// 0-1 loss risks of the observed labels: `r(i, y) = 1[y != y_i]`.
pub fn label_risks(labels: &[usize], num_classes: usize) -> Result<Array2<f64>> {
    let mut r = Array2::ones((labels.len(), num_classes));
    for (i, &y) in labels.iter().enumerate() {
        if y >= num_classes {
            return Err(Error::invalid(format!("label {y} out of range")));
        }
        r[[i, y]] = 0.0;
    }
    Ok(r)
}

/// How each sweep row is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SweepMode {
    /// The optimal tabular policy of the fit sample (evaluation rows must be
    /// the fit rows).
    Tabular,
    /// The fitted classifier's predictions.
    Classifier(RiskMode),
}

/// Evaluation data: the bundle the classifier reads, plus optional ground
/// truth for risk and groups.
#[derive(Debug, Clone, Copy)]
pub struct EvalSet<'a> {
    pub scores: &'a ScoreBundle,
    pub truth_risks: Option<ArrayView2<'a, f64>>,
    pub truth_groups: Option<ArrayView2<'a, f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub risk: f64,
    pub violation_max: f64,
    pub violation_rms: f64,
    /// Seconds spent fitting and evaluating this row.
    pub wall_time: f64,
    /// Diagnostic: violation measured against the predicted group scores.
    pub violation_max_ghat: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub alphas: Vec<f64>,
    pub noise: NoiseSpec,
    pub mode: SweepMode,
    pub post: PostOptions,
}

/// One fit and evaluation per alpha, rows in descending alpha.
pub fn sweep(
    fit_scores: &ScoreBundle,
    eval: &EvalSet<'_>,
    spec_template: &FairnessSpec,
    cfg: &SweepConfig,
) -> Result<Vec<SweepRow>> {
    if let Some(a) = cfg.alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Error::invalid(format!("alpha {a} outside [0, 1]")));
    }
    if cfg.mode == SweepMode::Tabular && eval.scores.len() != fit_scores.len() {
        return Err(Error::invalid("tabular evaluation needs the fit sample as evaluation set"));
    }
    let mut alphas = cfg.alphas.clone();
    alphas.sort_by(|a, b| b.total_cmp(a));
    alphas.dedup();
    alphas
        .par_iter()
        .map(|&alpha| {
            let start = Instant::now();
            let spec = spec_template.with_alpha(alpha)?;
            let fit = linear_post(fit_scores, &spec, cfg.noise, &cfg.post)?;
            let policy = match cfg.mode {
                SweepMode::Tabular => fit.report.policy.clone(),
                SweepMode::Classifier(mode) => classifier_policy(&fit.classifier, eval.scores, mode)?,
            };
            let s = eval.scores;
            let r = eval.truth_risks.unwrap_or(s.risks());
            let g = eval.truth_groups.unwrap_or(s.groups());
            let risk = policy_risk(policy.view(), r, s.weights())?;
            let v = policy_violation(policy.view(), g, s.weights(), &spec)?;
            let v_hat = policy_violation(policy.view(), s.groups(), s.weights(), &spec)?;
            Ok(SweepRow {
                alpha,
                risk,
                violation_max: v.max,
                violation_rms: v.rms,
                wall_time: start.elapsed().as_secs_f64(),
                violation_max_ghat: v_hat.max,
            })
        })
        .collect()
}

pub const SWEEP_COLUMNS: [&str; 6] = [
    "alpha",
    "risk",
    "violation_max",
    "violation_rms",
    "wall_time",
    "violation_max_ghat",
];

pub fn write_sweep_csv<W: std::io::Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_COLUMNS)?;
    for r in rows {
        w.write_record(
            [r.alpha, r.risk, r.violation_max, r.violation_rms, r.wall_time, r.violation_max_ghat]
                .iter()
                .map(|v| v.to_string()),
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_sweep(rows: &[SweepRow], csv_path: &Path, json_path: Option<&Path>) -> Result<()> {
    write_sweep_csv(rows, std::fs::File::create(csv_path)?)?;
    if let Some(p) = json_path {
        let mut f = std::fs::File::create(p)?;
        serde_json::to_writer_pretty(&mut f, rows)?;
        f.write_all(b"\n")?;
    }
    Ok(())
}
