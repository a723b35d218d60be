//! End-to-end fitting: perturb the risks, solve the fairness program, turn
//! the dual values into fairness-risk weights, and wrap them in a classifier.

use std::path::Path;

use ndarray::Array2;
use serde::Serialize;
use serde_json::json;

use crate::classifier::{perturb, RandomizedClassifier};
use crate::codec::{self, Reader, Writer};
use crate::error::{Error, Result};
use crate::lp::{build_dual, solve_fairness, FairnessSolution, SolverOptions, Status};
use crate::types::{Constraint, FairnessSpec, NoiseSpec, PostprocessParams, ScoreBundle};
use crate::DUALITY_GAP_TOL;

const PARAMS_MAGIC: &[u8; 8] = b"FAIRPOST";
pub const PARAMS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct PostOptions {
    /// Remove zero-mass groups from their constraints instead of failing.
    pub drop_empty: bool,
    pub solver: SolverOptions,
}

impl Default for PostOptions {
    fn default() -> Self {
        PostOptions {
            drop_empty: false,
            solver: SolverOptions::default(),
        }
    }
}

/// Diagnostics of a fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    /// Optimal value of the (perturbed) empirical program.
    pub objective: f64,
    pub dual_objective: f64,
    pub iterations: usize,
    /// Whether the solve had to be repeated with Bland's rule.
    pub bland_retry: bool,
    /// Largest `|sum_k psi[c, k]|`.
    pub psi_sum_residual: f64,
    /// Optimal tabular policy `pi(i, y)` on the fit sample.
    #[serde(skip)]
    pub policy: Array2<f64>,
    /// Optimal centroid `q_c` per constraint of the fitted spec.
    pub q: Vec<f64>,
    pub dropped_groups: Vec<usize>,
    /// Indices (in the input spec) of constraints removed by `drop_empty`.
    pub dropped_constraints: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Fit {
    pub params: PostprocessParams,
    pub classifier: RandomizedClassifier,
    pub report: FitReport,
}

/// Weighted column means of the group scores.
pub fn group_mass(scores: &ScoreBundle) -> Vec<f64> {
    scores.group_mass()
}

/// Removes zero-mass groups from every constraint, dropping constraints left
/// with fewer than two groups.
fn drop_empty_groups(
    spec: &FairnessSpec,
    mass: &[f64],
) -> Result<(FairnessSpec, Vec<usize>, Vec<usize>)> {
    let empty: Vec<usize> = spec
        .referenced_groups()
        .into_iter()
        .filter(|&k| mass[k] <= 0.0)
        .collect();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (c, con) in spec.constraints().iter().enumerate() {
        let groups: Vec<usize> = con.groups.iter().copied().filter(|k| mass[*k] > 0.0).collect();
        if groups.len() >= 2 {
            kept.push(Constraint::new(con.class, groups));
        } else {
            dropped.push(c);
        }
    }
    for &k in &empty {
        log::warn!("group {k} has zero mass; removed from its constraints");
    }
    for &c in &dropped {
        log::warn!("constraint {c} has fewer than two non-empty groups; dropped");
    }
    let reduced = FairnessSpec::new(spec.num_classes(), spec.num_groups(), kept, spec.alpha())?;
    Ok((reduced, empty, dropped))
}

fn solve_with_retry(
    scores: &ScoreBundle,
    spec: &FairnessSpec,
    opts: &SolverOptions,
) -> Result<(FairnessSolution, bool)> {
    let first = solve_fairness(scores, spec, opts)?;
    let (sol, retried) = if first.status == Status::IterLimit && !opts.bland {
        log::warn!("iteration limit reached; retrying with Bland's rule");
        let bland = SolverOptions {
            bland: true,
            ..opts.clone()
        };
        (solve_fairness(scores, spec, &bland)?, true)
    } else {
        (first, false)
    };
    if sol.status != Status::Optimal {
        return Err(Error::Solver {
            message: format!("fairness program ended with status {:?}", sol.status),
            dump: build_dual(scores, spec).ok().map(|lp| lp.dump()),
        });
    }
    Ok((sol, retried))
}

/// Fits the post-processor on `scores`.
///
/// The risks are perturbed once with the fit stream of `noise`; the returned
/// classifier draws fresh noise from the prediction stream of the same seed.
pub fn linear_post(
    scores: &ScoreBundle,
    spec: &FairnessSpec,
    noise: NoiseSpec,
    opts: &PostOptions,
) -> Result<Fit> {
    if spec.num_classes() != scores.num_classes() {
        return Err(Error::dims("classes", spec.num_classes(), scores.num_classes()));
    }
    if spec.num_groups() != scores.num_groups() {
        return Err(Error::dims("groups", spec.num_groups(), scores.num_groups()));
    }
    NoiseSpec::new(noise.sigma, noise.seed)?;
    let mass = scores.group_mass();
    let (spec, dropped_groups, dropped_constraints) = if opts.drop_empty {
        drop_empty_groups(spec, &mass)?
    } else {
        scores.check_spec(spec)?;
        (spec.clone(), vec![], vec![])
    };

    let perturbed = scores.with_perturbed_risks(perturb(scores.risks(), noise))?;
    let (sol, bland_retry) = solve_with_retry(&perturbed, &spec, &opts.solver)?;
    let gap = (sol.objective - sol.dual_objective).abs();
    if gap > DUALITY_GAP_TOL * sol.objective.abs().max(1.0) {
        log::warn!("primal/dual objective gap {gap:.3e} exceeds tolerance");
    }
    let params = PostprocessParams::new(spec, sol.psi.psi.clone(), mass, noise)?;
    let report = FitReport {
        objective: sol.objective,
        dual_objective: sol.dual_objective,
        iterations: sol.iterations,
        bland_retry,
        psi_sum_residual: sol.psi.max_abs_sum,
        policy: sol.policy,
        q: sol.q,
        dropped_groups,
        dropped_constraints,
    };
    Ok(Fit {
        classifier: RandomizedClassifier::new(params.clone()),
        params,
        report,
    })
}

/// Encodes params in the versioned, checksummed binary format.
pub fn save_params(params: &PostprocessParams) -> Vec<u8> {
    let spec = params.spec();
    let mut w = Writer::default();
    w.len(spec.num_classes());
    w.len(spec.num_groups());
    w.f64(spec.alpha());
    w.len(spec.constraints().len());
    for con in spec.constraints() {
        w.len(con.class);
        w.len(con.groups.len());
        for &k in &con.groups {
            w.len(k);
        }
    }
    w.f64s(params.psi());
    w.f64s(params.group_mass());
    w.f64s(&params.weights_w().iter().copied().collect::<Vec<_>>());
    w.f64(params.noise().sigma);
    w.u64(params.noise().seed);
    codec::seal(PARAMS_MAGIC, PARAMS_VERSION, &w.0)
}

pub fn load_params(bytes: &[u8]) -> Result<PostprocessParams> {
    let payload = codec::open(PARAMS_MAGIC, PARAMS_VERSION, bytes)?;
    let mut r = Reader::new(payload);
    let num_classes = r.len(0)?;
    let num_groups = r.len(0)?;
    let alpha = r.f64()?;
    let nc = r.len(16)?;
    let mut constraints = Vec::with_capacity(nc);
    for _ in 0..nc {
        let class = r.len(0)?;
        let ng = r.len(8)?;
        let groups = (0..ng).map(|_| r.len(0)).collect::<Result<Vec<_>>>()?;
        constraints.push(Constraint::new(class, groups));
    }
    let psi = r.f64s()?;
    let mass = r.f64s()?;
    let w = r.f64s()?;
    let sigma = r.f64()?;
    let seed = r.u64()?;
    r.finish()?;
    let spec = FairnessSpec::new(num_classes, num_groups, constraints, alpha)
        .map_err(|e| Error::Format(format!("stored spec is invalid: {e}")))?;
    if w.len() != num_classes * num_groups {
        return Err(Error::Format("weight matrix has the wrong size".into()));
    }
    let w = Array2::from_shape_vec((num_classes, num_groups), w)
        .map_err(|e| Error::Format(e.to_string()))?;
    let noise = NoiseSpec::new(sigma, seed).map_err(|e| Error::Format(e.to_string()))?;
    PostprocessParams::from_parts(spec, psi, mass, w, noise)
}

pub fn save_params_file(params: &PostprocessParams, path: &Path) -> Result<()> {
    std::fs::write(path, save_params(params))?;
    Ok(())
}

pub fn load_params_file(path: &Path) -> Result<PostprocessParams> {
    load_params(&std::fs::read(path)?)
}

/// Human-readable export of the weights and dual values.
pub fn params_json(params: &PostprocessParams) -> serde_json::Value {
    let psi: Vec<_> = params
        .spec()
        .pairs()
        .iter()
        .zip(params.psi())
        .map(|(&(c, k), v)| json!({"constraint": c, "group": k, "value": v}))
        .collect();
    let w: Vec<Vec<f64>> = params.weights_w().rows().into_iter().map(|r| r.to_vec()).collect();
    json!({
        "format_version": PARAMS_VERSION,
        "spec": params.spec(),
        "psi": psi,
        "group_mass": params.group_mass(),
        "weights_w": w,
        "noise": params.noise(),
    })
}
