//! Brute-force verifiers for tiny instances.
//!
//! Nothing here calls the simplex solvers: linear programs are solved by
//! enumerating every vertex of the feasible region (and every extreme ray of
//! its recession cone), with a separate Gaussian elimination.

use ndarray::Array2;
use serde::Serialize;

use crate::classifier::perturb;
use crate::error::{Error, Result};
use crate::lp::{build_dual, build_primal, LinearProgram, LpSolution, RowOp, Sense, Status};
use crate::types::{FairnessSpec, NoiseSpec, ScoreBundle};

/// Largest number of structural variables the enumeration accepts.
pub const MAX_ORACLE_VARS: usize = 12;
/// Largest number of active sets examined per program.
pub const MAX_ACTIVE_SETS: u64 = 20_000_000;

/// `a . x <= b` or `a . x = b`, dense.
struct Halfspace {
    a: Vec<f64>,
    b: f64,
}

fn binom(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut out: u64 = 1;
    for i in 0..k {
        out = out.saturating_mul((n - i) as u64) / (i as u64 + 1);
    }
    out
}

/// Calls `f` on every `k`-subset of `0..n` in lexicographic order.
fn for_each_subset(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
            if i == 0 {
                return;
            }
        }
        if idx[i] == i + n - k {
            return;
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Row-reduced echelon form of `[A | b]`; returns the pivot columns.
fn rref(m: &mut [Vec<f64>], cols: usize) -> Vec<usize> {
    let scale = m
        .iter()
        .flat_map(|r| r[..cols].iter())
        .fold(0.0f64, |a, v| a.max(v.abs()))
        .max(1.0);
    let tol = 1e-10 * scale;
    let mut pivots = Vec::new();
    let mut row = 0;
    for col in 0..cols {
        if row == m.len() {
            break;
        }
        let best = (row..m.len())
            .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
            .expect("rows remain");
        if m[best][col].abs() <= tol {
            continue;
        }
        m.swap(row, best);
        let p = m[row][col];
        for v in m[row].iter_mut() {
            *v /= p;
        }
        for r in 0..m.len() {
            if r != row {
                let f = m[r][col];
                if f != 0.0 {
                    for c in 0..m[r].len() {
                        m[r][c] -= f * m[row][c];
                    }
                }
            }
        }
        pivots.push(col);
        row += 1;
    }
    pivots
}

fn rank(rows: &[&Halfspace], d: usize) -> usize {
    let mut m: Vec<Vec<f64>> = rows.iter().map(|h| h.a.clone()).collect();
    rref(&mut m, d).len()
}

/// Unique solution of `rows` taken as equalities, if there is one.
fn unique_point(rows: &[&Halfspace], d: usize) -> Option<Vec<f64>> {
    let mut m: Vec<Vec<f64>> = rows
        .iter()
        .map(|h| {
            let mut r = h.a.clone();
            r.push(h.b);
            r
        })
        .collect();
    let pivots = rref(&mut m, d);
    if pivots.len() < d {
        return None;
    }
    let bscale = rows.iter().fold(1.0f64, |a, h| a.max(h.b.abs()));
    if m[d..].iter().any(|r| r[d].abs() > 1e-9 * bscale) {
        return None;
    }
    Some((0..d).map(|i| m[i][d]).collect())
}

/// Direction spanning the null space of `rows`, if it is one-dimensional.
fn null_direction(rows: &[&Halfspace], d: usize) -> Option<Vec<f64>> {
    let mut m: Vec<Vec<f64>> = rows.iter().map(|h| h.a.clone()).collect();
    let pivots = rref(&mut m, d);
    if pivots.len() != d - 1 {
        return None;
    }
    let free = (0..d).find(|c| !pivots.contains(c)).expect("one free column");
    let mut x = vec![0.0; d];
    x[free] = 1.0;
    for (r, &pc) in pivots.iter().enumerate() {
        x[pc] = -m[r][free];
    }
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    Some(x.into_iter().map(|v| v / norm).collect())
}

fn dot(a: &[f64], x: &[f64]) -> f64 {
    a.iter().zip(x).map(|(a, x)| a * x).sum()
}

/// Exact optimum of a tiny program by vertex enumeration. The returned
/// solution carries no dual values.
pub fn enumerate_lp_optimum(lp: &LinearProgram) -> Result<LpSolution> {
    enumerate(lp, None)
}

/// Among optimal vertices, returns one minimising `secondary . x`.
fn enumerate(lp: &LinearProgram, secondary: Option<&[f64]>) -> Result<LpSolution> {
    lp.validate()?;
    let d = lp.num_vars();
    if d > MAX_ORACLE_VARS {
        return Err(Error::invalid(format!(
            "oracle handles at most {MAX_ORACLE_VARS} variables, got {d}"
        )));
    }
    let flip = if lp.sense() == Sense::Maximize { -1.0 } else { 1.0 };
    let cost: Vec<f64> = lp.objective().iter().map(|c| flip * c).collect();
    let dense = |coeffs: &[(usize, f64)]| {
        let mut a = vec![0.0; d];
        for &(j, v) in coeffs {
            a[j] += v;
        }
        a
    };
    let mut eqs = Vec::new();
    let mut ineqs = Vec::new();
    for row in lp.rows() {
        let a = dense(&row.coeffs);
        match row.op {
            RowOp::Eq => eqs.push(Halfspace { a, b: row.rhs }),
            RowOp::Le => ineqs.push(Halfspace { a, b: row.rhs }),
            RowOp::Ge => ineqs.push(Halfspace {
                a: a.into_iter().map(|v| -v).collect(),
                b: -row.rhs,
            }),
        }
    }
    for j in 0..d {
        if lp.lower()[j].is_finite() {
            let mut a = vec![0.0; d];
            a[j] = -1.0;
            ineqs.push(Halfspace { a, b: -lp.lower()[j] });
        }
        if lp.upper()[j].is_finite() {
            let mut a = vec![0.0; d];
            a[j] = 1.0;
            ineqs.push(Halfspace { a, b: lp.upper()[j] });
        }
    }

    let eq_refs: Vec<&Halfspace> = eqs.iter().collect();
    let r_eq = rank(&eq_refs, d);
    let all: Vec<&Halfspace> = eqs.iter().chain(ineqs.iter()).collect();
    if rank(&all, d) < d {
        return Err(Error::invalid(
            "oracle needs a feasible region without lines (full column rank)",
        ));
    }
    let k = d - r_eq;
    let sets = binom(ineqs.len(), k) + if k > 0 { binom(ineqs.len(), k - 1) } else { 0 };
    if sets > MAX_ACTIVE_SETS {
        return Err(Error::invalid(format!("oracle would examine {sets} active sets")));
    }

    let scale = all
        .iter()
        .fold(1.0f64, |m, h| m.max(h.b.abs()).max(h.a.iter().fold(0.0, |a, v| a.max(v.abs()))));
    let tol = 1e-9 * scale;
    let feasible = |x: &[f64]| {
        eqs.iter().all(|h| (dot(&h.a, x) - h.b).abs() <= tol)
            && ineqs.iter().all(|h| dot(&h.a, x) - h.b <= tol)
    };

    let mut vertices: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut examined = 0usize;
    for_each_subset(ineqs.len(), k, |s| {
        examined += 1;
        let mut rows = eq_refs.clone();
        rows.extend(s.iter().map(|&i| &ineqs[i]));
        if let Some(x) = unique_point(&rows, d) {
            if feasible(&x) {
                vertices.push((dot(&cost, &x), x));
            }
        }
    });
    let best_value = vertices.iter().map(|v| v.0).fold(f64::INFINITY, f64::min);
    let tie = 1e-9 * best_value.abs().max(1.0);
    let key = |x: &[f64]| secondary.map_or(0.0, |c| dot(c, x));
    let best = vertices
        .into_iter()
        .filter(|(v, _)| *v <= best_value + tie)
        .reduce(|a, b| if key(&b.1) < key(&a.1) - 1e-12 { b } else { a });

    let Some((value, x)) = best else {
        return Ok(LpSolution {
            status: Status::Infeasible,
            primal: vec![],
            duals: vec![],
            objective: f64::NAN,
            iterations: examined,
        });
    };

    // An improving extreme ray of the recession cone means unbounded.
    let mut unbounded = false;
    if k > 0 {
        let homogeneous: Vec<Halfspace> = eqs
            .iter()
            .map(|h| Halfspace { a: h.a.clone(), b: 0.0 })
            .collect();
        let hom_refs: Vec<&Halfspace> = homogeneous.iter().collect();
        for_each_subset(ineqs.len(), k - 1, |s| {
            if unbounded {
                return;
            }
            examined += 1;
            let mut rows = hom_refs.clone();
            rows.extend(s.iter().map(|&i| &ineqs[i]));
            if let Some(dir) = null_direction(&rows, d) {
                for sign in [1.0, -1.0] {
                    let dir: Vec<f64> = dir.iter().map(|v| sign * v).collect();
                    if ineqs.iter().all(|h| dot(&h.a, &dir) <= 1e-9)
                        && dot(&cost, &dir) < -1e-9
                    {
                        unbounded = true;
                    }
                }
            }
        });
    }
    if unbounded {
        return Ok(LpSolution {
            status: Status::Unbounded,
            primal: x,
            duals: vec![],
            objective: flip * f64::NEG_INFINITY,
            iterations: examined,
        });
    }
    Ok(LpSolution {
        status: Status::Optimal,
        primal: x,
        duals: vec![],
        objective: flip * value,
        iterations: examined,
    })
}

/// Results of the representation check at one noise level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepresentationLevel {
    pub sigma: f64,
    pub objective: f64,
    /// Largest `r_fair(i, y) - min_y' r_fair(i, y')` over the support of the
    /// optimal policy.
    pub max_support_gap: f64,
    /// `sum_i |1[h(x_i) = y] - pi(i, y)|` per class, for the noise-free
    /// argmin rule applied to the perturbed risks.
    pub disagreements: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepresentationReport {
    pub levels: Vec<RepresentationLevel>,
}

/// Checks, on a tiny instance and for each noise level, that the optimal
/// policy is supported on minimisers of the fairness-adjusted risk and, with
/// noise, that the argmin rule differs from it on at most `|Y| - 1` samples
/// per class. The dual values used are the optimal ones of least total
/// magnitude, so slack constraints carry none.
pub fn check_representation(
    scores: &ScoreBundle,
    spec: &FairnessSpec,
    sigma_grid: &[f64],
    seed: u64,
    tol: f64,
) -> Result<RepresentationReport> {
    let n = scores.len();
    let ny = scores.num_classes();
    let pairs = spec.pairs();
    let mut levels = Vec::new();
    let mut failures = Vec::new();
    for &sigma in sigma_grid {
        let noise = NoiseSpec::new(sigma, seed)?;
        let noisy = scores.with_perturbed_risks(perturb(scores.risks(), noise))?;
        let primal = enumerate_lp_optimum(&build_primal(&noisy, spec)?)?;
        let lp_dual = build_dual(&noisy, spec)?;
        let magnitude: Vec<f64> = (0..lp_dual.num_vars())
            .map(|j| if j < n { 0.0 } else { 1.0 })
            .collect();
        let dual = enumerate(&lp_dual, Some(&magnitude))?;
        if primal.status != Status::Optimal || dual.status != Status::Optimal {
            return Err(Error::Representation(format!(
                "sigma {sigma}: oracle statuses {:?} / {:?}",
                primal.status, dual.status
            )));
        }
        let psi: Vec<f64> = (0..pairs.len())
            .map(|p| dual.primal[n + 2 * p] - dual.primal[n + 2 * p + 1])
            .collect();
        let mass = noisy.group_mass();
        let mut w = Array2::<f64>::zeros((ny, spec.num_groups()));
        for (&(c, k), v) in pairs.iter().zip(&psi) {
            w[[spec.constraints()[c].class, k]] -= v / mass[k];
        }
        let r = noisy.risks();
        let g = noisy.groups();
        let mut max_gap = 0.0f64;
        let mut disagreements = vec![0.0; ny];
        for i in 0..n {
            let fair: Vec<f64> = (0..ny)
                .map(|y| r[[i, y]] + (0..spec.num_groups()).map(|k| g[[i, k]] * w[[y, k]]).sum::<f64>())
                .collect();
            let min = fair.iter().copied().fold(f64::INFINITY, f64::min);
            let mut h = 0;
            for y in 0..ny {
                if fair[y] < fair[h] {
                    h = y;
                }
                if primal.primal[i * ny + y] > tol {
                    max_gap = max_gap.max(fair[y] - min);
                }
            }
            for y in 0..ny {
                let hit = if y == h { 1.0 } else { 0.0 };
                disagreements[y] += (hit - primal.primal[i * ny + y]).abs();
            }
        }
        if max_gap > tol {
            failures.push(format!("sigma {sigma}: support gap {max_gap:.3e}"));
        }
        if sigma > 0.0 {
            for (y, dis) in disagreements.iter().enumerate() {
                if *dis > (ny - 1) as f64 + tol {
                    failures.push(format!("sigma {sigma}: class {y} has {dis:.3} disagreements"));
                }
            }
        }
        levels.push(RepresentationLevel {
            sigma,
            objective: primal.objective,
            max_support_gap: max_gap,
            disagreements,
        });
    }
    if !failures.is_empty() {
        return Err(Error::Representation(failures.join("; ")));
    }
    Ok(RepresentationReport { levels })
}

/// Risk on the two-atom construction of a policy predicting class one with
/// probability `pi0` on `X = 0` and `pi1` on `X = 1`.
pub fn tightness_risk(pi0: f64, pi1: f64) -> f64 {
    0.5 * pi0 + 0.5 * (1.0 - pi1)
}

/// Parity gap of that policy between the two groups: `(1 - 2p) |pi0 - pi1|`.
pub fn tightness_disparity(p: f64, pi0: f64, pi1: f64) -> f64 {
    (1.0 - 2.0 * p) * (pi0 - pi1).abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subsets_are_complete() {
        let mut seen = Vec::new();
        for_each_subset(5, 3, |s| seen.push(s.to_vec()));
        assert_eq!(seen.len() as u64, binom(5, 3));
        assert_eq!(seen[0], vec![0, 1, 2]);
        assert_eq!(seen.last().unwrap(), &vec![2, 3, 4]);
        let mut count = 0;
        for_each_subset(4, 0, |_| count += 1);
        assert_eq!(count, 1);
    }

    #[test]
    fn toy_programs() {
        let mut lp = LinearProgram::new(Sense::Maximize);
        let x = lp.add_var(1.0, 0.0, f64::INFINITY);
        lp.add_row(vec![(x, 1.0)], RowOp::Le, 1.0);
        let s = enumerate_lp_optimum(&lp).unwrap();
        assert_eq!(s.status, Status::Optimal);
        assert!((s.objective - 1.0).abs() < 1e-12);

        let mut lp = LinearProgram::new(Sense::Maximize);
        let x = lp.add_var(1.0, 0.0, f64::INFINITY);
        lp.add_row(vec![(x, 1.0)], RowOp::Le, -1.0);
        assert_eq!(enumerate_lp_optimum(&lp).unwrap().status, Status::Infeasible);

        let mut lp = LinearProgram::new(Sense::Maximize);
        lp.add_var(1.0, 0.0, f64::INFINITY);
        assert_eq!(enumerate_lp_optimum(&lp).unwrap().status, Status::Unbounded);
    }

    #[test]
    fn size_cap() {
        let mut lp = LinearProgram::new(Sense::Minimize);
        for _ in 0..13 {
            lp.add_var(1.0, 0.0, 1.0);
        }
        assert!(enumerate_lp_optimum(&lp).is_err());
    }

    #[test]
    fn tightness_formulas() {
        assert_eq!(tightness_risk(1.0, 1.0), 0.5);
        assert_eq!(tightness_disparity(0.25, 0.0, 1.0), 0.5);
    }
}
