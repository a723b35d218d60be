//! The fairness primal and dual programs.
//!
//! Primal variable layout: `pi(i, y)` at `i * |Y| + y`, then one free `q_c`
//! per constraint. Primal rows: one stochasticity row per sample, then two
//! `<=` rows per `(c, k)` pair in `spec.pairs()` order (upper side first).
//!
//! Dual variable layout: free `phi_i` at `i`, then `psi+` and `psi-` for each
//! pair. Dual rows: one `<=` row per `(i, y)` at `i * |Y| + y`, then one
//! equality row per constraint.

use ndarray::Array2;
use serde::Serialize;

use super::block::{solve_blocks, BlockBasis, BlockColumn, BlockProgram};
use super::simplex::SolverOptions;
use super::{LinearProgram, LpSolution, RowOp, Sense, Status};
use crate::error::{Error, Result};
use crate::types::{FairnessSpec, ScoreBundle};

/// Coefficient `w_i * g_ik / m_k` of `pi(i, y_c)` in the rows of pair `(c, k)`.
fn pair_coefficients(scores: &ScoreBundle, spec: &FairnessSpec) -> Result<Vec<Vec<f64>>> {
    scores.check_spec(spec)?;
    let mass = scores.group_mass();
    let g = scores.groups();
    let w = scores.weights();
    Ok(spec
        .pairs()
        .iter()
        .map(|&(_, k)| (0..scores.len()).map(|i| w[i] * g[[i, k]] / mass[k]).collect())
        .collect())
}

pub fn build_primal(scores: &ScoreBundle, spec: &FairnessSpec) -> Result<LinearProgram> {
    let coef = pair_coefficients(scores, spec)?;
    let n = scores.len();
    let ny = scores.num_classes();
    let r = scores.risks();
    let w = scores.weights();
    let mut lp = LinearProgram::new(Sense::Minimize);
    for i in 0..n {
        for y in 0..ny {
            lp.add_var(w[i] * r[[i, y]], 0.0, f64::INFINITY);
        }
    }
    let q0 = n * ny;
    for _ in spec.constraints() {
        lp.add_var(0.0, f64::NEG_INFINITY, f64::INFINITY);
    }
    for i in 0..n {
        lp.add_row((0..ny).map(|y| (i * ny + y, 1.0)).collect(), RowOp::Eq, 1.0);
    }
    let half = spec.alpha() / 2.0;
    for (p, &(c, _)) in spec.pairs().iter().enumerate() {
        let y = spec.constraints()[c].class;
        let terms: Vec<(usize, f64)> = (0..n)
            .filter(|&i| coef[p][i] != 0.0)
            .map(|i| (i * ny + y, coef[p][i]))
            .collect();
        let mut upper = terms.clone();
        upper.push((q0 + c, -1.0));
        lp.add_row(upper, RowOp::Le, half);
        let mut lower: Vec<(usize, f64)> = terms.into_iter().map(|(j, a)| (j, -a)).collect();
        lower.push((q0 + c, 1.0));
        lp.add_row(lower, RowOp::Le, half);
    }
    Ok(lp)
}

pub fn build_dual(scores: &ScoreBundle, spec: &FairnessSpec) -> Result<LinearProgram> {
    let mass = {
        scores.check_spec(spec)?;
        scores.group_mass()
    };
    let n = scores.len();
    let ny = scores.num_classes();
    let r = scores.risks();
    let g = scores.groups();
    let w = scores.weights();
    let pairs = spec.pairs();
    let half = spec.alpha() / 2.0;
    let mut lp = LinearProgram::new(Sense::Maximize);
    for i in 0..n {
        lp.add_var(w[i], f64::NEG_INFINITY, f64::INFINITY);
    }
    for _ in &pairs {
        lp.add_var(-half, 0.0, f64::INFINITY);
        lp.add_var(-half, 0.0, f64::INFINITY);
    }
    for i in 0..n {
        for y in 0..ny {
            let mut coeffs = vec![(i, 1.0)];
            for (p, &(c, k)) in pairs.iter().enumerate() {
                let a = g[[i, k]] / mass[k];
                if spec.constraints()[c].class == y && a != 0.0 {
                    coeffs.push((n + 2 * p, a));
                    coeffs.push((n + 2 * p + 1, -a));
                }
            }
            lp.add_row(coeffs, RowOp::Le, r[[i, y]]);
        }
    }
    for c in 0..spec.constraints().len() {
        let coeffs = pairs
            .iter()
            .enumerate()
            .filter(|(_, &(pc, _))| pc == c)
            .flat_map(|(p, _)| [(n + 2 * p, 1.0), (n + 2 * p + 1, -1.0)])
            .collect();
        lp.add_row(coeffs, RowOp::Eq, 0.0);
    }
    Ok(lp)
}

/// Dual values per pair plus the per-constraint sum check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsiReport {
    /// `psi+ - psi-`, ordered as `spec.pairs()`.
    pub psi: Vec<f64>,
    /// `sum_k psi[c, k]` per constraint.
    pub sums: Vec<f64>,
    pub max_abs_sum: f64,
}

impl PsiReport {
    fn from_psi(psi: Vec<f64>, spec: &FairnessSpec) -> Self {
        let mut sums = vec![0.0; spec.constraints().len()];
        for (&(c, _), v) in spec.pairs().iter().zip(&psi) {
            sums[c] += v;
        }
        let max_abs_sum = sums.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        PsiReport {
            psi,
            sums,
            max_abs_sum,
        }
    }
}

/// Reads `psi` off an optimal solution of [`build_dual`].
pub fn extract_psi(dual_solution: &LpSolution, spec: &FairnessSpec) -> Result<PsiReport> {
    if !dual_solution.is_optimal() {
        return Err(Error::InvalidState(format!(
            "dual solution has status {:?}",
            dual_solution.status
        )));
    }
    let np = spec.num_pairs();
    let total = dual_solution.primal.len();
    if total < 2 * np {
        return Err(Error::dims("dual variables", 2 * np, total));
    }
    let n = total - 2 * np;
    let x = &dual_solution.primal;
    let psi = (0..np).map(|p| x[n + 2 * p] - x[n + 2 * p + 1]).collect();
    Ok(PsiReport::from_psi(psi, spec))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualityReport {
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub gap: f64,
    /// Largest dual-row slack over `(i, y)` with `pi(i, y) > tol`.
    pub max_slack_on_support: f64,
    pub support_size: usize,
}

/// Checks strong duality and complementary slackness between solutions of
/// [`build_primal`] and [`build_dual`] for the same instance.
pub fn verify_duality(
    primal_sol: &LpSolution,
    dual_sol: &LpSolution,
    lp_primal: &LinearProgram,
    lp_dual: &LinearProgram,
    tol: f64,
) -> Result<DualityReport> {
    if !primal_sol.is_optimal() || !dual_sol.is_optimal() {
        return Err(Error::InvalidState("both programs must be solved to optimality".into()));
    }
    // The stochasticity rows are the primal's leading equalities; the
    // dual's trailing equalities are one per constraint.
    let n = lp_primal
        .rows()
        .iter()
        .take_while(|r| r.op == RowOp::Eq)
        .count();
    let nc = lp_dual.rows().iter().filter(|r| r.op == RowOp::Eq).count();
    if n == 0 || lp_dual.num_rows() < nc || (lp_dual.num_rows() - nc) % n != 0 {
        return Err(Error::invalid("programs do not have the fairness layout"));
    }
    let ny = (lp_dual.num_rows() - nc) / n;
    if lp_primal.num_vars() != n * ny + nc {
        return Err(Error::invalid("primal and dual programs do not match"));
    }
    let p_obj = lp_primal.objective_value(&primal_sol.primal);
    let d_obj = lp_dual.objective_value(&dual_sol.primal);
    let gap = (p_obj - d_obj).abs();
    let mut offending = Vec::new();
    let mut worst = 0.0f64;
    let mut support = 0;
    for i in 0..n {
        for y in 0..ny {
            let row = i * ny + y;
            if primal_sol.primal[row] > tol {
                support += 1;
                let slack = lp_dual.rows()[row].rhs - lp_dual.row_activity(row, &dual_sol.primal);
                worst = worst.max(slack);
                if slack > tol {
                    offending.push(format!("({i},{y}): slack {slack:.3e}"));
                }
            }
        }
    }
    if gap > tol || !offending.is_empty() {
        let mut msg = format!("objective gap {gap:.3e}");
        if !offending.is_empty() {
            msg.push_str("; complementary slackness violated at ");
            msg.push_str(&offending.join(", "));
        }
        return Err(Error::Duality(msg));
    }
    Ok(DualityReport {
        primal_objective: p_obj,
        dual_objective: d_obj,
        gap,
        max_slack_on_support: worst,
        support_size: support,
    })
}

/// Joint primal/dual optimum of the fairness program.
#[derive(Debug, Clone, PartialEq)]
pub struct FairnessSolution {
    pub status: Status,
    /// Tabular policy `pi(i, y)`.
    pub policy: Array2<f64>,
    pub q: Vec<f64>,
    pub phi: Vec<f64>,
    pub psi: PsiReport,
    pub objective: f64,
    pub dual_objective: f64,
    pub iterations: usize,
}

/// Solves the fairness program for both the policy and the dual values.
///
/// Runs the primal through the block simplex (one convexity row per sample,
/// `2 * pairs` coupling rows) and reads `psi` from the coupling-row
/// multipliers; `phi` is then the best value given `psi`.
pub fn solve_fairness(
    scores: &ScoreBundle,
    spec: &FairnessSpec,
    opts: &SolverOptions,
) -> Result<FairnessSolution> {
    let coef = pair_coefficients(scores, spec)?;
    let n = scores.len();
    let ny = scores.num_classes();
    let r = scores.risks();
    let w = scores.weights();
    let pairs = spec.pairs();
    let cons = spec.constraints();
    let np = pairs.len();
    let half = spec.alpha() / 2.0;

    let mut columns = Vec::with_capacity(n * ny + cons.len() + 2 * np);
    for i in 0..n {
        for y in 0..ny {
            let mut entries = Vec::new();
            for (p, &(c, _)) in pairs.iter().enumerate() {
                let a = coef[p][i];
                if cons[c].class == y && a != 0.0 {
                    entries.push((2 * p, a));
                    entries.push((2 * p + 1, -a));
                }
            }
            columns.push(BlockColumn {
                block: Some(i),
                cost: w[i] * r[[i, y]],
                entries,
                free: false,
            });
        }
    }
    let q0 = columns.len();
    for c in 0..cons.len() {
        let entries = pairs
            .iter()
            .enumerate()
            .filter(|(_, &(pc, _))| pc == c)
            .flat_map(|(p, _)| [(2 * p, -1.0), (2 * p + 1, 1.0)])
            .collect();
        columns.push(BlockColumn {
            block: None,
            cost: 0.0,
            entries,
            free: true,
        });
    }
    let s0 = columns.len();
    for l in 0..2 * np {
        columns.push(BlockColumn {
            block: None,
            cost: 0.0,
            entries: vec![(l, 1.0)],
            free: false,
        });
    }

    // Start from the best constant classifier: feasible with every slack
    // at 0 or alpha.
    let best_const = (0..ny)
        .min_by(|&a, &b| {
            let ra: f64 = (0..n).map(|i| w[i] * r[[i, a]]).sum();
            let rb: f64 = (0..n).map(|i| w[i] * r[[i, b]]).sum();
            ra.total_cmp(&rb)
        })
        .unwrap_or(0);
    let keys = (0..n).map(|i| i * ny + best_const).collect();
    let mut others: Vec<usize> = (0..cons.len()).map(|c| q0 + c).collect();
    let mut first_pair = vec![usize::MAX; cons.len()];
    for (p, &(c, _)) in pairs.iter().enumerate() {
        if first_pair[c] == usize::MAX {
            first_pair[c] = p;
        }
    }
    for l in 0..2 * np {
        let p = l / 2;
        if !(l % 2 == 0 && first_pair[pairs[p].0] == p) {
            others.push(s0 + l);
        }
    }
    let program = BlockProgram {
        block_rhs: vec![1.0; n],
        rhs: vec![half; 2 * np],
        columns,
    };
    let sol = solve_blocks(&program, &BlockBasis { keys, others }, opts)?;

    let mut policy = Array2::<f64>::zeros((n, ny));
    for i in 0..n {
        for y in 0..ny {
            policy[[i, y]] = sol.x[i * ny + y];
        }
        // Clean up round-off so each row is an exact distribution.
        let total: f64 = policy.row(i).sum();
        if total > 0.0 {
            policy.row_mut(i).mapv_inplace(|v| v / total);
        }
    }
    let q = (0..cons.len()).map(|c| sol.x[q0 + c]).collect();
    // At alpha >= 1 every rate lies within 1/2 of q = 1/2, so the
    // constraints are vacuous and psi = 0 is dual optimal. A degenerate
    // basis could report other multipliers.
    let psi: Vec<f64> = if spec.alpha() >= 1.0 {
        vec![0.0; np]
    } else {
        (0..np)
            .map(|p| sol.row_duals[2 * p] - sol.row_duals[2 * p + 1])
            .collect()
    };
    let phi = best_phi(scores, spec, &psi);
    let dual_objective = (0..n).map(|i| w[i] * phi[i]).sum::<f64>()
        - half * psi.iter().map(|v| v.abs()).sum::<f64>();
    Ok(FairnessSolution {
        status: sol.status,
        policy,
        q,
        phi,
        psi: PsiReport::from_psi(psi, spec),
        objective: sol.objective,
        dual_objective,
        iterations: sol.iterations,
    })
}

/// `phi_i = min_y ( r(i, y) - sum_{c: y_c = y} sum_k g_ik psi_ck / m_k )`,
/// the largest value keeping every dual row satisfied.
fn best_phi(scores: &ScoreBundle, spec: &FairnessSpec, psi: &[f64]) -> Vec<f64> {
    let mass = scores.group_mass();
    let r = scores.risks();
    let g = scores.groups();
    let pairs = spec.pairs();
    (0..scores.len())
        .map(|i| {
            (0..scores.num_classes())
                .map(|y| {
                    let mut v = r[[i, y]];
                    for (p, &(c, k)) in pairs.iter().enumerate() {
                        if spec.constraints()[c].class == y {
                            v -= g[[i, k]] * psi[p] / mass[k];
                        }
                    }
                    v
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::simplex::solve;
    use crate::types::Constraint;
    use ndarray::array;

    fn sp_spec(alpha: f64) -> FairnessSpec {
        FairnessSpec::new(
            2,
            2,
            vec![Constraint::new(0, vec![0, 1]), Constraint::new(1, vec![0, 1])],
            alpha,
        )
        .unwrap()
    }

    /// Two equally weighted atoms with `p = 0.25`.
    fn two_atoms() -> ScoreBundle {
        ScoreBundle::uniform(
            array![[0.0, 1.0], [1.0, 0.0]],
            array![[0.25, 0.75], [0.75, 0.25]],
        )
        .unwrap()
    }

    #[test]
    fn primal_counts() {
        let lp = build_primal(&two_atoms(), &sp_spec(0.1)).unwrap();
        assert_eq!(lp.num_vars(), 6);
        let eq = lp.rows().iter().filter(|r| r.op == RowOp::Eq).count();
        assert_eq!(eq, 2);
        assert_eq!(lp.num_rows() - eq, 8);
    }

    #[test]
    fn both_forms_agree_on_two_atoms() {
        let scores = two_atoms();
        let spec = sp_spec(0.1);
        let lp_p = build_primal(&scores, &spec).unwrap();
        let lp_d = build_dual(&scores, &spec).unwrap();
        let opts = SolverOptions::default();
        let sp = solve(&lp_p, &opts);
        let sd = solve(&lp_d, &opts);
        assert!((sp.objective - 0.4).abs() < 1e-9);
        assert!((sd.objective - 0.4).abs() < 1e-9);
        let rep = verify_duality(&sp, &sd, &lp_p, &lp_d, 1e-7).unwrap();
        assert!(rep.gap < 1e-9);
        let psi = extract_psi(&sd, &spec).unwrap();
        assert!(psi.max_abs_sum < 1e-9);

        let fs = solve_fairness(&scores, &spec, &opts).unwrap();
        assert_eq!(fs.status, Status::Optimal);
        assert!((fs.objective - 0.4).abs() < 1e-9);
        assert!((fs.dual_objective - 0.4).abs() < 1e-9);
        assert!(fs.psi.max_abs_sum < 1e-9);
    }

    #[test]
    fn vacuous_constraints() {
        let scores = two_atoms();
        let spec = sp_spec(1.0);
        let fs = solve_fairness(&scores, &spec, &SolverOptions::default()).unwrap();
        assert!(fs.objective.abs() < 1e-12);
        assert!(fs.psi.psi.iter().all(|v| v.abs() < 1e-12));
        let sd = solve(&build_dual(&scores, &spec).unwrap(), &SolverOptions::default());
        let psi = extract_psi(&sd, &spec).unwrap();
        assert!(psi.psi.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn extract_requires_optimal() {
        let sol = LpSolution {
            status: Status::IterLimit,
            primal: vec![0.0; 10],
            duals: vec![],
            objective: 0.0,
            iterations: 0,
        };
        assert!(matches!(
            extract_psi(&sol, &sp_spec(0.1)),
            Err(Error::InvalidState(_))
        ));
    }

    #[test]
    fn empty_group_is_reported() {
        let scores = ScoreBundle::uniform(
            array![[0.0, 1.0], [1.0, 0.0]],
            array![[1.0, 0.0], [1.0, 0.0]],
        )
        .unwrap();
        assert!(matches!(
            build_dual(&scores, &sp_spec(0.1)),
            Err(Error::EmptyGroup { group: 1 })
        ));
        assert!(matches!(
            solve_fairness(&scores, &sp_spec(0.1), &SolverOptions::default()),
            Err(Error::EmptyGroup { group: 1 })
        ));
    }
}
