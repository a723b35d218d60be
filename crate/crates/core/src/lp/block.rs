//! Primal simplex for programs with many convexity rows.
//!
//! ```text
//! min  c.x
//! s.t. sum_{j in block b} x_j = block_rhs[b]   for every block b
//!      A x = rhs                                (coupling rows)
//!      x_j >= 0, or free for non-block columns
//! ```
//!
//! Every block has a *key* basic column. Substituting the keys out leaves a
//! working basis over the coupling rows only, so each pivot costs a dense
//! factorisation of size `rows x rows` plus one pass over the nonzeros,
//! regardless of the number of blocks. This is the generalized-upper-bound
//! technique of Dantzig and Van Slyke.

use super::simplex::SolverOptions;
use super::Status;
use crate::error::{Error, Result};
use crate::PIVOT_TOL;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockColumn {
    /// Convexity row this column belongs to, if any.
    pub block: Option<usize>,
    pub cost: f64,
    /// Sparse coupling-row coefficients.
    pub entries: Vec<(usize, f64)>,
    /// Free columns may not belong to a block.
    pub free: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockProgram {
    pub block_rhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub columns: Vec<BlockColumn>,
}

/// A starting basis: one key column per block, plus exactly one other basic
/// column per coupling row.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockBasis {
    pub keys: Vec<usize>,
    pub others: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockSolution {
    pub status: Status,
    pub x: Vec<f64>,
    /// Multipliers of the convexity rows.
    pub block_duals: Vec<f64>,
    /// Multipliers of the coupling rows.
    pub row_duals: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

/// Dense LU with partial pivoting, row-major.
struct Lu {
    n: usize,
    a: Vec<f64>,
    perm: Vec<usize>,
}

impl Lu {
    fn factor(mut a: Vec<f64>, n: usize) -> Option<Lu> {
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        for k in 0..n {
            let mut p = k;
            for r in k + 1..n {
                if a[r * n + k].abs() > a[p * n + k].abs() {
                    p = r;
                }
            }
            if a[p * n + k].abs() <= 1e-13 * scale {
                return None;
            }
            if p != k {
                for c in 0..n {
                    a.swap(p * n + c, k * n + c);
                }
                perm.swap(p, k);
            }
            let d = a[k * n + k];
            for r in k + 1..n {
                let f = a[r * n + k] / d;
                a[r * n + k] = f;
                if f != 0.0 {
                    for c in k + 1..n {
                        a[r * n + c] -= f * a[k * n + c];
                    }
                }
            }
        }
        Some(Lu { n, a, perm })
    }

    /// Solves `A x = b`.
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for r in 0..n {
            let mut s = x[r];
            for c in 0..r {
                s -= self.a[r * n + c] * x[c];
            }
            x[r] = s;
        }
        for r in (0..n).rev() {
            let mut s = x[r];
            for c in r + 1..n {
                s -= self.a[r * n + c] * x[c];
            }
            x[r] = s / self.a[r * n + r];
        }
        x
    }

    /// Solves `A^T y = b`.
    fn solve_transposed(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut z = b.to_vec();
        for r in 0..n {
            let mut s = z[r];
            for c in 0..r {
                s -= self.a[c * n + r] * z[c];
            }
            z[r] = s / self.a[r * n + r];
        }
        for r in (0..n).rev() {
            let mut s = z[r];
            for c in r + 1..n {
                s -= self.a[c * n + r] * z[c];
            }
            z[r] = s;
        }
        let mut y = vec![0.0; n];
        for (i, &p) in self.perm.iter().enumerate() {
            y[p] = z[i];
        }
        y
    }
}

/// Scaled copy of the program: costs divided by their largest magnitude,
/// coupling rows by their largest coefficient.
struct Scaled {
    cost_scale: f64,
    row_scale: Vec<f64>,
    cost: Vec<f64>,
    entries: Vec<Vec<(usize, f64)>>,
    rhs: Vec<f64>,
}

fn scale(p: &BlockProgram) -> Scaled {
    let l = p.rhs.len();
    let cost_scale = p
        .columns
        .iter()
        .fold(0.0f64, |m, c| m.max(c.cost.abs()));
    let cost_scale = if cost_scale > 0.0 { cost_scale } else { 1.0 };
    let mut row_scale = vec![0.0f64; l];
    for col in &p.columns {
        for &(r, a) in &col.entries {
            row_scale[r] = row_scale[r].max(a.abs());
        }
    }
    for s in row_scale.iter_mut() {
        if *s == 0.0 {
            *s = 1.0;
        }
    }
    Scaled {
        cost: p.columns.iter().map(|c| c.cost / cost_scale).collect(),
        entries: p
            .columns
            .iter()
            .map(|c| c.entries.iter().map(|&(r, a)| (r, a / row_scale[r])).collect())
            .collect(),
        rhs: p.rhs.iter().zip(&row_scale).map(|(b, s)| b / s).collect(),
        cost_scale,
        row_scale,
    }
}

struct State<'a> {
    p: &'a BlockProgram,
    s: Scaled,
    keys: Vec<usize>,
    others: Vec<usize>,
    is_basic: Vec<bool>,
    /// Current basic values, indexed by column.
    x: Vec<f64>,
    lu: Option<Lu>,
}

impl<'a> State<'a> {
    fn dot(&self, col: usize, v: &[f64]) -> f64 {
        self.s.entries[col].iter().map(|&(r, a)| a * v[r]).sum()
    }

    /// Transformed column `a_j - a_key(block(j))`, dense.
    fn transformed(&self, j: usize) -> Vec<f64> {
        let mut t = vec![0.0; self.s.rhs.len()];
        for &(r, a) in &self.s.entries[j] {
            t[r] += a;
        }
        if let Some(b) = self.p.columns[j].block {
            for &(r, a) in &self.s.entries[self.keys[b]] {
                t[r] -= a;
            }
        }
        t
    }

    fn factor(&mut self) -> Result<()> {
        let l = self.s.rhs.len();
        let mut w = vec![0.0; l * l];
        for (pos, &j) in self.others.iter().enumerate() {
            let t = self.transformed(j);
            for r in 0..l {
                w[r * l + pos] = t[r];
            }
        }
        self.lu = Some(if l == 0 {
            Lu {
                n: 0,
                a: vec![],
                perm: vec![],
            }
        } else {
            Lu::factor(w, l).ok_or_else(|| Error::Solver {
                message: "singular working basis".into(),
                dump: None,
            })?
        });
        Ok(())
    }

    fn compute_values(&mut self) {
        let lu = self.lu.as_ref().expect("factored");
        let mut rhs = self.s.rhs.clone();
        for (b, &k) in self.keys.iter().enumerate() {
            let br = self.p.block_rhs[b];
            if br != 0.0 {
                for &(r, a) in &self.s.entries[k] {
                    rhs[r] -= br * a;
                }
            }
        }
        let xn = lu.solve(&rhs);
        let mut key_vals = self.p.block_rhs.clone();
        for (pos, &j) in self.others.iter().enumerate() {
            self.x[j] = xn[pos];
            if let Some(b) = self.p.columns[j].block {
                key_vals[b] -= xn[pos];
            }
        }
        for (b, &k) in self.keys.iter().enumerate() {
            self.x[k] = key_vals[b];
        }
    }

    /// Coupling multipliers `v` and block multipliers `u`.
    fn duals(&self) -> (Vec<f64>, Vec<f64>) {
        let lu = self.lu.as_ref().expect("factored");
        let ct: Vec<f64> = self
            .others
            .iter()
            .map(|&j| match self.p.columns[j].block {
                Some(b) => self.s.cost[j] - self.s.cost[self.keys[b]],
                None => self.s.cost[j],
            })
            .collect();
        let v = lu.solve_transposed(&ct);
        let u = self
            .keys
            .iter()
            .map(|&k| self.s.cost[k] - self.dot(k, &v))
            .collect();
        (v, u)
    }

    fn objective(&self) -> f64 {
        self.is_basic
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(|(j, _)| self.s.cost[j] * self.x[j])
            .sum()
    }
}

/// Minimises `p` from a primal-feasible starting basis.
pub fn solve_blocks(
    p: &BlockProgram,
    start: &BlockBasis,
    opts: &SolverOptions,
) -> Result<BlockSolution> {
    let nb = p.block_rhs.len();
    let l = p.rhs.len();
    let ncols = p.columns.len();
    if start.keys.len() != nb || start.others.len() != l {
        return Err(Error::invalid("starting basis has the wrong size"));
    }
    for col in &p.columns {
        if col.free && col.block.is_some() {
            return Err(Error::invalid("free columns cannot belong to a block"));
        }
        if col.block.is_some_and(|b| b >= nb) || col.entries.iter().any(|&(r, _)| r >= l) {
            return Err(Error::invalid("column references a missing row"));
        }
    }
    let mut is_basic = vec![false; ncols];
    for (b, &k) in start.keys.iter().enumerate() {
        if p.columns[k].block != Some(b) {
            return Err(Error::invalid(format!("key of block {b} is not in that block")));
        }
        is_basic[k] = true;
    }
    for &j in &start.others {
        if is_basic[j] {
            return Err(Error::invalid(format!("column {j} listed twice in basis")));
        }
        is_basic[j] = true;
    }

    let mut st = State {
        p,
        s: scale(p),
        keys: start.keys.clone(),
        others: start.others.clone(),
        is_basic,
        x: vec![0.0; ncols],
        lu: None,
    };
    st.factor()?;
    st.compute_values();
    let feas_tol = 1e-9;
    if let Some(j) = (0..ncols).find(|&j| st.is_basic[j] && !p.columns[j].free && st.x[j] < -feas_tol) {
        return Err(Error::invalid(format!(
            "starting basis is infeasible at column {j} ({})",
            st.x[j]
        )));
    }

    let mut bland = opts.bland;
    let mut iterations = 0usize;
    let mut best = st.objective();
    let mut stall = 0usize;
    let stall_limit = 2 * (nb + l);
    let status = loop {
        let (v, u) = st.duals();
        // Pricing.
        let mut entering: Option<(usize, f64)> = None;
        let mut best_score = opts.tol;
        for j in 0..ncols {
            if st.is_basic[j] {
                continue;
            }
            let col = &p.columns[j];
            let mut d = st.s.cost[j] - st.dot(j, &v);
            if let Some(b) = col.block {
                d -= u[b];
            }
            let score = if col.free { d.abs() } else { -d };
            if score > best_score {
                entering = Some((j, if col.free && d > 0.0 { -1.0 } else { 1.0 }));
                if bland {
                    break;
                }
                best_score = score;
            }
        }
        let Some((j, dir)) = entering else {
            break Status::Optimal;
        };
        if iterations >= opts.max_iters {
            break Status::IterLimit;
        }

        let t: Vec<f64> = st.transformed(j).into_iter().map(|v| dir * v).collect();
        let alpha = st.lu.as_ref().expect("factored").solve(&t);
        // Rate of change of each block's key as the entering column grows.
        let mut beta: Vec<(usize, f64)> = Vec::new();
        let add_beta = |b: usize, delta: f64, beta: &mut Vec<(usize, f64)>| {
            if let Some(e) = beta.iter_mut().find(|e| e.0 == b) {
                e.1 += delta;
            } else {
                beta.push((b, delta));
            }
        };
        for (pos, &oj) in st.others.iter().enumerate() {
            if let Some(b) = p.columns[oj].block {
                add_beta(b, alpha[pos], &mut beta);
            }
        }
        if let Some(b) = p.columns[j].block {
            add_beta(b, -1.0, &mut beta);
        }

        enum Leave {
            Other(usize),
            Key(usize),
        }
        let mut leave: Option<(Leave, f64, f64, usize)> = None; // (which, ratio, pivot, column)
        let consider = |which: Leave, ratio: f64, piv: f64, col: usize, leave: &mut Option<(Leave, f64, f64, usize)>| {
            let better = match leave {
                None => true,
                Some((_, r0, p0, c0)) => {
                    if ratio < *r0 - 1e-12 {
                        true
                    } else if ratio <= *r0 + 1e-12 {
                        if bland {
                            col < *c0
                        } else {
                            piv > *p0
                        }
                    } else {
                        false
                    }
                }
            };
            if better {
                let r = match leave {
                    Some((_, r0, _, _)) => ratio.min(*r0),
                    None => ratio,
                };
                *leave = Some((which, r, piv, col));
            }
        };
        for (pos, &oj) in st.others.iter().enumerate() {
            if p.columns[oj].free || alpha[pos] <= PIVOT_TOL {
                continue;
            }
            let ratio = st.x[oj].max(0.0) / alpha[pos];
            consider(Leave::Other(pos), ratio, alpha[pos], oj, &mut leave);
        }
        for &(b, rate) in &beta {
            if rate < -PIVOT_TOL {
                let k = st.keys[b];
                let ratio = st.x[k].max(0.0) / -rate;
                consider(Leave::Key(b), ratio, -rate, k, &mut leave);
            }
        }
        let Some((which, theta, _, _)) = leave else {
            break Status::Unbounded;
        };

        let d_enter = {
            let mut d = st.s.cost[j] - st.dot(j, &v);
            if let Some(b) = p.columns[j].block {
                d -= u[b];
            }
            d * dir
        };
        st.is_basic[j] = true;
        match which {
            Leave::Other(pos) => {
                st.is_basic[st.others[pos]] = false;
                st.x[st.others[pos]] = 0.0;
                st.others[pos] = j;
            }
            Leave::Key(b) => {
                let old = st.keys[b];
                st.is_basic[old] = false;
                st.x[old] = 0.0;
                // Promote another basic column of the block to key, keeping
                // the one with the largest value for stability.
                let replacement = st
                    .others
                    .iter()
                    .enumerate()
                    .filter(|(_, &oj)| p.columns[oj].block == Some(b))
                    .max_by(|a, c| st.x[*a.1].total_cmp(&st.x[*c.1]))
                    .map(|(pos, _)| pos);
                match replacement {
                    Some(pos) => {
                        st.keys[b] = st.others[pos];
                        st.others[pos] = j;
                    }
                    None => {
                        debug_assert_eq!(p.columns[j].block, Some(b));
                        st.keys[b] = j;
                    }
                }
            }
        }
        st.x[j] = 0.0;
        iterations += 1;
        st.factor()?;
        st.compute_values();

        let obj = best + theta * d_enter;
        if obj < best - 1e-12 * (1.0 + best.abs()) {
            best = obj;
            stall = 0;
        } else {
            stall += 1;
            if stall > stall_limit && !bland {
                log::debug!("block simplex: switching to Bland's rule after {iterations} pivots");
                bland = true;
            }
        }
    };

    let (v, u) = st.duals();
    let x: Vec<f64> = (0..ncols)
        .map(|j| {
            if !st.is_basic[j] {
                0.0
            } else if p.columns[j].free {
                st.x[j]
            } else {
                st.x[j].max(0.0)
            }
        })
        .collect();
    let row_duals = v
        .iter()
        .zip(&st.s.row_scale)
        .map(|(vs, rs)| vs * st.s.cost_scale / rs)
        .collect();
    let block_duals = u.iter().map(|us| us * st.s.cost_scale).collect();
    let objective = p.columns.iter().zip(&x).map(|(c, v)| c.cost * v).sum();
    Ok(BlockSolution {
        status,
        x,
        block_duals,
        row_duals,
        objective,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::{simplex, LinearProgram, RowOp, Sense};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lu_solves() {
        let a = vec![2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 4.0];
        let lu = Lu::factor(a.clone(), 3).unwrap();
        let b = [1.0, 2.0, 3.0];
        let x = lu.solve(&b);
        for r in 0..3 {
            let s: f64 = (0..3).map(|c| a[r * 3 + c] * x[c]).sum();
            assert!((s - b[r]).abs() < 1e-12);
        }
        let y = lu.solve_transposed(&b);
        for c in 0..3 {
            let s: f64 = (0..3).map(|r| a[r * 3 + c] * y[r]).sum();
            assert!((s - b[c]).abs() < 1e-12);
        }
    }

    /// Random assignment-like programs: each block picks a mix of options,
    /// coupled through `<=` budget rows (with explicit slacks). Compared with
    /// the dense solver on the same program.
    #[test]
    fn agrees_with_dense_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..40 {
            let nb = rng.gen_range(1..8);
            let opts_per = rng.gen_range(2..4);
            let l = rng.gen_range(1..4);
            let mut columns = Vec::new();
            for b in 0..nb {
                for o in 0..opts_per {
                    let entries = (0..l)
                        .map(|r| (r, if o == 0 { 0.0 } else { rng.gen_range(0.0..1.0) }))
                        .filter(|e| e.1 != 0.0)
                        .collect();
                    columns.push(BlockColumn {
                        block: Some(b),
                        cost: rng.gen_range(-1.0..1.0),
                        entries,
                        free: false,
                    });
                }
            }
            let first_slack = columns.len();
            for r in 0..l {
                columns.push(BlockColumn {
                    block: None,
                    cost: 0.0,
                    entries: vec![(r, 1.0)],
                    free: false,
                });
            }
            let rhs: Vec<f64> = (0..l).map(|_| rng.gen_range(0.0..1.0)).collect();
            let prog = BlockProgram {
                block_rhs: vec![1.0; nb],
                rhs: rhs.clone(),
                columns: columns.clone(),
            };
            let start = BlockBasis {
                keys: (0..nb).map(|b| b * opts_per).collect(),
                others: (0..l).map(|r| first_slack + r).collect(),
            };
            let sol = solve_blocks(&prog, &start, &SolverOptions::default()).unwrap();
            assert_eq!(sol.status, Status::Optimal);

            let mut lp = LinearProgram::new(Sense::Minimize);
            for c in &columns {
                lp.add_var(c.cost, 0.0, f64::INFINITY);
            }
            for b in 0..nb {
                lp.add_row(
                    (0..opts_per).map(|o| (b * opts_per + o, 1.0)).collect(),
                    RowOp::Eq,
                    1.0,
                );
            }
            for r in 0..l {
                let coeffs = columns
                    .iter()
                    .enumerate()
                    .filter_map(|(j, c)| c.entries.iter().find(|e| e.0 == r).map(|e| (j, e.1)))
                    .collect();
                lp.add_row(coeffs, RowOp::Eq, rhs[r]);
            }
            let dense = simplex::solve(&lp, &SolverOptions::default());
            assert!((dense.objective - sol.objective).abs() < 1e-9);
            let mut duals = sol.block_duals.clone();
            duals.extend(&sol.row_duals);
            let res = lp.residuals(&sol.x, &duals);
            assert!(res.primal < 1e-9 && res.dual < 1e-9 && res.complementarity < 1e-9, "{res:?}");
        }
    }

    #[test]
    fn rejects_infeasible_start() {
        let prog = BlockProgram {
            block_rhs: vec![1.0],
            rhs: vec![-1.0],
            columns: vec![
                BlockColumn {
                    block: Some(0),
                    cost: 0.0,
                    entries: vec![],
                    free: false,
                },
                BlockColumn {
                    block: None,
                    cost: 0.0,
                    entries: vec![(0, 1.0)],
                    free: false,
                },
            ],
        };
        let start = BlockBasis {
            keys: vec![0],
            others: vec![1],
        };
        assert!(solve_blocks(&prog, &start, &SolverOptions::default()).is_err());
    }
}
