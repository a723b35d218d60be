//! Dense two-phase revised simplex.
//!
//! Dantzig pricing, switching to Bland's rule once the objective has not
//! improved for `2 * rows` consecutive pivots. The basis inverse is kept
//! explicitly and refactorised periodically.

use super::{LinearProgram, LpSolution, RowOp, Sense, Status};
use crate::PIVOT_TOL;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub max_iters: usize,
    /// Reduced-cost optimality tolerance.
    pub tol: f64,
    /// Use Bland's rule from the first pivot.
    pub bland: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iters: 100_000,
            tol: 1e-9,
            bland: false,
        }
    }
}

const REFACTOR_EVERY: usize = 64;

/// How an original variable maps onto nonnegative standard-form columns.
#[derive(Debug, Clone, Copy)]
enum VarMap {
    /// `x = offset + s`
    Shift { col: usize, offset: f64 },
    /// `x = offset - s`
    Mirror { col: usize, offset: f64 },
    /// `x = s+ - s-`
    Split { pos: usize, neg: usize },
}

struct StandardForm {
    m: usize,
    /// Dense columns, each of length `m`.
    cols: Vec<Vec<f64>>,
    cost: Vec<f64>,
    b: Vec<f64>,
    /// +1 or -1: whether a row was negated to make its rhs nonnegative.
    row_sign: Vec<f64>,
    artificial_start: usize,
    initial_basis: Vec<usize>,
    maps: Vec<VarMap>,
}

fn standardize(lp: &LinearProgram) -> StandardForm {
    let n = lp.num_vars();
    let flip = if lp.sense() == Sense::Maximize { -1.0 } else { 1.0 };
    let mut maps = Vec::with_capacity(n);
    let mut cost = Vec::new();
    let mut ncols = 0;
    // Upper-bound rows for shifted variables: (column, bound).
    let mut bound_rows: Vec<(usize, f64)> = Vec::new();
    for j in 0..n {
        let (lo, hi, c) = (lp.lower()[j], lp.upper()[j], flip * lp.objective()[j]);
        if lo.is_finite() {
            maps.push(VarMap::Shift { col: ncols, offset: lo });
            cost.push(c);
            if hi.is_finite() {
                bound_rows.push((ncols, hi - lo));
            }
            ncols += 1;
        } else if hi.is_finite() {
            maps.push(VarMap::Mirror { col: ncols, offset: hi });
            cost.push(-c);
            ncols += 1;
        } else {
            maps.push(VarMap::Split {
                pos: ncols,
                neg: ncols + 1,
            });
            cost.push(c);
            cost.push(-c);
            ncols += 2;
        }
    }
    let m = lp.num_rows() + bound_rows.len();
    let mut cols = vec![vec![0.0; m]; ncols];
    let mut b = vec![0.0; m];
    let mut ops = Vec::with_capacity(m);
    for (i, row) in lp.rows().iter().enumerate() {
        let mut rhs = row.rhs;
        for &(j, a) in &row.coeffs {
            match maps[j] {
                VarMap::Shift { col, offset } => {
                    cols[col][i] += a;
                    rhs -= a * offset;
                }
                VarMap::Mirror { col, offset } => {
                    cols[col][i] -= a;
                    rhs -= a * offset;
                }
                VarMap::Split { pos, neg } => {
                    cols[pos][i] += a;
                    cols[neg][i] -= a;
                }
            }
        }
        b[i] = rhs;
        ops.push(row.op);
    }
    for (r, &(col, bound)) in bound_rows.iter().enumerate() {
        let i = lp.num_rows() + r;
        cols[col][i] = 1.0;
        b[i] = bound;
        ops.push(RowOp::Le);
    }
    // Slacks.
    let mut slack_of_row = vec![None; m];
    for i in 0..m {
        let coef = match ops[i] {
            RowOp::Le => 1.0,
            RowOp::Ge => -1.0,
            RowOp::Eq => continue,
        };
        let mut col = vec![0.0; m];
        col[i] = coef;
        cols.push(col);
        cost.push(0.0);
        slack_of_row[i] = Some(cols.len() - 1);
    }
    let mut row_sign = vec![1.0; m];
    for i in 0..m {
        if b[i] < 0.0 {
            row_sign[i] = -1.0;
            b[i] = -b[i];
            for col in cols.iter_mut() {
                col[i] = -col[i];
            }
        }
    }
    let artificial_start = cols.len();
    let mut initial_basis = vec![0; m];
    for i in 0..m {
        match slack_of_row[i] {
            Some(s) if cols[s][i] > 0.0 => initial_basis[i] = s,
            _ => {
                let mut col = vec![0.0; m];
                col[i] = 1.0;
                cols.push(col);
                cost.push(0.0);
                initial_basis[i] = cols.len() - 1;
            }
        }
    }
    StandardForm {
        m,
        cols,
        cost,
        b,
        row_sign,
        artificial_start,
        initial_basis,
        maps,
    }
}

enum Outcome {
    Optimal,
    Unbounded,
    IterLimit,
}

struct Tableau<'a> {
    sf: &'a StandardForm,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    binv: Vec<f64>,
    xb: Vec<f64>,
    iterations: usize,
    since_refactor: usize,
}

impl<'a> Tableau<'a> {
    fn new(sf: &'a StandardForm) -> Self {
        let m = sf.m;
        let mut is_basic = vec![false; sf.cols.len()];
        for &j in &sf.initial_basis {
            is_basic[j] = true;
        }
        let mut t = Tableau {
            sf,
            basis: sf.initial_basis.clone(),
            is_basic,
            binv: vec![0.0; m * m],
            xb: vec![0.0; m],
            iterations: 0,
            since_refactor: 0,
        };
        t.refactor();
        t
    }

    /// Recomputes the basis inverse by Gauss-Jordan elimination with partial
    /// pivoting, then the basic values.
    fn refactor(&mut self) {
        let m = self.sf.m;
        let mut a = vec![0.0; m * m];
        for (c, &j) in self.basis.iter().enumerate() {
            for r in 0..m {
                a[r * m + c] = self.sf.cols[j][r];
            }
        }
        let mut inv = vec![0.0; m * m];
        for i in 0..m {
            inv[i * m + i] = 1.0;
        }
        for col in 0..m {
            let mut p = col;
            for r in col + 1..m {
                if a[r * m + col].abs() > a[p * m + col].abs() {
                    p = r;
                }
            }
            if a[p * m + col].abs() < 1e-14 {
                // Singular basis: keep the updated inverse we already have.
                return;
            }
            if p != col {
                for k in 0..m {
                    a.swap(p * m + k, col * m + k);
                    inv.swap(p * m + k, col * m + k);
                }
            }
            let d = a[col * m + col];
            for k in 0..m {
                a[col * m + k] /= d;
                inv[col * m + k] /= d;
            }
            for r in 0..m {
                if r != col {
                    let f = a[r * m + col];
                    if f != 0.0 {
                        for k in 0..m {
                            a[r * m + k] -= f * a[col * m + k];
                            inv[r * m + k] -= f * inv[col * m + k];
                        }
                    }
                }
            }
        }
        self.binv = inv;
        for r in 0..m {
            self.xb[r] = (0..m).map(|k| self.binv[r * m + k] * self.sf.b[k]).sum();
        }
        self.since_refactor = 0;
    }

    fn column(&self, j: usize) -> Vec<f64> {
        let m = self.sf.m;
        let col = &self.sf.cols[j];
        (0..m)
            .map(|r| {
                let row = &self.binv[r * m..(r + 1) * m];
                row.iter().zip(col).map(|(a, b)| a * b).sum()
            })
            .collect()
    }

    fn multipliers(&self, cost: &[f64]) -> Vec<f64> {
        let m = self.sf.m;
        let mut y = vec![0.0; m];
        for (r, &j) in self.basis.iter().enumerate() {
            let cb = cost[j];
            if cb != 0.0 {
                for k in 0..m {
                    y[k] += cb * self.binv[r * m + k];
                }
            }
        }
        y
    }

    fn objective(&self, cost: &[f64]) -> f64 {
        self.basis.iter().zip(&self.xb).map(|(&j, x)| cost[j] * x).sum()
    }

    fn pivot(&mut self, r: usize, entering: usize, alpha: &[f64]) {
        let m = self.sf.m;
        let pr = alpha[r];
        let theta = self.xb[r] / pr;
        for i in 0..m {
            if i != r {
                self.xb[i] -= theta * alpha[i];
            }
        }
        self.xb[r] = theta;
        let (head, rest) = self.binv.split_at_mut(r * m);
        let (prow, tail) = rest.split_at_mut(m);
        for v in prow.iter_mut() {
            *v /= pr;
        }
        for (i, chunk) in head.chunks_mut(m).chain(tail.chunks_mut(m)).enumerate() {
            let i = if i < r { i } else { i + 1 };
            let f = alpha[i];
            if f != 0.0 {
                for (v, p) in chunk.iter_mut().zip(prow.iter()) {
                    *v -= f * p;
                }
            }
        }
        self.is_basic[self.basis[r]] = false;
        self.is_basic[entering] = true;
        self.basis[r] = entering;
        self.iterations += 1;
        self.since_refactor += 1;
        if self.since_refactor >= REFACTOR_EVERY {
            self.refactor();
        }
    }

    fn run(&mut self, cost: &[f64], allowed: &[bool], opts: &SolverOptions) -> Outcome {
        let m = self.sf.m;
        let mut bland = opts.bland;
        let mut best = self.objective(cost);
        let mut stall = 0usize;
        loop {
            if self.iterations >= opts.max_iters {
                return Outcome::IterLimit;
            }
            let y = self.multipliers(cost);
            let mut entering = None;
            let mut best_d = -opts.tol;
            for j in 0..self.sf.cols.len() {
                if self.is_basic[j] || !allowed[j] {
                    continue;
                }
                let d = cost[j] - y.iter().zip(&self.sf.cols[j]).map(|(a, b)| a * b).sum::<f64>();
                if d < best_d {
                    entering = Some(j);
                    if bland {
                        break;
                    }
                    best_d = d;
                }
            }
            let Some(j) = entering else {
                return Outcome::Optimal;
            };
            let alpha = self.column(j);
            let mut leave: Option<usize> = None;
            let mut best_ratio = f64::INFINITY;
            for r in 0..m {
                if alpha[r] > PIVOT_TOL {
                    let ratio = self.xb[r].max(0.0) / alpha[r];
                    let better = match leave {
                        None => true,
                        Some(l) => {
                            if ratio < best_ratio - 1e-12 {
                                true
                            } else if ratio <= best_ratio + 1e-12 {
                                if bland {
                                    self.basis[r] < self.basis[l]
                                } else {
                                    alpha[r] > alpha[l]
                                }
                            } else {
                                false
                            }
                        }
                    };
                    if better {
                        best_ratio = best_ratio.min(ratio);
                        leave = Some(r);
                    }
                }
            }
            let Some(r) = leave else {
                return Outcome::Unbounded;
            };
            self.pivot(r, j, &alpha);
            let obj = self.objective(cost);
            if obj < best - 1e-12 * (1.0 + best.abs()) {
                best = obj;
                stall = 0;
            } else {
                stall += 1;
                if stall > 2 * m {
                    bland = true;
                }
            }
        }
    }
}

/// Solves `lp`. Duals are shadow prices of the original rows.
pub fn solve(lp: &LinearProgram, opts: &SolverOptions) -> LpSolution {
    let sf = standardize(lp);
    let m = sf.m;
    let ncols = sf.cols.len();
    let mut tab = Tableau::new(&sf);

    let fail = |status: Status, iterations: usize| LpSolution {
        status,
        primal: vec![],
        duals: vec![],
        objective: f64::NAN,
        iterations,
    };

    // Phase 1: minimise the sum of artificials.
    if sf.artificial_start < ncols {
        let mut c1 = vec![0.0; ncols];
        for c in c1.iter_mut().skip(sf.artificial_start) {
            *c = 1.0;
        }
        let allowed = vec![true; ncols];
        match tab.run(&c1, &allowed, opts) {
            Outcome::IterLimit => return fail(Status::IterLimit, tab.iterations),
            Outcome::Unbounded | Outcome::Optimal => {}
        }
        tab.refactor();
        let infeas = tab.objective(&c1);
        let scale = 1.0 + sf.b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if infeas > 1e-9 * scale {
            return fail(Status::Infeasible, tab.iterations);
        }
        // Drive remaining artificials out of the basis where possible.
        for r in 0..m {
            if tab.basis[r] < sf.artificial_start {
                continue;
            }
            let mut swap = None;
            for j in 0..sf.artificial_start {
                if tab.is_basic[j] {
                    continue;
                }
                let alpha = tab.column(j);
                if alpha[r].abs() > 1e-9 {
                    swap = Some((j, alpha));
                    break;
                }
            }
            if let Some((j, alpha)) = swap {
                tab.xb[r] = 0.0;
                tab.pivot(r, j, &alpha);
            }
        }
    }

    // Phase 2.
    let mut allowed = vec![true; ncols];
    for a in allowed.iter_mut().skip(sf.artificial_start) {
        *a = false;
    }
    let outcome = tab.run(&sf.cost, &allowed, opts);
    match outcome {
        Outcome::IterLimit => return fail(Status::IterLimit, tab.iterations),
        Outcome::Unbounded => return fail(Status::Unbounded, tab.iterations),
        Outcome::Optimal => {}
    }
    tab.refactor();

    let mut s = vec![0.0; ncols];
    for (r, &j) in tab.basis.iter().enumerate() {
        s[j] = tab.xb[r].max(0.0);
    }
    let x: Vec<f64> = sf
        .maps
        .iter()
        .map(|map| match *map {
            VarMap::Shift { col, offset } => offset + s[col],
            VarMap::Mirror { col, offset } => offset - s[col],
            VarMap::Split { pos, neg } => s[pos] - s[neg],
        })
        .collect();
    let y = tab.multipliers(&sf.cost);
    let flip = if lp.sense() == Sense::Maximize { -1.0 } else { 1.0 };
    let duals = (0..lp.num_rows())
        .map(|i| flip * sf.row_sign[i] * y[i])
        .collect();
    LpSolution {
        status: Status::Optimal,
        objective: lp.objective_value(&x),
        primal: x,
        duals,
        iterations: tab.iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const INF: f64 = f64::INFINITY;

    #[test]
    fn bounded_max() {
        let mut lp = LinearProgram::new(Sense::Maximize);
        let x = lp.add_var(1.0, 0.0, INF);
        lp.add_row(vec![(x, 1.0)], RowOp::Le, 1.0);
        let sol = solve(&lp, &SolverOptions::default());
        assert_eq!(sol.status, Status::Optimal);
        assert!((sol.primal[0] - 1.0).abs() < 1e-12);
        assert!((sol.objective - 1.0).abs() < 1e-12);
        assert!((sol.duals[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unbounded_max() {
        let mut lp = LinearProgram::new(Sense::Maximize);
        lp.add_var(1.0, 0.0, INF);
        let sol = solve(&lp, &SolverOptions::default());
        assert_eq!(sol.status, Status::Unbounded);
    }

    #[test]
    fn infeasible() {
        let mut lp = LinearProgram::new(Sense::Minimize);
        let x = lp.add_var(1.0, 0.0, INF);
        lp.add_row(vec![(x, 1.0)], RowOp::Le, -1.0);
        assert_eq!(solve(&lp, &SolverOptions::default()).status, Status::Infeasible);
    }

    #[test]
    fn textbook_problem() {
        // max 3x + 5y s.t. x <= 4, 2y <= 12, 3x + 2y <= 18 -> (2, 6), 36.
        let mut lp = LinearProgram::new(Sense::Maximize);
        let x = lp.add_var(3.0, 0.0, INF);
        let y = lp.add_var(5.0, 0.0, INF);
        lp.add_row(vec![(x, 1.0)], RowOp::Le, 4.0);
        lp.add_row(vec![(y, 2.0)], RowOp::Le, 12.0);
        lp.add_row(vec![(x, 3.0), (y, 2.0)], RowOp::Le, 18.0);
        let sol = solve(&lp, &SolverOptions::default());
        assert!((sol.objective - 36.0).abs() < 1e-9);
        assert!((sol.primal[0] - 2.0).abs() < 1e-9 && (sol.primal[1] - 6.0).abs() < 1e-9);
        // Shadow prices (0, 1.5, 1).
        assert!(sol.duals[0].abs() < 1e-9);
        assert!((sol.duals[1] - 1.5).abs() < 1e-9);
        assert!((sol.duals[2] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn free_and_bounded_variables() {
        // min x - y, x free in [-inf, 3], y in [-2, 5], x + y >= 1, x - y = 0.5
        let mut lp = LinearProgram::new(Sense::Minimize);
        let x = lp.add_var(1.0, f64::NEG_INFINITY, 3.0);
        let y = lp.add_var(-1.0, -2.0, 5.0);
        lp.add_row(vec![(x, 1.0), (y, 1.0)], RowOp::Ge, 1.0);
        lp.add_row(vec![(x, 1.0), (y, -1.0)], RowOp::Eq, 0.5);
        let sol = solve(&lp, &SolverOptions::default());
        assert_eq!(sol.status, Status::Optimal);
        assert!((sol.objective - 0.5).abs() < 1e-9);
        let res = lp.residuals(&sol.primal, &sol.duals);
        assert!(res.primal < 1e-9 && res.dual < 1e-9 && res.complementarity < 1e-9, "{res:?}");
    }

    #[test]
    fn degenerate_cycling_example() {
        // Beale's classic cycling instance; needs the anti-cycling switch.
        let mut lp = LinearProgram::new(Sense::Minimize);
        let x: Vec<usize> = [-0.75, 150.0, -0.02, 6.0]
            .iter()
            .map(|&c| lp.add_var(c, 0.0, INF))
            .collect();
        lp.add_row(
            vec![(x[0], 0.25), (x[1], -60.0), (x[2], -0.04), (x[3], 9.0)],
            RowOp::Le,
            0.0,
        );
        lp.add_row(
            vec![(x[0], 0.5), (x[1], -90.0), (x[2], -0.02), (x[3], 3.0)],
            RowOp::Le,
            0.0,
        );
        lp.add_row(vec![(x[2], 1.0)], RowOp::Le, 1.0);
        for bland in [false, true] {
            let sol = solve(
                &lp,
                &SolverOptions {
                    bland,
                    ..Default::default()
                },
            );
            assert_eq!(sol.status, Status::Optimal);
            assert!((sol.objective + 0.05).abs() < 1e-9, "{}", sol.objective);
        }
    }

    #[test]
    fn iteration_limit_is_reported() {
        let mut lp = LinearProgram::new(Sense::Maximize);
        let x = lp.add_var(1.0, 0.0, INF);
        let y = lp.add_var(1.0, 0.0, INF);
        lp.add_row(vec![(x, 1.0), (y, 2.0)], RowOp::Le, 4.0);
        lp.add_row(vec![(x, 3.0), (y, 1.0)], RowOp::Le, 6.0);
        let sol = solve(
            &lp,
            &SolverOptions {
                max_iters: 1,
                ..Default::default()
            },
        );
        assert_eq!(sol.status, Status::IterLimit);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        /// Random bounded feasible programs: the returned pair satisfies the
        /// optimality conditions.
        #[test]
        fn kkt_on_random_programs(
            m in 1usize..6,
            n in 1usize..7,
            seed in proptest::collection::vec(-1.0f64..1.0, 80),
        ) {
            let mut lp = LinearProgram::new(if seed[0] > 0.0 { Sense::Maximize } else { Sense::Minimize });
            let mut it = seed.iter().cycle().skip(1);
            let x0: Vec<f64> = (0..n).map(|_| it.next().unwrap().abs()).collect();
            for _ in 0..n {
                lp.add_var(*it.next().unwrap(), 0.0, 1.0 + it.next().unwrap().abs());
            }
            for _ in 0..m {
                let coeffs: Vec<(usize, f64)> = (0..n).map(|j| (j, *it.next().unwrap())).collect();
                let act: f64 = coeffs.iter().map(|&(j, a)| a * x0[j]).sum();
                let op = match (it.next().unwrap() * 3.0).floor() as i32 {
                    -3 | -2 => RowOp::Le,
                    -1 | 0 => RowOp::Ge,
                    _ => RowOp::Eq,
                };
                let rhs = match op {
                    RowOp::Le => act + it.next().unwrap().abs(),
                    RowOp::Ge => act - it.next().unwrap().abs(),
                    RowOp::Eq => act,
                };
                lp.add_row(coeffs, op, rhs);
            }
            let sol = solve(&lp, &SolverOptions::default());
            prop_assert_eq!(sol.status, Status::Optimal);
            let res = lp.residuals(&sol.primal, &sol.duals);
            prop_assert!(res.primal < 1e-8, "{:?}", res);
            prop_assert!(res.dual < 1e-8, "{:?}", res);
            prop_assert!(res.complementarity < 1e-7, "{:?}", res);
        }
    }
}
