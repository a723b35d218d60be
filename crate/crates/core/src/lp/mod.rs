//! Linear programs, their solutions, and the solvers behind the fairness LPs.
//!
//! [`simplex`] is a general dense revised simplex for programs in the
//! [`LinearProgram`] container. [`block`] solves programs whose rows split
//! into many "convexity" rows (each variable in at most one of them, all
//! coefficients one) plus a few coupling rows; the fairness primal has
//! exactly this shape, with one convexity row per sample. [`fairness`]
//! builds both fairness programs and extracts the dual values.

pub mod block;
pub mod fairness;
pub mod simplex;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use fairness::{
    build_dual, build_primal, extract_psi, solve_fairness, verify_duality, DualityReport,
    FairnessSolution, PsiReport,
};
pub use simplex::{solve, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowOp {
    Le,
    Eq,
    Ge,
}

impl RowOp {
    fn symbol(self) -> &'static str {
        match self {
            RowOp::Le => "<=",
            RowOp::Eq => "=",
            RowOp::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    /// Sparse coefficients `(variable, value)`.
    pub coeffs: Vec<(usize, f64)>,
    pub op: RowOp,
    pub rhs: f64,
}

/// `optimize c.x  s.t.  rows, lower <= x <= upper`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProgram {
    sense: Sense,
    objective: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    rows: Vec<Row>,
}

impl LinearProgram {
    pub fn new(sense: Sense) -> Self {
        LinearProgram {
            sense,
            objective: Vec::new(),
            lower: Vec::new(),
            upper: Vec::new(),
            rows: Vec::new(),
        }
    }

    /// Adds a variable and returns its index. Bounds may be infinite.
    pub fn add_var(&mut self, cost: f64, lower: f64, upper: f64) -> usize {
        self.objective.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.objective.len() - 1
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, op: RowOp, rhs: f64) -> usize {
        self.rows.push(Row { coeffs, op, rhs });
        self.rows.len() - 1
    }

    pub fn sense(&self) -> Sense {
        self.sense
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    /// Checks dimensions, finiteness and bound ordering.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        if let Some(c) = self.objective.iter().find(|c| !c.is_finite()) {
            return Err(Error::invalid(format!("objective coefficient {c} is not finite")));
        }
        for j in 0..n {
            if self.lower[j].is_nan() || self.upper[j].is_nan() || self.lower[j] > self.upper[j] {
                return Err(Error::invalid(format!("variable {j} has invalid bounds")));
            }
            if self.lower[j] == f64::INFINITY || self.upper[j] == f64::NEG_INFINITY {
                return Err(Error::invalid(format!("variable {j} has invalid bounds")));
            }
        }
        for (i, row) in self.rows.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(Error::invalid(format!("row {i} has non-finite rhs")));
            }
            for &(j, a) in &row.coeffs {
                if j >= n {
                    return Err(Error::invalid(format!("row {i} references variable {j}")));
                }
                if !a.is_finite() {
                    return Err(Error::invalid(format!("row {i} has non-finite coefficient")));
                }
            }
        }
        Ok(())
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    pub fn row_activity(&self, row: usize, x: &[f64]) -> f64 {
        self.rows[row].coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }

    /// Largest violation of any row or bound by `x`.
    pub fn primal_residual(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for j in 0..self.num_vars() {
            worst = worst.max(self.lower[j] - x[j]).max(x[j] - self.upper[j]);
        }
        for (i, row) in self.rows.iter().enumerate() {
            let act = self.row_activity(i, x);
            let v = match row.op {
                RowOp::Le => act - row.rhs,
                RowOp::Ge => row.rhs - act,
                RowOp::Eq => (act - row.rhs).abs(),
            };
            worst = worst.max(v);
        }
        worst
    }

    /// Residuals of a primal/dual pair, with duals read as shadow prices
    /// (`d objective / d rhs`).
    pub fn residuals(&self, x: &[f64], duals: &[f64]) -> Residuals {
        // Work in minimisation form: for a max problem the shadow prices of
        // the equivalent min problem are negated.
        let flip = if self.sense == Sense::Maximize { -1.0 } else { 1.0 };
        let mut dual = 0.0f64;
        let mut comp = 0.0f64;
        for (i, row) in self.rows.iter().enumerate() {
            let y = flip * duals[i];
            let wrong_sign = match row.op {
                RowOp::Le => y.max(0.0),
                RowOp::Ge => (-y).max(0.0),
                RowOp::Eq => 0.0,
            };
            dual = dual.max(wrong_sign);
            if row.op != RowOp::Eq {
                let slack = (self.row_activity(i, x) - row.rhs).abs();
                comp = comp.max((y * slack).abs());
            }
        }
        let mut reduced = self.objective.iter().map(|c| flip * c).collect::<Vec<_>>();
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, a) in &row.coeffs {
                reduced[j] -= a * flip * duals[i];
            }
        }
        for j in 0..self.num_vars() {
            let d = reduced[j];
            let lo = self.lower[j];
            let hi = self.upper[j];
            // d >= 0 is allowed at the lower bound, d <= 0 at the upper bound.
            let allow_pos = lo.is_finite();
            let allow_neg = hi.is_finite();
            let viol = match (allow_pos, allow_neg) {
                (true, true) => 0.0,
                (true, false) => (-d).max(0.0),
                (false, true) => d.max(0.0),
                (false, false) => d.abs(),
            };
            dual = dual.max(viol);
            let gap = if d > 0.0 { x[j] - lo } else { hi - x[j] };
            if d != 0.0 && gap.is_finite() {
                comp = comp.max((d * gap).abs());
            }
        }
        Residuals {
            primal: self.primal_residual(x),
            dual,
            complementarity: comp,
        }
    }

    /// Fixed-layout text dump for diffing against external solvers:
    /// objective line, a bounds line, then one line per row.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let sense = match self.sense {
            Sense::Minimize => "min",
            Sense::Maximize => "max",
        };
        let _ = write!(out, "{sense}");
        for (j, c) in self.objective.iter().enumerate() {
            if *c != 0.0 {
                let _ = write!(out, " {j}:{c}");
            }
        }
        out.push('\n');
        let _ = write!(out, "bounds {}", self.num_vars());
        for j in 0..self.num_vars() {
            if self.lower[j] != 0.0 || self.upper[j] != f64::INFINITY {
                let _ = write!(out, " {j}:{}:{}", self.lower[j], self.upper[j]);
            }
        }
        out.push('\n');
        for row in &self.rows {
            for (j, a) in &row.coeffs {
                let _ = write!(out, "{j}:{a} ");
            }
            let _ = writeln!(out, "{} {}", row.op.symbol(), row.rhs);
        }
        out
    }
}

/// Worst-case residuals of a candidate solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Residuals {
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    IterLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LpSolution {
    pub status: Status,
    pub primal: Vec<f64>,
    /// Shadow prices, one per row: `d objective / d rhs`.
    pub duals: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }
}
