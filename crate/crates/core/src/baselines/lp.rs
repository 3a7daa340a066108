//! Exact dense simplex for small box-constrained linear programs:
//!
//! ```text
//! maximize  c'y   subject to  A y <= b,  0 <= y <= 1
//! ```
//!
//! with `b >= 0`, so the origin is a feasible starting vertex. Slack columns
//! are added for every row of `A` and for every upper bound, and pivoting uses
//! Bland's rule, which rules out cycling on degenerate vertices.

use crate::error::{Error, Result};

const EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    pub objective: Vec<f64>,
    /// Row-major, one row per constraint.
    pub constraints: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub value: f64,
    pub y: Vec<f64>,
}

impl LpProblem {
    pub fn new(objective: Vec<f64>, constraints: Vec<Vec<f64>>, rhs: Vec<f64>) -> Result<Self> {
        let n = objective.len();
        if constraints.len() != rhs.len() {
            return Err(Error::InvalidShape(format!(
                "{} constraint rows but {} right-hand sides",
                constraints.len(),
                rhs.len()
            )));
        }
        if let Some(row) = constraints.iter().find(|r| r.len() != n) {
            return Err(Error::InvalidShape(format!("constraint row of length {} for {n} variables", row.len())));
        }
        Ok(Self {
            objective,
            constraints,
            rhs,
        })
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn is_feasible(&self, y: &[f64], tol: f64) -> bool {
        y.iter().all(|&v| v >= -tol && v <= 1.0 + tol)
            && self
                .constraints
                .iter()
                .zip(&self.rhs)
                .all(|(row, b)| row.iter().zip(y).map(|(a, v)| a * v).sum::<f64>() <= b + tol)
    }

    pub fn value_at(&self, y: &[f64]) -> f64 {
        self.objective.iter().zip(y).map(|(c, v)| c * v).sum()
    }
}

/// Solve `p` to an optimal basic solution.
pub fn lp_solve(p: &LpProblem) -> Result<LpSolution> {
    let n = p.num_vars();
    let m = p.constraints.len();
    if p.rhs.iter().any(|&b| b < 0.0 || !b.is_finite()) {
        return Err(Error::Lp("infeasible at the origin (negative right-hand side)"));
    }
    let rows = m + n;
    let cols = n + m + n; // structural, row slacks, bound slacks
    let width = cols + 1;
    let mut tab = vec![0.0; rows * width];
    for i in 0..m {
        for j in 0..n {
            tab[i * width + j] = p.constraints[i][j];
        }
        tab[i * width + n + i] = 1.0;
        tab[i * width + cols] = p.rhs[i];
    }
    for k in 0..n {
        let r = m + k;
        tab[r * width + k] = 1.0;
        tab[r * width + n + m + k] = 1.0;
        tab[r * width + cols] = 1.0;
    }
    let mut basis: Vec<usize> = (n..cols).collect();
    // reduced[j] = c_j - c_B' B^{-1} a_j; start with slack basis (zero costs)
    let mut reduced = vec![0.0; width];
    reduced[..n].copy_from_slice(&p.objective);

    let max_pivots = 10_000;
    for _ in 0..max_pivots {
        // Bland: lowest-index improving column
        let Some(enter) = (0..cols).find(|&j| reduced[j] > EPS) else {
            let mut y = vec![0.0; n];
            for (r, &var) in basis.iter().enumerate() {
                if var < n {
                    y[var] = tab[r * width + cols].clamp(0.0, 1.0);
                }
            }
            let value = p.value_at(&y);
            return Ok(LpSolution { value, y });
        };
        // ratio test, ties to the lowest basic variable index
        let mut leave: Option<(usize, f64)> = None;
        for r in 0..rows {
            let a = tab[r * width + enter];
            if a > EPS {
                let ratio = tab[r * width + cols] / a;
                leave = match leave {
                    None => Some((r, ratio)),
                    Some((lr, lratio)) => {
                        if ratio < lratio - EPS || ((ratio - lratio).abs() <= EPS && basis[r] < basis[lr]) {
                            Some((r, ratio))
                        } else {
                            Some((lr, lratio))
                        }
                    }
                };
            }
        }
        let Some((pr, _)) = leave else {
            return Err(Error::Lp("unbounded"));
        };
        pivot(&mut tab, width, rows, pr, enter);
        let factor = reduced[enter];
        for j in 0..width {
            reduced[j] -= factor * tab[pr * width + j];
        }
        basis[pr] = enter;
    }
    Err(Error::Lp("not converged"))
}

fn pivot(tab: &mut [f64], width: usize, rows: usize, pr: usize, pc: usize) {
    let piv = tab[pr * width + pc];
    for j in 0..width {
        tab[pr * width + j] /= piv;
    }
    tab[pr * width + pc] = 1.0;
    for r in 0..rows {
        if r == pr {
            continue;
        }
        let f = tab[r * width + pc];
        if f != 0.0 {
            for j in 0..width {
                tab[r * width + j] -= f * tab[pr * width + j];
            }
            tab[r * width + pc] = 0.0;
        }
    }
}
