//! Benchmark algorithms, each behind [`PolicyHandle`](crate::eval::PolicyHandle).

pub mod ada;
pub mod bandit;
pub mod inventory;
pub mod lp;
pub mod pricing;
pub mod random;

use nalgebra::{DMatrix, DVector};

pub use ada::{Ada, AdaState};
pub use bandit::{ArmStats, BonusDivisor, LinTs, LinUcb, ThompsonMab, Ucb};
pub use inventory::{Erm, Fai};
pub use lp::{lp_solve, LpProblem, LpSolution};
pub use pricing::{Cils, Ilse, TsPricing};
pub use random::RandomRate;

/// Exploration weight `sqrt(2 log T)` shared by the bandit baselines.
pub fn exploration_weight(horizon: usize) -> f64 {
    (2.0 * (horizon.max(1) as f64).ln()).sqrt()
}

/// Ridge regression sufficient statistics `Sigma = sum z z' + ridge I`,
/// `xty = sum y z`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorState {
    pub sigma: DMatrix<f64>,
    pub xty: DVector<f64>,
    pub ridge: f64,
}

impl RegressorState {
    pub fn new(dim: usize, ridge: f64) -> Self {
        assert!(ridge > 0.0, "ridge must be positive to keep Sigma invertible");
        Self {
            sigma: DMatrix::identity(dim, dim) * ridge,
            xty: DVector::zeros(dim),
            ridge,
        }
    }

    pub fn dim(&self) -> usize {
        self.xty.len()
    }

    pub fn update(&mut self, z: &[f64], y: f64) {
        let z = DVector::from_column_slice(z);
        self.sigma += &z * z.transpose();
        self.xty += z * y;
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.sigma
            .clone()
            .cholesky()
            .expect("ridge keeps Sigma positive definite")
            .inverse()
    }

    /// `Sigma^{-1} xty`.
    pub fn estimate(&self) -> DVector<f64> {
        self.sigma
            .clone()
            .cholesky()
            .expect("ridge keeps Sigma positive definite")
            .solve(&self.xty)
    }
}
