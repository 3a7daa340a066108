//! Dynamic-pricing baselines built on a ridge fit of demand against
//! `z = (x, a x)`.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use super::RegressorState;
use crate::domain::{Action, History};
use crate::envs::{ACTION_MAX, NOISE_VARIANCE};
use crate::error::{Error, Result};
use crate::eval::PolicyHandle;
use crate::rng::RngStream;

/// Price used when the estimated slope is not positive.
pub const FALLBACK_PRICE: f64 = 0.5 * ACTION_MAX;
const SLOPE_FLOOR: f64 = 1e-8;

pub fn demand_feature(x: &[f64], price: f64) -> Vec<f64> {
    let mut z = x.to_vec();
    z.extend(x.iter().map(|v| v * price));
    z
}

/// Ridge statistics over `(z_t, demand_t)` from a pricing history.
pub fn pricing_regressor(dim: usize, h: &History) -> Result<RegressorState> {
    let mut reg = RegressorState::new(2 * dim, NOISE_VARIANCE);
    for s in h.steps() {
        let price = s
            .action
            .as_scalar()
            .ok_or_else(|| Error::InvalidAction(format!("{:?} is not a price", s.action)))?;
        let demand = *s
            .observation
            .values()
            .get(1)
            .ok_or_else(|| Error::InvalidShape("pricing observations carry (revenue, demand)".into()))?;
        reg.update(&demand_feature(s.context.values(), price), demand);
    }
    Ok(reg)
}

/// `(alpha_hat'x, beta_hat'x)` from the ridge estimate of `(alpha, -beta)`.
pub fn intercept_slope(reg: &RegressorState, x: &[f64]) -> (f64, f64) {
    let d = x.len();
    let theta = reg.estimate();
    let i: f64 = (0..d).map(|k| theta[k] * x[k]).sum();
    let s: f64 = (0..d).map(|k| -theta[d + k] * x[k]).sum();
    (i, s)
}

pub fn greedy_price(intercept: f64, slope: f64) -> f64 {
    if slope <= SLOPE_FLOOR {
        return FALLBACK_PRICE;
    }
    (intercept / (2.0 * slope)).clamp(0.0, ACTION_MAX)
}

pub fn ilse_price(reg: &RegressorState, x: &[f64]) -> f64 {
    let (i, s) = intercept_slope(reg, x);
    greedy_price(i, s)
}

/// Perturb the greedy price away from the running average when the two are
/// too close.
pub fn cils_price(greedy: f64, running_mean: f64, t: usize) -> f64 {
    let thr = (t.max(1) as f64).powf(-0.25) / 10.0;
    let delta = greedy - running_mean;
    let price = if delta.abs() < thr {
        let sign = if delta >= 0.0 { 1.0 } else { -1.0 };
        running_mean + sign * thr
    } else {
        greedy
    };
    price.clamp(0.0, ACTION_MAX)
}

/// Covariance of `(alpha'x, beta'x)` implied by `Sigma^{-1}`: with
/// `Z = diag(x, x)` the estimate of `(alpha'x, -beta'x)` has covariance
/// `Z' Sigma^{-1} Z`; the sign flip on the slope negates the off-diagonal.
pub fn intercept_slope_covariance(reg: &RegressorState, x: &[f64]) -> Matrix2<f64> {
    let d = x.len();
    let mut z = DMatrix::zeros(2 * d, 2);
    for k in 0..d {
        z[(k, 0)] = x[k];
        z[(d + k, 1)] = x[k];
    }
    let c = z.transpose() * reg.inverse() * z;
    Matrix2::new(c[(0, 0)], -c[(0, 1)], -c[(1, 0)], c[(1, 1)])
}

pub fn ts_price(reg: &RegressorState, x: &[f64], rng: &mut RngStream) -> f64 {
    let (i, s) = intercept_slope(reg, x);
    let cov = intercept_slope_covariance(reg, x);
    let draw = match cov.cholesky() {
        Some(ch) => Vector2::new(i, s) + ch.l() * Vector2::new(rng.normal(0.0, 1.0), rng.normal(0.0, 1.0)),
        None => Vector2::new(i, s),
    };
    greedy_price(draw[0], draw[1])
}

fn context_dim(h: &History) -> usize {
    h.current_context().len()
}

#[derive(Debug, Clone, Default)]
pub struct Ilse;

impl PolicyHandle for Ilse {
    fn name(&self) -> &str {
        "ILSE"
    }

    fn act(&mut self, h: &History, _rng: &mut RngStream) -> Result<Action> {
        let reg = pricing_regressor(context_dim(h), h)?;
        Ok(Action::Scalar(ilse_price(&reg, h.current_context().values())))
    }

    fn reset(&mut self) {}
}

#[derive(Debug, Clone, Default)]
pub struct Cils;

impl PolicyHandle for Cils {
    fn name(&self) -> &str {
        "CILS"
    }

    fn act(&mut self, h: &History, _rng: &mut RngStream) -> Result<Action> {
        let reg = pricing_regressor(context_dim(h), h)?;
        let greedy = ilse_price(&reg, h.current_context().values());
        let past: Vec<f64> = h.steps().iter().filter_map(|s| s.action.as_scalar()).collect();
        let mean = if past.is_empty() {
            FALLBACK_PRICE
        } else {
            past.iter().sum::<f64>() / past.len() as f64
        };
        Ok(Action::Scalar(cils_price(greedy, mean, h.t())))
    }

    fn reset(&mut self) {}
}

#[derive(Debug, Clone, Default)]
pub struct TsPricing;

impl PolicyHandle for TsPricing {
    fn name(&self) -> &str {
        "TS"
    }

    fn act(&mut self, h: &History, rng: &mut RngStream) -> Result<Action> {
        let reg = pricing_regressor(context_dim(h), h)?;
        Ok(Action::Scalar(ts_price(&reg, h.current_context().values(), rng)))
    }

    fn reset(&mut self) {}
}

/// Ridge prediction from arbitrary features (used by the demand-prediction
/// comparison).
pub fn ridge_predict(features: &[Vec<f64>], targets: &[f64], query: &[f64], lambda: f64) -> f64 {
    if features.is_empty() {
        return 0.0;
    }
    let mut reg = RegressorState::new(query.len(), lambda);
    for (z, y) in features.iter().zip(targets) {
        reg.update(z, *y);
    }
    reg.estimate().dot(&DVector::from_column_slice(query))
}
