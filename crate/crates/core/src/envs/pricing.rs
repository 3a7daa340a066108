use serde::{Deserialize, Serialize};

use super::{default_noise_sd, dot, gaussian_log_pdf, obs_shape, scalar, DemandKind, ACTION_MAX};
use crate::domain::{Action, Context, Observation};
use crate::error::{Error, Result};
use crate::rng::RngStream;

pub const PRICING_CONTEXT_MAX: f64 = 2.5;

/// Parameters in force after the change time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricingChange {
    pub time: usize,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Demand `alpha'x - beta'x * a + eps` (linear) or `alpha'x - beta'x * a^2 +
/// eps` (square), with Gaussian `eps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricingParams {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub noise_sd: f64,
    pub demand: DemandKind,
    #[serde(default)]
    pub change: Option<PricingChange>,
}

impl PricingParams {
    pub fn sample(dim: usize, demand: DemandKind, rng: &mut RngStream) -> Self {
        let alpha = (0..dim).map(|_| rng.uniform_range(0.5, 1.5)).collect();
        let beta = (0..dim).map(|_| rng.uniform_range(0.05, 1.05)).collect();
        Self {
            alpha,
            beta,
            noise_sd: default_noise_sd(),
            demand,
            change: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha.is_empty() || self.alpha.len() != self.beta.len() {
            return Err(Error::Config("alpha and beta must share a positive dimension".into()));
        }
        if let Some(c) = &self.change {
            if c.alpha.len() != self.alpha.len() || c.beta.len() != self.beta.len() || c.time == 0 {
                return Err(Error::Config("malformed pricing change point".into()));
            }
        }
        if !(self.noise_sd >= 0.0) {
            return Err(Error::Config("noise_sd must be non-negative".into()));
        }
        Ok(())
    }

    /// `(alpha, beta)` in force at time `t`.
    pub fn active(&self, t: usize) -> (&[f64], &[f64]) {
        match &self.change {
            Some(c) if t > c.time => (&c.alpha, &c.beta),
            _ => (&self.alpha, &self.beta),
        }
    }

    /// `(alpha'x, beta'x)` at time `t`.
    pub fn intercept_slope(&self, t: usize, x: &Context) -> Result<(f64, f64)> {
        if x.len() != self.alpha.len() {
            return Err(Error::InvalidShape(format!(
                "pricing context of length {} for dimension {}",
                x.len(),
                self.alpha.len()
            )));
        }
        let (alpha, beta) = self.active(t);
        Ok((dot(alpha, x.values()), dot(beta, x.values())))
    }

    pub fn mean_demand(&self, t: usize, x: &Context, price: f64) -> Result<f64> {
        let (i, s) = self.intercept_slope(t, x)?;
        Ok(match self.demand {
            DemandKind::Linear => i - s * price,
            DemandKind::Square => i - s * price * price,
        })
    }

    pub fn sample_context(&self, rng: &mut RngStream) -> Context {
        Context((0..self.alpha.len()).map(|_| rng.uniform_range(0.0, PRICING_CONTEXT_MAX)).collect())
    }

    pub fn observe(&self, t: usize, x: &Context, a: &Action, rng: &mut RngStream) -> Result<Observation> {
        let price = scalar(a)?;
        let demand = rng.normal(self.mean_demand(t, x, price)?, self.noise_sd);
        Ok(Observation(vec![price * demand, demand]))
    }

    pub fn expected_reward(&self, t: usize, x: &Context, a: &Action) -> Result<f64> {
        let price = scalar(a)?;
        Ok(price * self.mean_demand(t, x, price)?)
    }

    pub fn optimal_action(&self, t: usize, x: &Context) -> Result<Action> {
        let (i, s) = self.intercept_slope(t, x)?;
        let price = match self.demand {
            DemandKind::Linear if s > 0.0 => (i / (2.0 * s)).clamp(0.0, ACTION_MAX),
            _ => {
                let revenue = |p: f64| p * self.mean_demand(t, x, p).unwrap_or(f64::NEG_INFINITY);
                let inner = golden_section_max(revenue, 0.0, ACTION_MAX, 1e-10);
                // endpoints cover the non-concave cases (slope <= 0)
                [0.0, inner, ACTION_MAX]
                    .into_iter()
                    .fold((f64::NEG_INFINITY, 0.0), |(best, arg), p| {
                        let v = revenue(p);
                        if v > best {
                            (v, p)
                        } else {
                            (best, arg)
                        }
                    })
                    .1
            }
        };
        Ok(Action::Scalar(price))
    }

    pub fn log_likelihood(&self, t: usize, x: &Context, a: &Action, o: &Observation) -> Result<f64> {
        let demand = *o.values().get(1).ok_or_else(|| obs_shape(o, 2))?;
        Ok(gaussian_log_pdf(demand, self.mean_demand(t, x, scalar(a)?)?, self.noise_sd))
    }
}

/// Maximizer of a unimodal `f` on `[lo, hi]`.
pub(crate) fn golden_section_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - r * (hi - lo);
    let mut d = lo + r * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    while hi - lo > tol {
        if fc >= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - r * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + r * (hi - lo);
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}
