use serde::{Deserialize, Serialize};

use super::{dot, obs_shape, scalar, DemandKind, EnvState, ACTION_MAX};
use crate::domain::{Action, Context, Observation};
use crate::error::{Error, Result};
use crate::rng::RngStream;

pub const NEWSVENDOR_FEATURE_MAX: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewsvendorChange {
    pub time: usize,
    pub w: Vec<f64>,
}

/// Demand `base(x) + Unif(0, noise_cap)` with `base = w'x` (linear) or
/// `(w'x)^2` (square). Context is `(h, x)` or, without perishability,
/// `(I, h, x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewsvendorParams {
    pub w: Vec<f64>,
    pub noise_cap: f64,
    pub holding_cost: f64,
    pub lost_sale_cost: f64,
    pub censored: bool,
    pub perishable: bool,
    pub demand: DemandKind,
    #[serde(default)]
    pub change: Option<NewsvendorChange>,
}

/// `E[h (a - D)^+ + l (D - a)^+]` for `D = base + Unif(0, cap)`.
pub fn expected_cost(base: f64, cap: f64, h: f64, l: f64, a: f64) -> f64 {
    let u = a - base;
    if cap <= 0.0 {
        return h * u.max(0.0) + l * (-u).max(0.0);
    }
    if u <= 0.0 {
        l * (base + 0.5 * cap - a)
    } else if u >= cap {
        h * (a - base - 0.5 * cap)
    } else {
        (h * u * u + l * (cap - u) * (cap - u)) / (2.0 * cap)
    }
}

impl NewsvendorParams {
    pub fn sample_w(dim: usize, rng: &mut RngStream) -> Vec<f64> {
        (0..dim).map(|_| rng.uniform_range(0.0, 3.0)).collect()
    }

    pub fn sample(dim: usize, demand: DemandKind, censored: bool, perishable: bool, rng: &mut RngStream) -> Self {
        let w = Self::sample_w(dim, rng);
        let noise_cap = rng.uniform_range(1.0, 10.0);
        let holding_cost = rng.uniform_range(0.5, 2.0);
        Self {
            w,
            noise_cap,
            holding_cost,
            lost_sale_cost: 1.0,
            censored,
            perishable,
            demand,
            change: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.w.is_empty() {
            return Err(Error::Config("newsvendor feature dimension must be positive".into()));
        }
        if !(self.noise_cap > 0.0) || !(self.holding_cost > 0.0) || !(self.lost_sale_cost >= 0.0) {
            return Err(Error::Config("newsvendor costs and noise cap must be positive".into()));
        }
        if let Some(c) = &self.change {
            if c.w.len() != self.w.len() || c.time == 0 {
                return Err(Error::Config("malformed newsvendor change point".into()));
            }
        }
        Ok(())
    }

    fn offset(&self) -> usize {
        if self.perishable {
            1
        } else {
            2
        }
    }

    pub fn features<'a>(&self, x: &'a Context) -> Result<&'a [f64]> {
        if x.len() != self.w.len() + self.offset() {
            return Err(Error::InvalidShape(format!(
                "newsvendor context of length {} for {} features",
                x.len(),
                self.w.len()
            )));
        }
        Ok(&x.values()[self.offset()..])
    }

    pub fn active_w(&self, t: usize) -> &[f64] {
        match &self.change {
            Some(c) if t > c.time => &c.w,
            _ => &self.w,
        }
    }

    /// Noise-free demand level at time `t`.
    pub fn base_demand(&self, t: usize, x: &Context) -> Result<f64> {
        let lin = dot(self.active_w(t), self.features(x)?);
        Ok(match self.demand {
            DemandKind::Linear => lin,
            DemandKind::Square => lin * lin,
        })
    }

    /// Critical-fractile quantile of the demand distribution.
    pub fn target_level(&self, t: usize, x: &Context) -> Result<f64> {
        let q = self.lost_sale_cost / (self.holding_cost + self.lost_sale_cost);
        Ok(self.base_demand(t, x)? + self.noise_cap * q)
    }

    pub fn sample_context(&self, state: &EnvState, rng: &mut RngStream) -> Context {
        let mut v = Vec::with_capacity(self.w.len() + 2);
        if !self.perishable {
            v.push(state.inventory);
        }
        v.push(self.holding_cost);
        v.extend((0..self.w.len()).map(|_| rng.uniform_range(0.0, NEWSVENDOR_FEATURE_MAX)));
        Context(v)
    }

    fn cost(&self, a: f64, d: f64) -> f64 {
        self.holding_cost * (a - d).max(0.0) + self.lost_sale_cost * (d - a).max(0.0)
    }

    /// Observation `(reward, demand seen)`. The reward is minus the cost
    /// evaluated at the observed demand, so under censoring an unmet part of
    /// the demand goes unreported.
    pub fn observe(&self, t: usize, x: &Context, a: &Action, rng: &mut RngStream) -> Result<Observation> {
        let order = scalar(a)?;
        let d = self.base_demand(t, x)? + rng.uniform_range(0.0, self.noise_cap);
        let seen = if self.censored { d.min(order) } else { d };
        Ok(Observation(vec![-self.cost(order, seen), seen]))
    }

    pub fn expected_reward(&self, t: usize, x: &Context, a: &Action) -> Result<f64> {
        let order = scalar(a)?;
        Ok(-expected_cost(
            self.base_demand(t, x)?,
            self.noise_cap,
            self.holding_cost,
            self.lost_sale_cost,
            order,
        ))
    }

    pub fn optimal_action(&self, t: usize, x: &Context) -> Result<Action> {
        let target = self.target_level(t, x)?;
        let a = if self.perishable {
            target.clamp(0.0, ACTION_MAX)
        } else {
            let inv = x.values()[0];
            target.max(inv).min(inv + ACTION_MAX)
        };
        Ok(Action::Scalar(a))
    }

    pub fn log_likelihood(&self, t: usize, x: &Context, a: &Action, o: &Observation) -> Result<f64> {
        let seen = *o.values().get(1).ok_or_else(|| obs_shape(o, 2))?;
        let base = self.base_demand(t, x)?;
        let order = scalar(a)?;
        if self.censored && seen >= order {
            // only D >= a is known
            let p = ((base + self.noise_cap - order) / self.noise_cap).clamp(0.0, 1.0);
            return Ok(p.ln());
        }
        let u = seen - base;
        Ok(if (0.0..=self.noise_cap).contains(&u) {
            -self.noise_cap.ln()
        } else {
            f64::NEG_INFINITY
        })
    }
}
