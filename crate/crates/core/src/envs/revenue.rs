use serde::{Deserialize, Serialize};

use super::{obs_shape, scalar, EnvState};
use crate::baselines::ada::accept_probability;
use crate::domain::{Action, Context, Observation, PROB_TOL};
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Budget comparisons allow this much rounding slack.
pub const BUDGET_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomerType {
    pub reward: f64,
    pub usage: Vec<f64>,
}

impl CustomerType {
    pub fn context(&self) -> Context {
        let mut v = Vec::with_capacity(1 + self.usage.len());
        v.push(self.reward);
        v.extend_from_slice(&self.usage);
        Context(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmParams {
    pub catalog: Vec<CustomerType>,
    pub arrival_probs: Vec<f64>,
}

impl RmParams {
    pub fn sample(types: usize, resources: usize, rng: &mut RngStream) -> Self {
        let catalog = (0..types)
            .map(|_| CustomerType {
                reward: rng.uniform_range(1.0, 2.0),
                usage: (0..resources).map(|_| rng.uniform_range(1.0, 2.0)).collect(),
            })
            .collect();
        let mu: Vec<f64> = (0..types).map(|_| rng.uniform()).collect();
        Self {
            catalog,
            arrival_probs: normalize_weights(&mu),
        }
    }

    pub fn resources(&self) -> usize {
        self.catalog.first().map_or(0, |c| c.usage.len())
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.resources();
        if self.catalog.is_empty() || j == 0 || self.catalog.iter().any(|c| c.usage.len() != j) {
            return Err(Error::Config("catalog entries must share a positive resource count".into()));
        }
        if self.arrival_probs.len() != self.catalog.len()
            || self.arrival_probs.iter().any(|&p| p < 0.0)
            || (self.arrival_probs.iter().sum::<f64>() - 1.0).abs() > PROB_TOL
        {
            return Err(Error::Config("arrival probabilities must be a distribution over the catalog".into()));
        }
        Ok(())
    }

    pub fn catalog_index(&self, x: &Context) -> Option<usize> {
        let v = x.values();
        self.catalog
            .iter()
            .position(|c| v.len() == 1 + c.usage.len() && v[0] == c.reward && v[1..] == c.usage[..])
    }

    fn arrived(&self, x: &Context) -> Result<usize> {
        self.catalog_index(x)
            .ok_or_else(|| Error::InvalidShape(format!("context {:?} is not a catalog entry", x.values())))
    }

    pub fn permits(&self, state: &EnvState, k: usize) -> bool {
        self.catalog[k]
            .usage
            .iter()
            .zip(&state.budget)
            .all(|(u, b)| *b >= u - BUDGET_TOL)
    }

    pub fn sample_context(&self, rng: &mut RngStream) -> Context {
        self.catalog[rng.categorical(&self.arrival_probs)].context()
    }

    /// Observation `(reward collected, accepted flag)`.
    pub fn observe(&self, state: &EnvState, x: &Context, a: &Action, rng: &mut RngStream) -> Result<Observation> {
        let k = self.arrived(x)?;
        let p = scalar(a)?;
        let accept = self.permits(state, k) && rng.bernoulli(p);
        let y = if accept { 1.0 } else { 0.0 };
        Ok(Observation(vec![self.catalog[k].reward * y, y]))
    }

    pub fn advance(&self, state: &mut EnvState, x: &Context, o: &Observation) -> Result<()> {
        let k = self.arrived(x)?;
        let y = *o.values().get(1).ok_or_else(|| obs_shape(o, 2))?;
        for (b, u) in state.budget.iter_mut().zip(&self.catalog[k].usage) {
            *b = (*b - u * y).max(0.0);
        }
        state.counts[k] += 1;
        Ok(())
    }

    pub fn expected_reward(&self, state: &EnvState, x: &Context, a: &Action) -> Result<f64> {
        let k = self.arrived(x)?;
        if !self.permits(state, k) {
            return Ok(0.0);
        }
        Ok(self.catalog[k].reward * scalar(a)?)
    }

    /// The re-solving expert's acceptance probability for the arrived type.
    pub fn optimal_action(&self, state: &EnvState, x: &Context, horizon: usize) -> Result<Action> {
        let k = self.arrived(x)?;
        if !self.permits(state, k) {
            return Ok(Action::Scalar(0.0));
        }
        let p = accept_probability(&self.catalog, &state.counts, &state.budget, state.t, horizon, k)?;
        Ok(Action::Scalar(p))
    }

    pub fn log_likelihood(&self, x: &Context) -> f64 {
        match self.catalog_index(x) {
            Some(k) => self.arrival_probs[k].ln(),
            None => f64::NEG_INFINITY,
        }
    }
}

pub fn normalize_weights(mu: &[f64]) -> Vec<f64> {
    let total: f64 = mu.iter().sum();
    if total <= 0.0 {
        return vec![1.0 / mu.len() as f64; mu.len()];
    }
    mu.iter().map(|m| m / total).collect()
}
