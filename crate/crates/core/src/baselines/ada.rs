//! Re-solving allocation for network revenue management.

use super::lp::{lp_solve, LpProblem};
use crate::domain::{Action, History};
use crate::envs::{CustomerType, RmParams};
use crate::error::{Error, Result};
use crate::eval::PolicyHandle;
use crate::rng::RngStream;

/// Counts, budget and clock reconstructed from a history.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaState {
    pub remaining_budget: Vec<f64>,
    pub counts: Vec<usize>,
    pub t: usize,
}

impl AdaState {
    pub fn initial(types: usize, resources: usize, horizon: usize) -> Self {
        Self {
            remaining_budget: vec![horizon as f64; resources],
            counts: vec![0; types],
            t: 1,
        }
    }

    pub fn from_history(catalog: &[CustomerType], horizon: usize, h: &History) -> Result<Self> {
        let resources = catalog.first().map_or(0, |c| c.usage.len());
        let mut s = Self::initial(catalog.len(), resources, horizon);
        for step in h.steps() {
            let k = type_index(catalog, step.context.values())?;
            let y = step.observation.values().get(1).copied().unwrap_or(0.0);
            for (b, u) in s.remaining_budget.iter_mut().zip(&catalog[k].usage) {
                *b = (*b - u * y).max(0.0);
            }
            s.counts[k] += 1;
            s.t += 1;
        }
        Ok(s)
    }
}

pub(crate) fn type_index(catalog: &[CustomerType], x: &[f64]) -> Result<usize> {
    catalog
        .iter()
        .position(|c| x.len() == 1 + c.usage.len() && x[0] == c.reward && x[1..] == c.usage[..])
        .ok_or_else(|| Error::InvalidShape(format!("context {x:?} is not a catalog entry")))
}

/// The per-period allocation LP over empirical type frequencies.
pub fn allocation_lp(catalog: &[CustomerType], counts: &[usize], budget: &[f64], t: usize, horizon: usize) -> Result<LpProblem> {
    let seen = (t.max(2) - 1) as f64;
    let remaining = (horizon + 1).saturating_sub(t).max(1) as f64;
    let freq: Vec<f64> = counts.iter().map(|&c| c as f64 / seen).collect();
    let objective = catalog.iter().zip(&freq).map(|(c, f)| f * c.reward).collect();
    let resources = budget.len();
    let constraints = (0..resources)
        .map(|i| catalog.iter().zip(&freq).map(|(c, f)| f * c.usage[i]).collect())
        .collect();
    let rhs = budget.iter().map(|b| (b / remaining).max(0.0)).collect();
    LpProblem::new(objective, constraints, rhs)
}

/// Acceptance probability for an arrival of type `k` at time `t`. The first
/// arrival is accepted; a type not seen before leaves the LP indifferent and
/// is accepted.
pub fn accept_probability(
    catalog: &[CustomerType],
    counts: &[usize],
    budget: &[f64],
    t: usize,
    horizon: usize,
    k: usize,
) -> Result<f64> {
    if t <= 1 || counts[k] == 0 {
        return Ok(1.0);
    }
    let lp = allocation_lp(catalog, counts, budget, t, horizon)?;
    Ok(lp_solve(&lp)?.y[k].clamp(0.0, 1.0))
}

/// Upper bound: the LP relaxation of the hindsight allocation problem.
pub fn hindsight_lp_bound(arrivals: &[CustomerType], budget: f64) -> Result<f64> {
    let resources = arrivals.first().map_or(0, |c| c.usage.len());
    let lp = LpProblem::new(
        arrivals.iter().map(|c| c.reward).collect(),
        (0..resources)
            .map(|i| arrivals.iter().map(|c| c.usage[i]).collect())
            .collect(),
        vec![budget; resources],
    )?;
    Ok(lp_solve(&lp)?.value)
}

/// Exact hindsight optimum by enumerating every accept/reject vector.
pub fn hindsight_integer_optimum(arrivals: &[CustomerType], budget: f64) -> f64 {
    assert!(arrivals.len() <= 24, "enumeration is limited to short horizons");
    let resources = arrivals.first().map_or(0, |c| c.usage.len());
    let mut best = 0.0f64;
    for mask in 0u32..(1 << arrivals.len()) {
        let mut used = vec![0.0; resources];
        let mut value = 0.0;
        for (i, c) in arrivals.iter().enumerate() {
            if mask >> i & 1 == 1 {
                value += c.reward;
                for (u, a) in used.iter_mut().zip(&c.usage) {
                    *u += a;
                }
            }
        }
        if used.iter().all(|&u| u <= budget + 1e-12) {
            best = best.max(value);
        }
    }
    best
}

/// The re-solving expert as a policy; knows the catalog, not the arrival
/// probabilities.
#[derive(Debug, Clone)]
pub struct Ada {
    catalog: Vec<CustomerType>,
    horizon: usize,
}

impl Ada {
    pub fn new(params: &RmParams, horizon: usize) -> Self {
        Self {
            catalog: params.catalog.clone(),
            horizon,
        }
    }

    pub fn allocate(&self, state: &AdaState, x: &[f64]) -> Result<f64> {
        let k = type_index(&self.catalog, x)?;
        let fits = self.catalog[k]
            .usage
            .iter()
            .zip(&state.remaining_budget)
            .all(|(u, b)| *b >= u - crate::envs::BUDGET_TOL);
        if !fits {
            return Ok(0.0);
        }
        accept_probability(&self.catalog, &state.counts, &state.remaining_budget, state.t, self.horizon, k)
    }
}

impl PolicyHandle for Ada {
    fn name(&self) -> &str {
        "Ada"
    }

    fn act(&mut self, h: &History, _rng: &mut RngStream) -> Result<Action> {
        let state = AdaState::from_history(&self.catalog, self.horizon, h)?;
        Ok(Action::Scalar(self.allocate(&state, h.current_context().values())?))
    }

    fn reset(&mut self) {}
}
