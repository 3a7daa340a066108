//! Single-queue service-rate control on queue lengths `0..=4`.

use serde::{Deserialize, Serialize};

use super::{obs_shape, scalar, EnvState};
use crate::domain::{Action, Context, Observation};
use crate::error::{Error, Result};
use crate::rng::RngStream;

pub const QUEUE_MAX_LEN: usize = 4;
pub const QUEUE_STATES: usize = QUEUE_MAX_LEN + 1;
pub const QUEUE_RATES: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
pub const QUEUE_ARRIVAL_GRID: [f64; 6] = [0.1, 0.26, 0.42, 0.58, 0.74, 0.9];
pub const QUEUE_COST_GRID: [f64; 6] = [5.0, 16.0, 27.0, 38.0, 49.0, 60.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueParams {
    pub arrival_rate: f64,
    pub cost_coeff: f64,
}

/// Distribution of the next queue length from `state` under service rate `a`.
pub fn transition_row(lambda: f64, state: usize, a: f64) -> [f64; QUEUE_STATES] {
    let mut row = [0.0; QUEUE_STATES];
    match state {
        0 => {
            row[0] = 1.0 - lambda;
            row[1] = lambda;
        }
        s if s == QUEUE_MAX_LEN => {
            row[s - 1] = (1.0 - lambda) * a;
            row[s] = 1.0 - a + lambda * a;
        }
        s => {
            row[s - 1] = (1.0 - lambda) * a;
            row[s] = (1.0 - lambda) * (1.0 - a) + lambda * a;
            row[s + 1] = lambda * (1.0 - a);
        }
    }
    row
}

/// One-period reward `-(length + c a^2)`.
pub fn stage_reward(len: usize, c: f64, a: f64) -> f64 {
    -(len as f64 + c * a * a)
}

impl QueueParams {
    pub fn sample(rng: &mut RngStream) -> Self {
        Self {
            arrival_rate: QUEUE_ARRIVAL_GRID[rng.index(QUEUE_ARRIVAL_GRID.len())],
            cost_coeff: QUEUE_COST_GRID[rng.index(QUEUE_COST_GRID.len())],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.arrival_rate > 0.0 && self.arrival_rate < 1.0) || !(self.cost_coeff > 0.0) {
            return Err(Error::Config("queue needs arrival rate in (0,1) and a positive cost".into()));
        }
        Ok(())
    }

    pub fn context(&self, state: &EnvState) -> Context {
        Context(vec![state.queue_len as f64, self.cost_coeff])
    }

    fn current_len(x: &Context) -> Result<usize> {
        match x.values() {
            [len, _] if *len >= 0.0 && *len <= QUEUE_MAX_LEN as f64 => Ok(len.round() as usize),
            _ => Err(Error::InvalidShape(format!("queue context {:?}", x.values()))),
        }
    }

    pub fn observe(&self, x: &Context, a: &Action, rng: &mut RngStream) -> Result<Observation> {
        let len = Self::current_len(x)?;
        let rate = scalar(a)?;
        let next = rng.categorical(&transition_row(self.arrival_rate, len, rate));
        Ok(Observation(vec![stage_reward(len, self.cost_coeff, rate), next as f64]))
    }

    pub fn expected_reward(&self, x: &Context, a: &Action) -> Result<f64> {
        Ok(stage_reward(Self::current_len(x)?, self.cost_coeff, scalar(a)?))
    }

    /// `Q_n(s, a)` over the rate grid for `n` remaining periods.
    pub fn q_values(&self, len: usize, remaining: usize) -> [f64; QUEUE_RATES.len()] {
        let v = self.values(remaining.saturating_sub(1));
        let mut q = [0.0; QUEUE_RATES.len()];
        for (k, &a) in QUEUE_RATES.iter().enumerate() {
            let row = transition_row(self.arrival_rate, len, a);
            q[k] = stage_reward(len, self.cost_coeff, a) + row.iter().zip(&v).map(|(p, v)| p * v).sum::<f64>();
        }
        q
    }

    /// Optimal value `V_n(s)` of every state with `n` periods to go.
    pub fn values(&self, remaining: usize) -> [f64; QUEUE_STATES] {
        let mut v = [0.0; QUEUE_STATES];
        for _ in 0..remaining {
            let mut next = [0.0; QUEUE_STATES];
            for (s, slot) in next.iter_mut().enumerate() {
                *slot = QUEUE_RATES
                    .iter()
                    .map(|&a| {
                        let row = transition_row(self.arrival_rate, s, a);
                        stage_reward(s, self.cost_coeff, a) + row.iter().zip(&v).map(|(p, v)| p * v).sum::<f64>()
                    })
                    .fold(f64::NEG_INFINITY, f64::max);
            }
            v = next;
        }
        v
    }

    /// Backward-induction action for the `T - t + 1` remaining periods (at
    /// least one); ties go to the slowest rate.
    pub fn optimal_action(&self, t: usize, x: &Context, horizon: usize) -> Result<Action> {
        let len = Self::current_len(x)?;
        let remaining = (horizon + 1).saturating_sub(t).max(1);
        let q = self.q_values(len, remaining);
        let mut best = 0;
        for k in 1..q.len() {
            if q[k] > q[best] + 1e-12 {
                best = k;
            }
        }
        Ok(Action::Scalar(QUEUE_RATES[best]))
    }

    pub fn log_likelihood(&self, x: &Context, a: &Action, o: &Observation) -> Result<f64> {
        let next = *o.values().get(1).ok_or_else(|| obs_shape(o, 2))?;
        let row = transition_row(self.arrival_rate, Self::current_len(x)?, scalar(a)?);
        let idx = next.round();
        if idx < 0.0 || idx > QUEUE_MAX_LEN as f64 {
            return Ok(f64::NEG_INFINITY);
        }
        Ok(row[idx as usize].ln())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_sum_to_one() {
        for &l in &QUEUE_ARRIVAL_GRID {
            for &a in &QUEUE_RATES {
                for s in 0..QUEUE_STATES {
                    let row = transition_row(l, s, a);
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    assert!(row.iter().all(|&p| p >= 0.0));
                }
            }
        }
    }

    #[test]
    fn full_service_row_example() {
        let row = transition_row(0.1, 1, 1.0);
        assert!((row[0] - 0.9).abs() < 1e-15);
        assert!((row[1] - 0.1).abs() < 1e-15);
        assert_eq!(row[2], 0.0);
    }

    #[test]
    fn context_reports_length_and_cost() {
        let p = QueueParams {
            arrival_rate: 0.5,
            cost_coeff: 5.0,
        };
        let mut state = EnvState::initial(&super::super::EnvParams::Queue(p.clone()), 10);
        state.queue_len = 3;
        assert_eq!(p.context(&state), Context(vec![3.0, 5.0]));
    }

    /// Expectimax over the full decision tree.
    fn brute(p: &QueueParams, s: usize, n: usize) -> f64 {
        if n == 0 {
            return 0.0;
        }
        QUEUE_RATES
            .iter()
            .map(|&a| {
                let row = transition_row(p.arrival_rate, s, a);
                stage_reward(s, p.cost_coeff, a)
                    + (0..QUEUE_STATES)
                        .filter(|&k| row[k] > 0.0)
                        .map(|k| row[k] * brute(p, k, n - 1))
                        .sum::<f64>()
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn dp_matches_expectimax() {
        for &l in &QUEUE_ARRIVAL_GRID {
            for &c in &QUEUE_COST_GRID {
                let p = QueueParams {
                    arrival_rate: l,
                    cost_coeff: c,
                };
                for n in 1..=4 {
                    let v = p.values(n);
                    for s in 0..QUEUE_STATES {
                        assert!((v[s] - brute(&p, s, n)).abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn last_period_serves_nothing() {
        // with one period left, any service only adds cost
        let p = QueueParams {
            arrival_rate: 0.9,
            cost_coeff: 5.0,
        };
        let x = Context(vec![4.0, 5.0]);
        assert_eq!(p.optimal_action(10, &x, 10).unwrap(), Action::Scalar(0.0));
    }

    #[test]
    fn prior_uses_grids() {
        let mut rng = RngStream::new(0, 5);
        for _ in 0..1000 {
            let p = QueueParams::sample(&mut rng);
            assert!(QUEUE_ARRIVAL_GRID.contains(&p.arrival_rate));
            assert!(QUEUE_COST_GRID.contains(&p.cost_coeff));
        }
    }
}
