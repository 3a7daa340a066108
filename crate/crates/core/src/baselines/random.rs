use crate::domain::{Action, History};
use crate::envs::QUEUE_RATES;
use crate::error::Result;
use crate::eval::PolicyHandle;
use crate::rng::RngStream;

pub fn random_rate(grid: &[f64], rng: &mut RngStream) -> f64 {
    grid[rng.index(grid.len())]
}

/// Uniformly random service rate for the queue.
#[derive(Debug, Clone, Default)]
pub struct RandomRate;

impl PolicyHandle for RandomRate {
    fn name(&self) -> &str {
        "Random"
    }

    fn act(&mut self, _h: &History, rng: &mut RngStream) -> Result<Action> {
        Ok(Action::Scalar(random_rate(&QUEUE_RATES, rng)))
    }

    fn reset(&mut self) {}
}
