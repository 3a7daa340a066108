//! Small exact instances on which Alg* itself has linear regret.

use crate::domain::{Context, History};
use crate::envs::{DemandKind, EnvParams, Environment, LinBanditParams, PricingParams};
use crate::error::{Error, Result};
use crate::oracle::{alg_star, Posterior, PosteriorMode};
use crate::rng::{labels, RngStream};

/// Two linear bandits with unit noise, `w = (1, 0)` and `w = (0, 1)`.
pub fn linear_bandit_pair() -> Vec<EnvParams> {
    [vec![1.0, 0.0], vec![0.0, 1.0]]
        .into_iter()
        .map(|w| EnvParams::LinearBandit(LinBanditParams { w, noise_sd: 1.0 }))
        .collect()
}

/// Two context-free linear pricing demands with unit noise,
/// `O = 2 - a + eps` and `O = 0.8 - 0.2 a + eps`, optimal prices 1 and 2.
/// The context is held at `x = 1`, see [`pricing_pair_context`].
pub fn pricing_pair() -> Vec<EnvParams> {
    [(2.0, 1.0), (0.8, 0.2)]
        .into_iter()
        .map(|(a, b)| {
            EnvParams::Pricing(PricingParams {
                alpha: vec![a],
                beta: vec![b],
                noise_sd: 1.0,
                demand: DemandKind::Linear,
                change: None,
            })
        })
        .collect()
}

pub fn pricing_pair_context() -> Context {
    Context(vec![1.0])
}

/// One live Alg* episode on a finite pool.
#[derive(Debug, Clone, PartialEq)]
pub struct LiveTrace {
    /// Posterior weights before each decision.
    pub weights: Vec<Vec<f64>>,
    /// Expected-reward gap of each decision.
    pub gaps: Vec<f64>,
    pub cumulative: Vec<f64>,
}

/// Play Alg* against pool member `truth` for `horizon` steps. With
/// `context = Some(x)` every step uses `x` instead of a sampled context.
pub fn alg_star_live(
    pool: &[EnvParams],
    truth: usize,
    horizon: usize,
    mode: PosteriorMode,
    context: Option<&Context>,
    rng: &RngStream,
) -> Result<LiveTrace> {
    let params = pool
        .get(truth)
        .ok_or(Error::OutOfRange { index: truth, limit: pool.len() })?
        .clone();
    let mut env = Environment::new(params, horizon)?;
    let mut post = Posterior::uniform(pool.to_vec(), horizon)?;
    let mut ctx_rng = rng.derive(labels::CONTEXT);
    let mut obs_rng = rng.derive(labels::OBSERVATION);
    let mut pol_rng = rng.derive(labels::POLICY);
    let next_context = |r: &mut RngStream, env: &Environment| context.cloned().unwrap_or_else(|| env.sample_context(r));
    let mut h = History::new(next_context(&mut ctx_rng, &env));
    let mut trace = LiveTrace {
        weights: Vec::with_capacity(horizon),
        gaps: Vec::with_capacity(horizon),
        cumulative: Vec::with_capacity(horizon),
    };
    let mut total = 0.0;
    for t in 1..=horizon {
        let x = h.current_context().clone();
        trace.weights.push(post.weights());
        let (a, _) = crate::eval::playable_action(&alg_star(&post, &x, mode, &mut pol_rng)?, &env.action_space())?;
        let a_star = env.optimal_action(&x)?;
        let gap = env.expected_reward(&x, &a_star)? - env.expected_reward(&x, &a)?;
        total += gap;
        trace.gaps.push(gap);
        trace.cumulative.push(total);
        let o = env.sample_observation(&x, &a, &mut obs_rng)?;
        post.observe(&crate::domain::Step {
            context: x,
            action: a.clone(),
            observation: o.clone(),
        })?;
        if t < horizon {
            let next = next_context(&mut ctx_rng, &env);
            h.push(a, o, next)?;
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn averaging_never_learns_on_the_linear_pair() {
        for truth in 0..2 {
            let tr = alg_star_live(&linear_bandit_pair(), truth, 100, PosteriorMode::Averaging, None, &RngStream::new(3, truth as u64)).unwrap();
            for (t, w) in tr.weights.iter().enumerate() {
                assert!((w[0] - 0.5).abs() < 1e-12 && (w[1] - 0.5).abs() < 1e-12);
                assert!((tr.cumulative[t] - 0.5 * (t + 1) as f64).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn averaging_prices_stay_at_one_and_a_half() {
        let x = pricing_pair_context();
        for (truth, slope) in [(0, 0.25), (1, 0.05)] {
            let tr = alg_star_live(&pricing_pair(), truth, 50, PosteriorMode::Averaging, Some(&x), &RngStream::new(4, 0)).unwrap();
            for (t, c) in tr.cumulative.iter().enumerate() {
                assert!((c - slope * (t + 1) as f64).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sampling_learns_the_linear_pair() {
        let tr = alg_star_live(&linear_bandit_pair(), 0, 200, PosteriorMode::Sampling, None, &RngStream::new(5, 0)).unwrap();
        assert!(tr.weights.last().unwrap()[0] > 0.99);
    }
}
