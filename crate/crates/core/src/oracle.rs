//! Exact posteriors over finite environment pools and the posterior decision
//! rules (averaging, sampling, median).

use serde::{Deserialize, Serialize};

use crate::domain::{Action, Context, History, Step};
use crate::envs::{EnvParams, EnvState, PriorSpec, TaskFamily};
use crate::error::{Error, Result};
use crate::eval::PolicyHandle;
use crate::rng::RngStream;

/// Cap applied to an infinite cross-entropy when it feeds an optimizer.
pub const TRAINING_LOSS_CAP: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosteriorMode {
    Averaging,
    Sampling,
    Median,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Squared,
    Absolute,
}

impl LossKind {
    /// Default loss per family: cross-entropy for discrete arms, absolute
    /// for linear bandits and newsvendor, squared otherwise.
    pub fn for_family(f: TaskFamily) -> Self {
        match f {
            TaskFamily::Mab => LossKind::CrossEntropy,
            TaskFamily::LinearBandit | TaskFamily::Newsvendor => LossKind::Absolute,
            TaskFamily::Pricing | TaskFamily::Queue | TaskFamily::RevenueManagement => LossKind::Squared,
        }
    }

    /// The posterior rule minimizing this loss.
    pub fn matching_mode(self) -> PosteriorMode {
        match self {
            LossKind::CrossEntropy => PosteriorMode::Sampling,
            LossKind::Squared => PosteriorMode::Averaging,
            LossKind::Absolute => PosteriorMode::Median,
        }
    }
}

/// Prediction loss of `a` against the target `a_star`. Cross-entropy is
/// `+inf` when the target has zero predicted probability.
pub fn loss(a: &Action, a_star: &Action, kind: LossKind) -> Result<f64> {
    match kind {
        LossKind::CrossEntropy => {
            let k = a_star
                .as_index()
                .ok_or_else(|| Error::InvalidAction(format!("cross-entropy target {a_star:?} is not an index")))?;
            let p = match a {
                Action::Distribution(p) => p,
                _ => return Err(Error::InvalidAction(format!("cross-entropy needs a distribution, got {a:?}"))),
            };
            let pk = *p.get(k).ok_or(Error::OutOfRange {
                index: k,
                limit: p.len(),
            })?;
            Ok(if pk > 0.0 { -pk.ln() } else { f64::INFINITY })
        }
        LossKind::Squared | LossKind::Absolute => {
            let (x, y) = match (a.coords(), a_star.coords()) {
                (Some(x), Some(y)) if x.len() == y.len() => (x, y),
                _ => {
                    return Err(Error::InvalidAction(format!(
                        "cannot compare {a:?} with {a_star:?} under a regression loss"
                    )))
                }
            };
            let it = x.iter().zip(&y);
            Ok(if kind == LossKind::Squared {
                it.map(|(u, v)| (u - v) * (u - v)).sum()
            } else {
                it.map(|(u, v)| (u - v).abs()).sum()
            })
        }
    }
}

/// [`loss`] with infinities capped for use as a training signal.
pub fn training_loss(a: &Action, a_star: &Action, kind: LossKind) -> Result<f64> {
    Ok(loss(a, a_star, kind)?.min(TRAINING_LOSS_CAP))
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Posterior over a finite pool. Every member carries its own task state so
/// state-dependent optimal actions stay exact.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pool: Vec<EnvParams>,
    log_weights: Vec<f64>,
    states: Vec<EnvState>,
    horizon: usize,
}

impl Posterior {
    pub fn uniform(pool: Vec<EnvParams>, horizon: usize) -> Result<Self> {
        if pool.is_empty() {
            return Err(Error::Config("posterior pool is empty".into()));
        }
        let lw = -(pool.len() as f64).ln();
        let states = pool.iter().map(|p| EnvState::initial(p, horizon)).collect();
        Ok(Self {
            log_weights: vec![lw; pool.len()],
            pool,
            states,
            horizon,
        })
    }

    pub fn from_prior(prior: &PriorSpec) -> Result<Self> {
        let pool = prior
            .pool()
            .ok_or_else(|| Error::UnsupportedMode("posterior oracles need a finite pool".into()))?;
        Self::uniform(pool.to_vec(), prior.horizon)
    }

    /// Posterior after all steps of `h`.
    pub fn replay(pool: Vec<EnvParams>, horizon: usize, h: &History) -> Result<Self> {
        let mut p = Self::uniform(pool, horizon)?;
        for s in h.steps() {
            p.observe(s)?;
        }
        Ok(p)
    }

    pub fn pool(&self) -> &[EnvParams] {
        &self.pool
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn states(&self) -> &[EnvState] {
        &self.states
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Normalized weights.
    pub fn weights(&self) -> Vec<f64> {
        let z = log_sum_exp(&self.log_weights);
        self.log_weights.iter().map(|l| (l - z).exp()).collect()
    }

    /// In-place Bayes update with one step.
    pub fn observe(&mut self, step: &Step) -> Result<()> {
        let mut next = self.log_weights.clone();
        for (i, p) in self.pool.iter().enumerate() {
            if next[i] == f64::NEG_INFINITY {
                continue;
            }
            let ll = p.log_likelihood(&self.states[i], &step.context, &step.action, &step.observation)?;
            next[i] += ll;
            if next[i] == f64::NEG_INFINITY || next[i].is_nan() {
                next[i] = f64::NEG_INFINITY;
                continue;
            }
            p.advance(&mut self.states[i], &step.context, &step.action, &step.observation)?;
        }
        let z = log_sum_exp(&next);
        if z == f64::NEG_INFINITY {
            return Err(Error::EmptyPosterior);
        }
        // renormalize to keep the log weights bounded over long horizons
        self.log_weights = next.into_iter().map(|l| l - z).collect();
        Ok(())
    }

    /// Members' optimal actions at `x` under their own states (including
    /// members the data has ruled out).
    pub fn optimal_actions(&self, x: &Context) -> Result<Vec<Action>> {
        self.pool
            .iter()
            .zip(&self.states)
            .map(|(p, s)| p.optimal_action(s, x, self.horizon))
            .collect()
    }
}

/// Value-semantics posterior update.
pub fn posterior_update(p: &Posterior, step: &Step) -> Result<Posterior> {
    let mut next = p.clone();
    next.observe(step)?;
    Ok(next)
}

/// Posterior averaging, sampling or median of the members' optimal actions.
pub fn alg_star(p: &Posterior, x: &Context, mode: PosteriorMode, rng: &mut RngStream) -> Result<Action> {
    let mut w = Vec::with_capacity(p.pool.len());
    let mut acts = Vec::with_capacity(p.pool.len());
    for (i, wi) in p.weights().into_iter().enumerate() {
        if wi > 0.0 {
            acts.push(p.pool[i].optimal_action(&p.states[i], x, p.horizon)?);
            w.push(wi);
        }
    }
    match mode {
        PosteriorMode::Sampling => Ok(acts[rng.categorical(&w)].clone()),
        PosteriorMode::Averaging => {
            let arms = match p.pool[0].task().action_space() {
                crate::domain::ActionSpace::Discrete { count } => count,
                _ => 0,
            };
            average(&acts, &w, arms)
        }
        PosteriorMode::Median => median(&acts, &w),
    }
}

fn average(acts: &[Action], w: &[f64], arms: usize) -> Result<Action> {
    if let Some(Action::Index(_)) = acts.first() {
        let mut dist = vec![0.0; arms];
        for (a, wi) in acts.iter().zip(w) {
            let k = a
                .as_index()
                .filter(|&k| k < arms)
                .ok_or_else(|| Error::InvalidAction(format!("{a:?} is not one of {arms} arms")))?;
            dist[k] += wi;
        }
        return Ok(Action::Distribution(dist));
    }
    let dim = acts[0]
        .coords()
        .ok_or_else(|| Error::InvalidAction(format!("cannot average {:?}", acts[0])))?
        .len();
    let mut mean = vec![0.0; dim];
    for (a, wi) in acts.iter().zip(w) {
        let c = a.coords().ok_or_else(|| Error::InvalidAction("mixed action kinds in pool".into()))?;
        for (m, v) in mean.iter_mut().zip(&c) {
            *m += wi * v;
        }
    }
    Ok(match &acts[0] {
        Action::Scalar(_) => Action::Scalar(mean[0]),
        _ => Action::Vector(mean),
    })
}

/// Smallest action whose cumulative weight reaches one half; equal actions
/// are merged first.
fn median(acts: &[Action], w: &[f64]) -> Result<Action> {
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(acts.len());
    for (a, wi) in acts.iter().zip(w) {
        match a {
            Action::Scalar(v) => pairs.push((*v, *wi)),
            _ => return Err(Error::UnsupportedMode(format!("median of non-scalar action {a:?}"))),
        }
    }
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(pairs.len());
    for (v, wi) in pairs {
        match merged.last_mut() {
            Some(last) if last.0 == v => last.1 += wi,
            _ => merged.push((v, wi)),
        }
    }
    let mut cum = 0.0;
    for (v, wi) in &merged {
        cum += wi;
        if cum >= 0.5 - 1e-12 {
            return Ok(Action::Scalar(*v));
        }
    }
    Ok(Action::Scalar(merged.last().map_or(0.0, |m| m.0)))
}

/// Alg* as a live policy. Discrete averaging outputs are played at their
/// most likely arm by the harness.
#[derive(Debug, Clone)]
pub struct AlgStar {
    pool: Vec<EnvParams>,
    horizon: usize,
    mode: PosteriorMode,
    name: String,
    cache: Option<Posterior>,
    consumed: usize,
}

impl AlgStar {
    pub fn new(pool: Vec<EnvParams>, horizon: usize, mode: PosteriorMode) -> Result<Self> {
        Posterior::uniform(pool.clone(), horizon)?;
        let name = match mode {
            PosteriorMode::Averaging => "Alg*-averaging",
            PosteriorMode::Sampling => "Alg*-sampling",
            PosteriorMode::Median => "Alg*-median",
        }
        .to_string();
        Ok(Self {
            pool,
            horizon,
            mode,
            name,
            cache: None,
            consumed: 0,
        })
    }

    pub fn from_prior(prior: &PriorSpec, mode: PosteriorMode) -> Result<Self> {
        let pool = prior
            .pool()
            .ok_or_else(|| Error::UnsupportedMode("Alg* needs a finite pool".into()))?;
        Self::new(pool.to_vec(), prior.horizon, mode)
    }

    pub fn mode(&self) -> PosteriorMode {
        self.mode
    }

    /// Posterior given `h`, reusing the previous call's work when `h`
    /// extends the history seen so far.
    pub fn posterior(&mut self, h: &History) -> Result<&Posterior> {
        let n = h.steps().len();
        if self.cache.is_none() || n < self.consumed {
            self.cache = Some(Posterior::uniform(self.pool.clone(), self.horizon)?);
            self.consumed = 0;
        }
        let post = self.cache.as_mut().expect("cache initialized above");
        for s in &h.steps()[self.consumed..] {
            post.observe(s)?;
        }
        self.consumed = n;
        Ok(post)
    }
}

impl PolicyHandle for AlgStar {
    fn name(&self) -> &str {
        &self.name
    }

    fn act(&mut self, h: &History, rng: &mut RngStream) -> Result<Action> {
        let mode = self.mode;
        let post = self.posterior(h)?;
        alg_star(post, h.current_context(), mode, rng)
    }

    fn reset(&mut self) {
        self.cache = None;
        self.consumed = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Observation;
    use crate::envs::{DemandKind, LinBanditParams, MabParams, NewsvendorParams, PricingParams};

    fn mab(means: &[f64]) -> EnvParams {
        EnvParams::Mab(MabParams {
            means: means.to_vec(),
            noise_sd: crate::envs::default_noise_sd(),
        })
    }

    fn pricing(alpha: f64, beta: f64) -> EnvParams {
        EnvParams::Pricing(PricingParams {
            alpha: vec![alpha],
            beta: vec![beta],
            noise_sd: 1.0,
            demand: DemandKind::Linear,
            change: None,
        })
    }

    fn step(x: Context, a: Action, o: Vec<f64>) -> Step {
        Step {
            context: x,
            action: a,
            observation: Observation(o),
        }
    }

    #[test]
    fn identical_members_keep_equal_weights() {
        let mut p = Posterior::uniform(vec![mab(&[0.1, 0.5]), mab(&[0.1, 0.5])], 10).unwrap();
        for r in [0.3, -1.0, 2.0] {
            p.observe(&step(Context::empty(), Action::Index(1), vec![r])).unwrap();
        }
        assert_eq!(p.weights(), vec![0.5, 0.5]);
    }

    #[test]
    fn uninformative_linear_pulls_keep_half_weights() {
        let lb = |w: [f64; 2]| {
            EnvParams::LinearBandit(LinBanditParams {
                w: w.to_vec(),
                noise_sd: 1.0,
            })
        };
        let mut p = Posterior::uniform(vec![lb([1.0, 0.0]), lb([0.0, 1.0])], 10).unwrap();
        let mut rng = RngStream::new(0, 0);
        for _ in 0..50 {
            let r = rng.normal(0.5, 1.0);
            p.observe(&step(Context::empty(), Action::Vector(vec![0.5, 0.5]), vec![r])).unwrap();
            let w = p.weights();
            assert!((w[0] - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn newsvendor_support_violation_zeroes_weight() {
        let nv = |w: f64, cap: f64| {
            EnvParams::Newsvendor(NewsvendorParams {
                w: vec![w],
                noise_cap: cap,
                holding_cost: 1.0,
                lost_sale_cost: 1.0,
                censored: false,
                perishable: true,
                demand: DemandKind::Linear,
                change: None,
            })
        };
        let mut p = Posterior::uniform(vec![nv(1.0, 1.0), nv(1.0, 4.0)], 5).unwrap();
        // D - w x = 1.5 exceeds the first member's noise cap of 1
        p.observe(&step(Context(vec![1.0, 2.0]), Action::Scalar(3.0), vec![0.0, 3.5])).unwrap();
        assert_eq!(p.weights(), vec![0.0, 1.0]);
        let err = p.observe(&step(Context(vec![1.0, 2.0]), Action::Scalar(3.0), vec![0.0, 40.0]));
        assert!(matches!(err, Err(Error::EmptyPosterior)));
    }

    #[test]
    fn posterior_update_is_pure() {
        let p = Posterior::uniform(vec![mab(&[0.0, 1.0]), mab(&[1.0, 0.0])], 3).unwrap();
        let q = posterior_update(&p, &step(Context::empty(), Action::Index(0), vec![1.0])).unwrap();
        assert_eq!(p.weights(), vec![0.5, 0.5]);
        assert!(q.weights()[1] > 0.5);
    }

    #[test]
    fn averaging_half_half_prices() {
        let p = Posterior::uniform(vec![pricing(2.0, 1.0), pricing(0.8, 0.2)], 10).unwrap();
        let mut rng = RngStream::new(0, 0);
        let a = alg_star(&p, &Context(vec![1.0]), PosteriorMode::Averaging, &mut rng).unwrap();
        assert!((a.as_scalar().unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn degenerate_posterior_returns_member_optimum() {
        let mut p = Posterior::uniform(vec![pricing(2.0, 1.0), pricing(0.8, 0.2)], 10).unwrap();
        p.log_weights = vec![0.0, f64::NEG_INFINITY];
        let mut rng = RngStream::new(0, 0);
        for mode in [PosteriorMode::Averaging, PosteriorMode::Sampling, PosteriorMode::Median] {
            let a = alg_star(&p, &Context(vec![1.0]), mode, &mut rng).unwrap();
            assert!((a.as_scalar().unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn median_rule_examples() {
        let acts: Vec<Action> = [3.0, 1.0, 2.0].iter().map(|&v| Action::Scalar(v)).collect();
        assert_eq!(median(&acts, &[0.5, 0.2, 0.3]).unwrap(), Action::Scalar(2.0));
        let acts: Vec<Action> = [1.0, 1.0, 2.0].iter().map(|&v| Action::Scalar(v)).collect();
        assert_eq!(median(&acts, &[0.25, 0.25, 0.5]).unwrap(), Action::Scalar(1.0));
        let v = vec![Action::Vector(vec![1.0, 0.0])];
        assert!(matches!(median(&v, &[1.0]), Err(Error::UnsupportedMode(_))));
    }

    #[test]
    fn discrete_averaging_is_a_distribution() {
        let p = Posterior::uniform(vec![mab(&[1.0, 0.0, 0.0]), mab(&[0.0, 0.0, 1.0]), mab(&[0.0, 0.0, 2.0])], 3).unwrap();
        let mut rng = RngStream::new(0, 0);
        let a = alg_star(&p, &Context::empty(), PosteriorMode::Averaging, &mut rng).unwrap();
        let Action::Distribution(d) = a else { panic!("expected distribution") };
        assert!((d[0] - 1.0 / 3.0).abs() < 1e-12 && (d[2] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn loss_examples() {
        let ce = loss(&Action::Distribution(vec![0.5, 0.5]), &Action::Index(0), LossKind::CrossEntropy).unwrap();
        assert!((ce - 0.5f64.ln().abs()).abs() < 1e-12);
        assert_eq!(loss(&Action::Scalar(3.0), &Action::Scalar(3.0), LossKind::Squared).unwrap(), 0.0);
        let l1 = loss(&Action::Vector(vec![1.0, 2.0]), &Action::Vector(vec![0.0, 0.0]), LossKind::Absolute).unwrap();
        assert_eq!(l1, 3.0);
        let inf = loss(&Action::Distribution(vec![1.0, 0.0]), &Action::Index(1), LossKind::CrossEntropy).unwrap();
        assert_eq!(inf, f64::INFINITY);
        let capped = training_loss(&Action::Distribution(vec![1.0, 0.0]), &Action::Index(1), LossKind::CrossEntropy).unwrap();
        assert_eq!(capped, TRAINING_LOSS_CAP);
        assert!(loss(&Action::Scalar(1.0), &Action::Index(0), LossKind::CrossEntropy).is_err());
    }

    #[test]
    fn policy_cache_matches_replay() {
        let pool = vec![mab(&[0.0, 1.0]), mab(&[1.0, 0.0]), mab(&[0.5, 0.5])];
        let mut policy = AlgStar::new(pool.clone(), 5, PosteriorMode::Averaging).unwrap();
        let mut h = History::new(Context::empty());
        let mut rng = RngStream::new(1, 1);
        for t in 0..5 {
            let cached = policy.posterior(&h).unwrap().weights();
            let fresh = Posterior::replay(pool.clone(), 5, &h).unwrap().weights();
            assert_eq!(cached, fresh);
            h.push(Action::Index(t % 2), Observation(vec![rng.normal(0.0, 1.0)]), Context::empty()).unwrap();
        }
        policy.reset();
        let short = History::new(Context::empty());
        assert_eq!(policy.posterior(&short).unwrap().weights(), vec![1.0 / 3.0; 3]);
    }
}
