//! Multi-armed and linear bandit baselines.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{exploration_weight, RegressorState};
use crate::domain::{argmax, Action, History};
use crate::envs::NOISE_VARIANCE;
use crate::error::{Error, Result};
use crate::eval::PolicyHandle;
use crate::rng::RngStream;

/// How the exploration bonus is divided by the pull count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BonusDivisor {
    /// `max{1, n_a}`: the bonus shrinks with pulls.
    #[default]
    Max,
    /// `min{1, n_a}` as printed: infinite for unpulled arms, constant after.
    LiteralMin,
}

impl BonusDivisor {
    fn bonus(&self, weight: f64, n: usize) -> f64 {
        match self {
            BonusDivisor::Max => weight / n.max(1) as f64,
            BonusDivisor::LiteralMin if n == 0 => f64::INFINITY,
            BonusDivisor::LiteralMin => weight,
        }
    }
}

/// Pull counts and empirical mean rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmStats {
    pub counts: Vec<usize>,
    pub means: Vec<f64>,
}

impl ArmStats {
    pub fn from_history(arms: usize, h: &History) -> Result<Self> {
        let mut counts = vec![0usize; arms];
        let mut sums = vec![0.0; arms];
        for s in h.steps() {
            let a = s
                .action
                .argmax()
                .filter(|&a| a < arms)
                .ok_or_else(|| Error::InvalidAction(format!("{:?} is not an arm", s.action)))?;
            counts[a] += 1;
            sums[a] += s.observation.values()[0];
        }
        let means = sums
            .iter()
            .zip(&counts)
            .map(|(s, &n)| if n == 0 { 0.0 } else { s / n as f64 })
            .collect();
        Ok(Self { counts, means })
    }
}

pub fn ucb_select(stats: &ArmStats, horizon: usize, divisor: BonusDivisor) -> usize {
    let w = exploration_weight(horizon);
    let scores: Vec<f64> = stats
        .means
        .iter()
        .zip(&stats.counts)
        .map(|(m, &n)| m + divisor.bonus(w, n))
        .collect();
    argmax(&scores)
}

/// Draw `r_a ~ N(mean_a, bonus_a)` (the bonus is the variance) and take the
/// best draw.
pub fn ts_select(stats: &ArmStats, horizon: usize, divisor: BonusDivisor, rng: &mut RngStream) -> usize {
    let w = exploration_weight(horizon);
    let draws: Vec<f64> = stats
        .means
        .iter()
        .zip(&stats.counts)
        .map(|(m, &n)| {
            let var = divisor.bonus(w, n);
            if var.is_infinite() {
                if rng.bernoulli(0.5) {
                    f64::INFINITY
                } else {
                    f64::NEG_INFINITY
                }
            } else {
                rng.normal(*m, var.sqrt())
            }
        })
        .collect();
    argmax(&draws)
}

#[derive(Debug, Clone)]
pub struct Ucb {
    pub arms: usize,
    pub horizon: usize,
    pub divisor: BonusDivisor,
}

impl Ucb {
    pub fn new(arms: usize, horizon: usize) -> Self {
        Self {
            arms,
            horizon,
            divisor: BonusDivisor::Max,
        }
    }
}

impl PolicyHandle for Ucb {
    fn name(&self) -> &str {
        "UCB"
    }

    fn act(&mut self, h: &History, _rng: &mut RngStream) -> Result<Action> {
        let stats = ArmStats::from_history(self.arms, h)?;
        Ok(Action::Index(ucb_select(&stats, self.horizon, self.divisor)))
    }

    fn reset(&mut self) {}
}

#[derive(Debug, Clone)]
pub struct ThompsonMab {
    pub arms: usize,
    pub horizon: usize,
    pub divisor: BonusDivisor,
}

impl ThompsonMab {
    pub fn new(arms: usize, horizon: usize) -> Self {
        Self {
            arms,
            horizon,
            divisor: BonusDivisor::Max,
        }
    }
}

impl PolicyHandle for ThompsonMab {
    fn name(&self) -> &str {
        "TS"
    }

    fn act(&mut self, h: &History, rng: &mut RngStream) -> Result<Action> {
        let stats = ArmStats::from_history(self.arms, h)?;
        Ok(Action::Index(ts_select(&stats, self.horizon, self.divisor, rng)))
    }

    fn reset(&mut self) {}
}

/// `Sigma_t = sum a a' + sigma^2 I` and `sum O a` from a linear-bandit history.
pub fn linear_regressor(dim: usize, h: &History) -> Result<RegressorState> {
    let mut reg = RegressorState::new(dim, NOISE_VARIANCE);
    for s in h.steps() {
        let a = s
            .action
            .coords()
            .filter(|v| v.len() == dim)
            .ok_or_else(|| Error::InvalidAction(format!("{:?} is not a {dim}-vector", s.action)))?;
        reg.update(&a, s.observation.values()[0]);
    }
    Ok(reg)
}

/// Sorted (descending) eigen-decomposition with sign-normalized vectors.
fn sorted_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let mut q = DMatrix::zeros(n, n);
    let mut vals = Vec::with_capacity(n);
    for (c, &i) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                v = -v;
            }
        }
        q.set_column(c, &v);
        vals.push(eig.eigenvalues[i].max(0.0));
    }
    (vals, q)
}

/// Maximize `g'a + beta * sqrt(a' M a)` over the unit ball (`M` positive
/// semi-definite). The objective is convex, so the maximizer lies on the
/// sphere; writing the norm as `max_u u' M^{1/2} a` turns the problem into
/// `max_{|u| <= 1} |g + beta M^{1/2} u|`, whose stationarity condition is a
/// secular equation in one multiplier.
pub fn maximize_on_ball(g: &DVector<f64>, m: &DMatrix<f64>, beta: f64) -> DVector<f64> {
    let n = g.len();
    let (vals, q) = sorted_eigen(m);
    let b: Vec<f64> = vals.iter().map(|v| beta * v.sqrt()).collect();
    let c = q.transpose() * g;
    let e: Vec<f64> = (0..n).map(|i| b[i] * c[i]).collect();
    let top = b.iter().map(|x| x * x).fold(0.0, f64::max);
    let tied = |i: usize| (b[i] * b[i] - top).abs() <= 1e-12 * top.max(1.0);
    let phi = |mu: f64| -> f64 {
        (0..n)
            .filter(|&i| e[i] != 0.0)
            .map(|i| (e[i] / (mu - b[i] * b[i])).powi(2))
            .sum()
    };
    let mut u = vec![0.0; n];
    let hard = (0..n).all(|i| !tied(i) || e[i].abs() <= 1e-14);
    let hard_case_applies = hard && {
        let rest: f64 = (0..n)
            .filter(|&i| !tied(i) && e[i] != 0.0)
            .map(|i| (e[i] / (top - b[i] * b[i])).powi(2))
            .sum();
        rest <= 1.0
    };
    if top == 0.0 {
        // no exploration term: plain linear maximization
    } else if hard_case_applies {
        let mut used = 0.0;
        for i in 0..n {
            if !tied(i) && e[i] != 0.0 {
                u[i] = e[i] / (top - b[i] * b[i]);
                used += u[i] * u[i];
            }
        }
        // remaining mass on the leading eigenvector
        let lead = (0..n).find(|&i| tied(i)).unwrap_or(0);
        u[lead] = (1.0 - used).max(0.0).sqrt();
    } else {
        let norm_e = e.iter().map(|x| x * x).sum::<f64>().sqrt();
        let (mut lo, mut hi) = (top, top + norm_e);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if phi(mid) > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi.max(1.0) {
                break;
            }
        }
        let mu = hi;
        for i in 0..n {
            u[i] = e[i] / (mu - b[i] * b[i]);
        }
    }
    let coeff = DVector::from_fn(n, |i, _| c[i] + b[i] * u[i]);
    let a = &q * coeff;
    let norm = a.norm();
    if norm <= 1e-15 {
        return q.column(0).into_owned();
    }
    a / norm
}

pub fn linucb_select(reg: &RegressorState, horizon: usize) -> Vec<f64> {
    let a = maximize_on_ball(&reg.estimate(), &reg.inverse(), exploration_weight(horizon));
    a.iter().copied().collect()
}

/// `w ~ N(w_hat, sqrt(2 log T) Sigma^{-1})`, normalized onto the sphere.
pub fn lints_select(reg: &RegressorState, horizon: usize, rng: &mut RngStream) -> Vec<f64> {
    let d = reg.dim();
    let cov: DMatrix<f64> = reg.inverse() * exploration_weight(horizon);
    let mean = reg.estimate();
    let w = match cov.clone().cholesky() {
        Some(ch) => {
            let z = DVector::from_fn(d, |_, _| rng.normal(0.0, 1.0));
            mean + ch.l() * z
        }
        None => mean,
    };
    let norm = w.norm();
    if norm <= 1e-15 {
        let mut e = vec![0.0; d];
        e[0] = 1.0;
        return e;
    }
    w.iter().map(|v| v / norm).collect()
}

#[derive(Debug, Clone)]
pub struct LinUcb {
    pub dim: usize,
    pub horizon: usize,
}

impl PolicyHandle for LinUcb {
    fn name(&self) -> &str {
        "LinUCB"
    }

    fn act(&mut self, h: &History, _rng: &mut RngStream) -> Result<Action> {
        let reg = linear_regressor(self.dim, h)?;
        Ok(Action::Vector(linucb_select(&reg, self.horizon)))
    }

    fn reset(&mut self) {}
}

#[derive(Debug, Clone)]
pub struct LinTs {
    pub dim: usize,
    pub horizon: usize,
}

impl PolicyHandle for LinTs {
    fn name(&self) -> &str {
        "LinTS"
    }

    fn act(&mut self, h: &History, rng: &mut RngStream) -> Result<Action> {
        let reg = linear_regressor(self.dim, h)?;
        Ok(Action::Vector(lints_select(&reg, self.horizon, rng)))
    }

    fn reset(&mut self) {}
}
