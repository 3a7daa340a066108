//! Test-time rollouts, regret accounting and policy comparison.

mod probe;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::baselines::ada::hindsight_lp_bound;
use crate::domain::{project_to_space, Action, ActionSpace, Context, History};
use crate::envs::{EnvParams, Environment, PriorSpec, TaskFamily};
use crate::error::{Error, Result};
use crate::rng::{labels, RngStream};

pub use probe::{linear_probe, manipulate_context, min_max_normalize, ridge_demand_baseline, ProbeFit};

/// Anything that maps a history to an action.
pub trait PolicyHandle: Send {
    fn name(&self) -> &str;
    /// Must only read `h`.
    fn act(&mut self, h: &History, rng: &mut RngStream) -> Result<Action>;
    /// Forget all per-episode state.
    fn reset(&mut self);
}

impl PolicyHandle for Box<dyn PolicyHandle> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn act(&mut self, h: &History, rng: &mut RngStream) -> Result<Action> {
        (**self).act(h, rng)
    }

    fn reset(&mut self) {
        (**self).reset()
    }
}

/// Plays the environment's optimal action, rebuilding its state from the
/// history.
#[derive(Debug, Clone)]
pub struct OraclePolicy {
    params: EnvParams,
    horizon: usize,
}

impl OraclePolicy {
    pub fn new(params: EnvParams, horizon: usize) -> Self {
        Self { params, horizon }
    }
}

impl PolicyHandle for OraclePolicy {
    fn name(&self) -> &str {
        "Oracle"
    }

    fn act(&mut self, h: &History, _rng: &mut RngStream) -> Result<Action> {
        let env = Environment::replay(self.params.clone(), self.horizon, h)?;
        env.optimal_action(h.current_context())
    }

    fn reset(&mut self) {}
}

/// Turns a raw policy output into a playable action: distributions are
/// played at their most likely arm, everything is projected onto `space`.
/// Returns whether projection moved the action.
pub fn playable_action(a: &Action, space: &ActionSpace) -> Result<(Action, bool)> {
    let a = match (a, space) {
        (Action::Distribution(p), ActionSpace::Discrete { .. }) => Action::Index(crate::domain::argmax(p)),
        _ => a.clone(),
    };
    let p = project_to_space(&a, space)?;
    let moved = p != a;
    Ok((p, moved))
}

fn action_distance(a: &Action, b: &Action) -> f64 {
    match (a, b) {
        (Action::Index(i), Action::Index(j)) => (i != j) as u8 as f64,
        _ => match (a.coords(), b.coords()) {
            (Some(x), Some(y)) => x.iter().zip(&y).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt(),
            _ => f64::NAN,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub policy: String,
    pub rewards: Vec<f64>,
    pub optimal_rewards: Vec<f64>,
    /// `r(x, a*) - r(x, a)` per step.
    pub gaps: Vec<f64>,
    /// `|a* - a|`, or a mismatch indicator for discrete actions.
    pub suboptimality: Vec<f64>,
    pub cumulative_regret: Vec<f64>,
    pub actions: Vec<Action>,
    /// Steps where the policy's action had to be projected.
    pub violations: usize,
    /// Hindsight LP value of the realized arrivals (revenue management).
    pub hindsight_bound: Option<f64>,
}

impl EpisodeResult {
    pub fn final_regret(&self) -> f64 {
        self.cumulative_regret.last().copied().unwrap_or(0.0)
    }

    pub fn horizon(&self) -> usize {
        self.gaps.len()
    }
}

/// Roll `policy` for `horizon` steps on `env` (which is reset first).
/// Contexts, observation noise and policy randomness come from separate
/// child streams of `rng`, so two policies given the same `rng` face the same
/// contexts on stateless tasks.
pub fn run_episode(
    policy: &mut dyn PolicyHandle,
    env: &mut Environment,
    horizon: usize,
    rng: &RngStream,
) -> Result<EpisodeResult> {
    env.reset();
    policy.reset();
    let mut ctx_rng = rng.derive(labels::CONTEXT);
    let mut obs_rng = rng.derive(labels::OBSERVATION);
    let mut pol_rng = rng.derive(labels::POLICY);
    let mut res = EpisodeResult {
        policy: policy.name().to_string(),
        rewards: Vec::with_capacity(horizon),
        optimal_rewards: Vec::with_capacity(horizon),
        gaps: Vec::with_capacity(horizon),
        suboptimality: Vec::with_capacity(horizon),
        cumulative_regret: Vec::with_capacity(horizon),
        actions: Vec::with_capacity(horizon),
        violations: 0,
        hindsight_bound: None,
    };
    let mut contexts: Vec<Context> = Vec::with_capacity(horizon);
    let mut h = History::new(env.sample_context(&mut ctx_rng));
    let mut total = 0.0;
    for t in 1..=horizon {
        let x = h.current_context().clone();
        let raw = policy.act(&h, &mut pol_rng)?;
        let (a, moved) = playable_action(&raw, &env.action_space())?;
        res.violations += moved as usize;
        let a_star = env.optimal_action(&x)?;
        let r = env.expected_reward(&x, &a)?;
        let r_star = env.expected_reward(&x, &a_star)?;
        total += r_star - r;
        res.rewards.push(r);
        res.optimal_rewards.push(r_star);
        res.gaps.push(r_star - r);
        res.suboptimality.push(action_distance(&a_star, &a));
        res.cumulative_regret.push(total);
        res.actions.push(a.clone());
        let o = env.sample_observation(&x, &a, &mut obs_rng)?;
        contexts.push(x);
        if t < horizon {
            let next = env.sample_context(&mut ctx_rng);
            h.push(a, o, next)?;
        }
    }
    if let EnvParams::RevenueManagement(p) = env.params() {
        let arrivals: Vec<_> = contexts
            .iter()
            .filter_map(|x| p.catalog_index(x).map(|k| p.catalog[k].clone()))
            .collect();
        res.hindsight_bound = Some(hindsight_lp_bound(&arrivals, horizon as f64)?);
    }
    Ok(res)
}

/// Builds a fresh policy for a sampled environment. Factories only read
/// what a decision maker is allowed to know (task costs, catalogs).
pub type PolicyFactory = Box<dyn Fn(&EnvParams) -> Result<Box<dyn PolicyHandle>> + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCurve {
    pub name: String,
    pub mean: Vec<f64>,
    pub q05: Vec<f64>,
    pub q95: Vec<f64>,
    pub final_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub runs: usize,
    pub horizon: usize,
    pub curves: Vec<PolicyCurve>,
    /// `results[run][policy]`.
    pub results: Vec<Vec<EpisodeResult>>,
}

/// Linear-interpolation empirical quantile of unsorted values.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

fn run_one(factories: &[PolicyFactory], prior: &PriorSpec, horizon: usize, run_rng: &RngStream) -> Result<Vec<EpisodeResult>> {
    let (_, params) = prior.draw(&mut run_rng.derive(labels::ENV));
    let mut env = Environment::new(params.clone(), horizon)?;
    factories
        .iter()
        .map(|f| {
            let mut p = f(&params)?;
            run_episode(p.as_mut(), &mut env, horizon, run_rng)
        })
        .collect()
}

/// Run every policy on `runs` freshly sampled environments. Within a run all
/// policies share the environment and the random streams.
pub fn compare(
    factories: &[PolicyFactory],
    prior: &PriorSpec,
    runs: usize,
    horizon: usize,
    rng: &RngStream,
) -> Result<ComparisonReport> {
    prior.validate()?;
    if runs == 0 || horizon == 0 {
        return Err(Error::Config("compare needs at least one run and one step".into()));
    }
    let run_rngs: Vec<RngStream> = (0..runs).map(|r| rng.derive(r as u64)).collect();
    #[cfg(feature = "parallel")]
    let results: Vec<Vec<EpisodeResult>> = {
        use rayon::prelude::*;
        run_rngs
            .par_iter()
            .map(|r| run_one(factories, prior, horizon, r))
            .collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Vec<EpisodeResult>> = run_rngs
        .iter()
        .map(|r| run_one(factories, prior, horizon, r))
        .collect::<Result<_>>()?;
    Ok(aggregate(results, horizon))
}

/// Mean curves and 5%/95% bands of cumulative regret.
pub fn aggregate(results: Vec<Vec<EpisodeResult>>, horizon: usize) -> ComparisonReport {
    let runs = results.len();
    let n_pol = results.first().map_or(0, Vec::len);
    let mut curves = Vec::with_capacity(n_pol);
    for p in 0..n_pol {
        let mut mean = vec![0.0; horizon];
        let mut q05 = vec![0.0; horizon];
        let mut q95 = vec![0.0; horizon];
        for t in 0..horizon {
            let col: Vec<f64> = results.iter().map(|r| r[p].cumulative_regret[t]).collect();
            mean[t] = col.iter().sum::<f64>() / runs as f64;
            q05[t] = quantile(&col, 0.05);
            q95[t] = quantile(&col, 0.95);
        }
        curves.push(PolicyCurve {
            name: results[0][p].policy.clone(),
            final_mean: mean.last().copied().unwrap_or(0.0),
            mean,
            q05,
            q95,
        });
    }
    ComparisonReport {
        runs,
        horizon,
        curves,
        results,
    }
}

/// `run,t,policy,regret,suboptimality` with cumulative regret.
pub fn write_runs_csv<W: Write>(report: &ComparisonReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["run", "t", "policy", "regret", "suboptimality"]).map_err(csv_err)?;
    for (run, res) in report.results.iter().enumerate() {
        for ep in res {
            for t in 0..ep.horizon() {
                w.write_record([
                    run.to_string(),
                    (t + 1).to_string(),
                    ep.policy.clone(),
                    ep.cumulative_regret[t].to_string(),
                    ep.suboptimality[t].to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// `t,policy,mean,q05,q95`.
pub fn write_report_csv<W: Write>(report: &ComparisonReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "policy", "mean", "q05", "q95"]).map_err(csv_err)?;
    for c in &report.curves {
        for t in 0..report.horizon {
            w.write_record([
                (t + 1).to_string(),
                c.name.clone(),
                c.mean[t].to_string(),
                c.q05[t].to_string(),
                c.q95[t].to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

/// Whether regret gaps of this family are non-negative step by step.
pub fn gaps_are_nonnegative(f: TaskFamily) -> bool {
    f.is_stateless()
}
