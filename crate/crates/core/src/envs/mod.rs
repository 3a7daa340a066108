//! Environment simulators: prior samplers, context and observation samplers,
//! expected rewards and optimal-action oracles for the six task families.

mod bandit;
mod newsvendor;
mod pricing;
pub mod queue;
mod revenue;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{project_to_space, Action, ActionSpace, Context, History, Observation};
use crate::error::{Error, Result};
use crate::rng::RngStream;

pub use bandit::{LinBanditParams, MabParams};
pub use newsvendor::{expected_cost, NewsvendorChange, NewsvendorParams};
pub use pricing::{PricingChange, PricingParams};
pub use queue::{QueueParams, QUEUE_ARRIVAL_GRID, QUEUE_COST_GRID, QUEUE_MAX_LEN, QUEUE_RATES};
pub use revenue::{normalize_weights, CustomerType, RmParams, BUDGET_TOL};

/// Reward/demand noise variance shared by the Gaussian families.
pub const NOISE_VARIANCE: f64 = 0.2;
/// Upper end of the price and order-quantity ranges.
pub const ACTION_MAX: f64 = 30.0;
/// Slack used when checking that an incoming action is feasible.
pub const FEASIBILITY_TOL: f64 = 1e-9;

pub fn default_noise_sd() -> f64 {
    NOISE_VARIANCE.sqrt()
}

pub(crate) fn gaussian_log_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    if sd == 0.0 {
        return if x == mean { 0.0 } else { f64::NEG_INFINITY };
    }
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskFamily {
    Mab,
    LinearBandit,
    Pricing,
    Newsvendor,
    Queue,
    RevenueManagement,
}

impl TaskFamily {
    pub fn name(&self) -> &'static str {
        match self {
            TaskFamily::Mab => "mab",
            TaskFamily::LinearBandit => "linear_bandit",
            TaskFamily::Pricing => "pricing",
            TaskFamily::Newsvendor => "newsvendor",
            TaskFamily::Queue => "queue",
            TaskFamily::RevenueManagement => "revenue_management",
        }
    }

    /// Tasks whose context law does not depend on past actions.
    pub fn is_stateless(&self) -> bool {
        !matches!(self, TaskFamily::Queue | TaskFamily::RevenueManagement)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemandKind {
    Linear,
    Square,
}

/// Demand family law of a prior: one kind, or an even mixture of both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemandSpec {
    #[default]
    Linear,
    Square,
    Mixed,
}

impl DemandSpec {
    fn sample(&self, rng: &mut RngStream) -> DemandKind {
        match self {
            DemandSpec::Linear => DemandKind::Linear,
            DemandSpec::Square => DemandKind::Square,
            DemandSpec::Mixed => {
                if rng.bernoulli(0.5) {
                    DemandKind::Linear
                } else {
                    DemandKind::Square
                }
            }
        }
    }
}

fn default_arms() -> usize {
    20
}
fn default_lin_dim() -> usize {
    2
}
fn default_pricing_dim() -> usize {
    6
}
fn default_nv_dim() -> usize {
    4
}
fn default_three() -> usize {
    3
}
fn default_true() -> bool {
    true
}

/// Task family together with its dimensions and generator switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TaskSpec {
    Mab {
        #[serde(default = "default_arms")]
        arms: usize,
    },
    LinearBandit {
        #[serde(default = "default_lin_dim")]
        dim: usize,
    },
    Pricing {
        #[serde(default = "default_pricing_dim")]
        dim: usize,
        #[serde(default)]
        demand: DemandSpec,
        #[serde(default)]
        nonstationary: bool,
    },
    Newsvendor {
        #[serde(default = "default_nv_dim")]
        dim: usize,
        #[serde(default)]
        demand: DemandSpec,
        #[serde(default = "default_true")]
        censored: bool,
        #[serde(default = "default_true")]
        perishable: bool,
        #[serde(default)]
        nonstationary: bool,
    },
    Queue,
    RevenueManagement {
        #[serde(default = "default_three")]
        types: usize,
        #[serde(default = "default_three")]
        resources: usize,
    },
}

impl TaskSpec {
    pub fn mab(arms: usize) -> Self {
        TaskSpec::Mab { arms }
    }

    pub fn linear_bandit(dim: usize) -> Self {
        TaskSpec::LinearBandit { dim }
    }

    pub fn pricing(dim: usize) -> Self {
        TaskSpec::Pricing {
            dim,
            demand: DemandSpec::Linear,
            nonstationary: false,
        }
    }

    pub fn newsvendor(dim: usize, censored: bool) -> Self {
        TaskSpec::Newsvendor {
            dim,
            demand: DemandSpec::Linear,
            censored,
            perishable: true,
            nonstationary: false,
        }
    }

    pub fn revenue_management(types: usize, resources: usize) -> Self {
        TaskSpec::RevenueManagement { types, resources }
    }

    pub fn family(&self) -> TaskFamily {
        match self {
            TaskSpec::Mab { .. } => TaskFamily::Mab,
            TaskSpec::LinearBandit { .. } => TaskFamily::LinearBandit,
            TaskSpec::Pricing { .. } => TaskFamily::Pricing,
            TaskSpec::Newsvendor { .. } => TaskFamily::Newsvendor,
            TaskSpec::Queue => TaskFamily::Queue,
            TaskSpec::RevenueManagement { .. } => TaskFamily::RevenueManagement,
        }
    }

    pub fn context_dim(&self) -> usize {
        match self {
            TaskSpec::Mab { .. } | TaskSpec::LinearBandit { .. } => 0,
            TaskSpec::Pricing { dim, .. } => *dim,
            TaskSpec::Newsvendor { dim, perishable, .. } => dim + if *perishable { 1 } else { 2 },
            TaskSpec::Queue => 2,
            TaskSpec::RevenueManagement { resources, .. } => 1 + resources,
        }
    }

    pub fn observation_dim(&self) -> usize {
        match self {
            TaskSpec::Mab { .. } | TaskSpec::LinearBandit { .. } => 1,
            _ => 2,
        }
    }

    /// Action space at the start of an episode. Only the non-perishable
    /// newsvendor space moves afterwards (it shifts with inventory).
    pub fn action_space(&self) -> ActionSpace {
        match self {
            TaskSpec::Mab { arms } => ActionSpace::Discrete { count: *arms },
            TaskSpec::LinearBandit { dim } => ActionSpace::unit_ball(*dim),
            TaskSpec::Pricing { .. } | TaskSpec::Newsvendor { .. } => ActionSpace::interval(0.0, ACTION_MAX),
            TaskSpec::Queue | TaskSpec::RevenueManagement { .. } => ActionSpace::interval(0.0, 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        match self {
            TaskSpec::Mab { arms } if *arms < 2 => bad("a bandit needs at least two arms"),
            TaskSpec::LinearBandit { dim } if *dim == 0 => bad("linear bandit dimension must be positive"),
            TaskSpec::Pricing { dim, .. } if *dim == 0 => bad("pricing context dimension must be positive"),
            TaskSpec::Newsvendor { dim, .. } if *dim == 0 => bad("newsvendor feature dimension must be positive"),
            TaskSpec::RevenueManagement { types, resources } if *types == 0 || *resources == 0 => {
                bad("revenue management needs at least one type and one resource")
            }
            _ => Ok(()),
        }
    }

    /// Draw environment parameters from this family's generator.
    pub fn sample_params(&self, horizon: usize, rng: &mut RngStream) -> EnvParams {
        let change_time = |rng: &mut RngStream| 1 + rng.index(horizon.max(1));
        match self {
            TaskSpec::Mab { arms } => EnvParams::Mab(MabParams::sample(*arms, rng)),
            TaskSpec::LinearBandit { dim } => EnvParams::LinearBandit(LinBanditParams::sample(*dim, rng)),
            TaskSpec::Pricing {
                dim,
                demand,
                nonstationary,
            } => {
                let kind = demand.sample(rng);
                let mut p = PricingParams::sample(*dim, kind, rng);
                if *nonstationary {
                    let time = change_time(rng);
                    let post = PricingParams::sample(*dim, kind, rng);
                    p.change = Some(PricingChange {
                        time,
                        alpha: post.alpha,
                        beta: post.beta,
                    });
                }
                EnvParams::Pricing(p)
            }
            TaskSpec::Newsvendor {
                dim,
                demand,
                censored,
                perishable,
                nonstationary,
            } => {
                let kind = demand.sample(rng);
                let mut p = NewsvendorParams::sample(*dim, kind, *censored, *perishable, rng);
                if *nonstationary {
                    let time = change_time(rng);
                    let w = NewsvendorParams::sample_w(*dim, rng);
                    p.change = Some(NewsvendorChange { time, w });
                }
                EnvParams::Newsvendor(p)
            }
            TaskSpec::Queue => EnvParams::Queue(QueueParams::sample(rng)),
            TaskSpec::RevenueManagement { types, resources } => {
                EnvParams::RevenueManagement(RmParams::sample(*types, *resources, rng))
            }
        }
    }
}

/// Unknown parameters (and known costs) of one environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum EnvParams {
    Mab(MabParams),
    LinearBandit(LinBanditParams),
    Pricing(PricingParams),
    Newsvendor(NewsvendorParams),
    Queue(QueueParams),
    RevenueManagement(RmParams),
}

impl EnvParams {
    pub fn family(&self) -> TaskFamily {
        match self {
            EnvParams::Mab(_) => TaskFamily::Mab,
            EnvParams::LinearBandit(_) => TaskFamily::LinearBandit,
            EnvParams::Pricing(_) => TaskFamily::Pricing,
            EnvParams::Newsvendor(_) => TaskFamily::Newsvendor,
            EnvParams::Queue(_) => TaskFamily::Queue,
            EnvParams::RevenueManagement(_) => TaskFamily::RevenueManagement,
        }
    }

    /// The task description these parameters belong to.
    pub fn task(&self) -> TaskSpec {
        match self {
            EnvParams::Mab(p) => TaskSpec::Mab { arms: p.means.len() },
            EnvParams::LinearBandit(p) => TaskSpec::LinearBandit { dim: p.w.len() },
            EnvParams::Pricing(p) => TaskSpec::Pricing {
                dim: p.alpha.len(),
                demand: match p.demand {
                    DemandKind::Linear => DemandSpec::Linear,
                    DemandKind::Square => DemandSpec::Square,
                },
                nonstationary: p.change.is_some(),
            },
            EnvParams::Newsvendor(p) => TaskSpec::Newsvendor {
                dim: p.w.len(),
                demand: match p.demand {
                    DemandKind::Linear => DemandSpec::Linear,
                    DemandKind::Square => DemandSpec::Square,
                },
                censored: p.censored,
                perishable: p.perishable,
                nonstationary: p.change.is_some(),
            },
            EnvParams::Queue(_) => TaskSpec::Queue,
            EnvParams::RevenueManagement(p) => TaskSpec::RevenueManagement {
                types: p.catalog.len(),
                resources: p.resources(),
            },
        }
    }

    /// Same family and dimensions as `task` (generator switches may differ).
    pub fn is_compatible_with(&self, task: &TaskSpec) -> bool {
        let own = self.task();
        own.family() == task.family()
            && own.context_dim() == task.context_dim()
            && own.observation_dim() == task.observation_dim()
            && own.action_space() == task.action_space()
            && match (&own, task) {
                (
                    TaskSpec::Newsvendor {
                        censored: c1,
                        perishable: p1,
                        ..
                    },
                    TaskSpec::Newsvendor {
                        censored: c2,
                        perishable: p2,
                        ..
                    },
                ) => c1 == c2 && p1 == p2,
                (
                    TaskSpec::RevenueManagement { types: k1, .. },
                    TaskSpec::RevenueManagement { types: k2, .. },
                ) => k1 == k2,
                _ => true,
            }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EnvParams::Mab(p) => p.validate(),
            EnvParams::LinearBandit(p) => p.validate(),
            EnvParams::Pricing(p) => p.validate(),
            EnvParams::Newsvendor(p) => p.validate(),
            EnvParams::Queue(p) => p.validate(),
            EnvParams::RevenueManagement(p) => p.validate(),
        }
    }

    pub fn action_space(&self, state: &EnvState) -> ActionSpace {
        match self {
            EnvParams::Newsvendor(p) if !p.perishable => {
                ActionSpace::interval(state.inventory, state.inventory + ACTION_MAX)
            }
            _ => self.task().action_space(),
        }
    }

    pub fn sample_context(&self, state: &EnvState, rng: &mut RngStream) -> Context {
        match self {
            EnvParams::Mab(_) | EnvParams::LinearBandit(_) => Context::empty(),
            EnvParams::Pricing(p) => p.sample_context(rng),
            EnvParams::Newsvendor(p) => p.sample_context(state, rng),
            EnvParams::Queue(p) => p.context(state),
            EnvParams::RevenueManagement(p) => p.sample_context(rng),
        }
    }

    /// Realize the observation for `(x, a)` at the state's time. Does not
    /// advance the state; see [`EnvParams::advance`].
    pub fn draw_observation(&self, state: &EnvState, x: &Context, a: &Action, rng: &mut RngStream) -> Result<Observation> {
        match self {
            EnvParams::Mab(p) => p.observe(a, rng),
            EnvParams::LinearBandit(p) => p.observe(a, rng),
            EnvParams::Pricing(p) => p.observe(state.t, x, a, rng),
            EnvParams::Newsvendor(p) => p.observe(state.t, x, a, rng),
            EnvParams::Queue(p) => p.observe(x, a, rng),
            EnvParams::RevenueManagement(p) => p.observe(state, x, a, rng),
        }
    }

    /// Deterministic state transition implied by an observed step. The
    /// simulator and the posterior share it, so a state rebuilt from a
    /// history always equals the simulator's state.
    pub fn advance(&self, state: &mut EnvState, x: &Context, a: &Action, o: &Observation) -> Result<()> {
        match self {
            EnvParams::Newsvendor(p) if !p.perishable => {
                let order = scalar(a)?;
                let seen = o.values().get(1).copied().ok_or_else(|| obs_shape(o, 2))?;
                state.inventory = (order - seen).max(0.0);
            }
            EnvParams::Queue(_) => {
                let next = o.values().get(1).copied().ok_or_else(|| obs_shape(o, 2))?;
                state.queue_len = next.round().clamp(0.0, QUEUE_MAX_LEN as f64) as usize;
            }
            EnvParams::RevenueManagement(p) => p.advance(state, x, o)?,
            _ => {}
        }
        state.t += 1;
        Ok(())
    }

    pub fn expected_reward(&self, state: &EnvState, x: &Context, a: &Action) -> Result<f64> {
        match self {
            EnvParams::Mab(p) => p.expected_reward(a),
            EnvParams::LinearBandit(p) => p.expected_reward(a),
            EnvParams::Pricing(p) => p.expected_reward(state.t, x, a),
            EnvParams::Newsvendor(p) => p.expected_reward(state.t, x, a),
            EnvParams::Queue(p) => p.expected_reward(x, a),
            EnvParams::RevenueManagement(p) => p.expected_reward(state, x, a),
        }
    }

    pub fn optimal_action(&self, state: &EnvState, x: &Context, horizon: usize) -> Result<Action> {
        match self {
            EnvParams::Mab(p) => Ok(p.optimal_action()),
            EnvParams::LinearBandit(p) => Ok(p.optimal_action()),
            EnvParams::Pricing(p) => p.optimal_action(state.t, x),
            EnvParams::Newsvendor(p) => p.optimal_action(state.t, x),
            EnvParams::Queue(p) => p.optimal_action(state.t, x, horizon),
            EnvParams::RevenueManagement(p) => p.optimal_action(state, x, horizon),
        }
    }

    /// `log P(o | x, a)` under these parameters; `-inf` for impossible data.
    pub fn log_likelihood(&self, state: &EnvState, x: &Context, a: &Action, o: &Observation) -> Result<f64> {
        match self {
            EnvParams::Mab(p) => p.log_likelihood(a, o),
            EnvParams::LinearBandit(p) => p.log_likelihood(a, o),
            EnvParams::Pricing(p) => p.log_likelihood(state.t, x, a, o),
            EnvParams::Newsvendor(p) => p.log_likelihood(state.t, x, a, o),
            EnvParams::Queue(p) => p.log_likelihood(x, a, o),
            EnvParams::RevenueManagement(p) => Ok(p.log_likelihood(x)),
        }
    }
}

pub(crate) fn scalar(a: &Action) -> Result<f64> {
    a.as_scalar()
        .ok_or_else(|| Error::InvalidAction(format!("expected a scalar action, got {a:?}")))
}

pub(crate) fn obs_shape(o: &Observation, want: usize) -> Error {
    Error::InvalidShape(format!("observation of length {} where {want} is expected", o.len()))
}

/// Task-internal mutable state. Stateless families only use `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    /// Time index of the next context, starting at 1.
    pub t: usize,
    pub queue_len: usize,
    pub inventory: f64,
    pub budget: Vec<f64>,
    /// Arrivals of each customer type before time `t`.
    pub counts: Vec<usize>,
}

impl EnvState {
    pub fn initial(params: &EnvParams, horizon: usize) -> Self {
        let (budget, counts) = match params {
            EnvParams::RevenueManagement(p) => (vec![horizon as f64; p.resources()], vec![0; p.catalog.len()]),
            _ => (Vec::new(), Vec::new()),
        };
        EnvState {
            t: 1,
            queue_len: 0,
            inventory: 0.0,
            budget,
            counts,
        }
    }
}

/// A sampled environment: fixed parameters plus evolving state.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    params: EnvParams,
    horizon: usize,
    state: EnvState,
}

impl Environment {
    pub fn new(params: EnvParams, horizon: usize) -> Result<Self> {
        params.validate()?;
        if horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        let state = EnvState::initial(&params, horizon);
        Ok(Self { params, horizon, state })
    }

    /// Rebuild the state reached after the steps of `h`.
    pub fn replay(params: EnvParams, horizon: usize, h: &History) -> Result<Self> {
        let mut env = Environment::new(params, horizon)?;
        for s in h.steps() {
            env.params.advance(&mut env.state, &s.context, &s.action, &s.observation)?;
        }
        Ok(env)
    }

    pub fn params(&self) -> &EnvParams {
        &self.params
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn t(&self) -> usize {
        self.state.t
    }

    pub fn family(&self) -> TaskFamily {
        self.params.family()
    }

    pub fn task(&self) -> TaskSpec {
        self.params.task()
    }

    pub fn reset(&mut self) {
        self.state = EnvState::initial(&self.params, self.horizon);
    }

    pub fn action_space(&self) -> ActionSpace {
        self.params.action_space(&self.state)
    }

    /// Accept `a` if it lies in the current action space up to
    /// [`FEASIBILITY_TOL`], returning its exact projection.
    pub fn feasible(&self, a: &Action) -> Result<Action> {
        let space = self.action_space();
        let p = project_to_space(a, &space)?;
        let gap = match (a, &p) {
            (Action::Index(i), Action::Index(j)) => (i != j) as u8 as f64,
            _ => match (a.coords(), p.coords()) {
                (Some(x), Some(y)) => x.iter().zip(&y).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max),
                _ => 0.0,
            },
        };
        if gap > FEASIBILITY_TOL {
            return Err(Error::InvalidAction(format!("{a:?} lies outside {space:?}")));
        }
        Ok(p)
    }

    pub fn sample_context(&self, rng: &mut RngStream) -> Context {
        self.params.sample_context(&self.state, rng)
    }

    /// Realize `O_t` for `(x, a)` and advance the state to `t + 1`.
    pub fn sample_observation(&mut self, x: &Context, a: &Action, rng: &mut RngStream) -> Result<Observation> {
        let a = self.feasible(a)?;
        let o = self.params.draw_observation(&self.state, x, &a, rng)?;
        self.params.advance(&mut self.state, x, &a, &o)?;
        Ok(o)
    }

    pub fn expected_reward(&self, x: &Context, a: &Action) -> Result<f64> {
        let a = self.feasible(a)?;
        self.params.expected_reward(&self.state, x, &a)
    }

    pub fn optimal_action(&self, x: &Context) -> Result<Action> {
        self.params.optimal_action(&self.state, x, self.horizon)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorMode {
    Continuous,
    /// Uniform prior over the listed environments.
    FinitePool { pool: Vec<EnvParams> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub task: TaskSpec,
    pub horizon: usize,
    pub mode: PriorMode,
}

impl PriorSpec {
    pub fn continuous(task: TaskSpec, horizon: usize) -> Self {
        Self {
            task,
            horizon,
            mode: PriorMode::Continuous,
        }
    }

    pub fn finite(task: TaskSpec, horizon: usize, pool: Vec<EnvParams>) -> Result<Self> {
        let p = Self {
            task,
            horizon,
            mode: PriorMode::FinitePool { pool },
        };
        p.validate()?;
        Ok(p)
    }

    /// Sample `size` environments from the task generator and freeze them as
    /// a uniform finite prior.
    pub fn sampled_pool(task: TaskSpec, horizon: usize, size: usize, rng: &mut RngStream) -> Result<Self> {
        let pool = (0..size).map(|_| task.sample_params(horizon, rng)).collect();
        Self::finite(task, horizon, pool)
    }

    pub fn pool(&self) -> Option<&[EnvParams]> {
        match &self.mode {
            PriorMode::FinitePool { pool } => Some(pool),
            PriorMode::Continuous => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        if let PriorMode::FinitePool { pool } = &self.mode {
            if pool.is_empty() {
                return Err(Error::Config("finite pool is empty".into()));
            }
            for (i, p) in pool.iter().enumerate() {
                if !p.is_compatible_with(&self.task) {
                    return Err(Error::Config(format!(
                        "pool entry {i} ({}) does not match the task {:?}",
                        p.family().name(),
                        self.task
                    )));
                }
                p.validate().map_err(|e| Error::Config(format!("pool entry {i}: {e}")))?;
            }
        }
        Ok(())
    }

    /// Draw parameters; also returns the pool index for finite priors.
    pub fn draw(&self, rng: &mut RngStream) -> (Option<usize>, EnvParams) {
        match &self.mode {
            PriorMode::Continuous => (None, self.task.sample_params(self.horizon, rng)),
            PriorMode::FinitePool { pool } => {
                let i = rng.index(pool.len());
                (Some(i), pool[i].clone())
            }
        }
    }
}

pub fn sample_env(prior: &PriorSpec, rng: &mut RngStream) -> Result<Environment> {
    prior.validate()?;
    let (_, params) = prior.draw(rng);
    Environment::new(params, prior.horizon)
}

/// Write a pool as JSON; floats round-trip exactly.
pub fn save_pool(path: &Path, pool: &[EnvParams]) -> Result<()> {
    let text = serde_json::to_string_pretty(pool)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_pool(path: &Path) -> Result<Vec<EnvParams>> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}
