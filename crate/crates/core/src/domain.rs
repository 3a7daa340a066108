//! Shared vocabulary: action spaces, actions, contexts, observations and
//! histories.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when checking that a probability vector is normalized.
pub const PROB_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionSpace {
    Discrete { count: usize },
    Box { lower: Vec<f64>, upper: Vec<f64> },
    /// Euclidean ball centred at the origin.
    Ball { dim: usize, radius: f64 },
}

impl ActionSpace {
    pub fn interval(lower: f64, upper: f64) -> Self {
        ActionSpace::Box {
            lower: vec![lower],
            upper: vec![upper],
        }
    }

    pub fn unit_ball(dim: usize) -> Self {
        ActionSpace::Ball { dim, radius: 1.0 }
    }

    /// Width of the numeric encoding of an action (one-hot for discrete).
    pub fn encoding_dim(&self) -> usize {
        match self {
            ActionSpace::Discrete { count } => *count,
            ActionSpace::Box { lower, .. } => lower.len(),
            ActionSpace::Ball { dim, .. } => *dim,
        }
    }

    pub fn is_scalar(&self) -> bool {
        matches!(self, ActionSpace::Box { lower, .. } if lower.len() == 1)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ActionSpace::Discrete { count } if *count == 0 => {
                Err(Error::InvalidAction("discrete space needs at least one action".into()))
            }
            ActionSpace::Box { lower, upper } => {
                if lower.len() != upper.len() || lower.is_empty() {
                    return Err(Error::InvalidShape("box bounds differ in length".into()));
                }
                if lower.iter().zip(upper).any(|(l, u)| l > u) {
                    return Err(Error::InvalidAction("box lower bound exceeds upper bound".into()));
                }
                Ok(())
            }
            ActionSpace::Ball { dim, radius } if *dim == 0 || *radius < 0.0 => {
                Err(Error::InvalidAction("ball needs positive dimension and radius".into()))
            }
            _ => Ok(()),
        }
    }

    /// Midpoint of a scalar interval, used as a fallback action.
    pub fn midpoint(&self) -> Option<f64> {
        match self {
            ActionSpace::Box { lower, upper } if lower.len() == 1 => Some(0.5 * (lower[0] + upper[0])),
            _ => None,
        }
    }

    pub fn contains(&self, a: &Action) -> bool {
        project_to_space(a, self).map(|p| &p == a).unwrap_or(false)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Index(usize),
    Scalar(f64),
    Vector(Vec<f64>),
    /// Probability vector over a discrete space.
    Distribution(Vec<f64>),
}

impl Action {
    pub fn as_scalar(&self) -> Option<f64> {
        match self {
            Action::Scalar(v) => Some(*v),
            Action::Vector(v) if v.len() == 1 => Some(v[0]),
            _ => None,
        }
    }

    pub fn as_index(&self) -> Option<usize> {
        match self {
            Action::Index(i) => Some(*i),
            _ => None,
        }
    }

    /// Real coordinates of a continuous action.
    pub fn coords(&self) -> Option<Vec<f64>> {
        match self {
            Action::Scalar(v) => Some(vec![*v]),
            Action::Vector(v) => Some(v.clone()),
            _ => None,
        }
    }

    /// Numeric encoding: one-hot for indices, the probabilities themselves for
    /// distributions, coordinates otherwise.
    pub fn encode(&self, space: &ActionSpace) -> Vec<f64> {
        match (self, space) {
            (Action::Index(i), ActionSpace::Discrete { count }) => {
                let mut v = vec![0.0; *count];
                if *i < *count {
                    v[*i] = 1.0;
                }
                v
            }
            (Action::Distribution(p), _) => p.clone(),
            (Action::Scalar(v), _) => vec![*v],
            (Action::Vector(v), _) => v.clone(),
            (Action::Index(i), _) => vec![*i as f64],
        }
    }

    /// Index with the largest probability (ties to the lowest index).
    pub fn argmax(&self) -> Option<usize> {
        match self {
            Action::Index(i) => Some(*i),
            Action::Distribution(p) => Some(argmax(p)),
            _ => None,
        }
    }
}

/// Lowest index attaining the maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Project `a` onto `space`: clamp for boxes and indices, radial shrink for
/// balls, clip-and-renormalize for distributions.
pub fn project_to_space(a: &Action, space: &ActionSpace) -> Result<Action> {
    match (a, space) {
        (Action::Index(i), ActionSpace::Discrete { count }) => Ok(Action::Index((*i).min(count - 1))),
        (Action::Distribution(p), ActionSpace::Discrete { count }) => {
            if p.len() != *count {
                return Err(Error::InvalidShape(format!(
                    "distribution of length {} for {count} actions",
                    p.len()
                )));
            }
            let clipped: Vec<f64> = p.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
            let total: f64 = clipped.iter().sum();
            if total <= 0.0 || !total.is_finite() {
                return Err(Error::InvalidAction("distribution has no positive mass".into()));
            }
            if (total - 1.0).abs() <= PROB_TOL && clipped == *p {
                return Ok(a.clone());
            }
            Ok(Action::Distribution(clipped.iter().map(|x| x / total).collect()))
        }
        (Action::Scalar(v), ActionSpace::Box { lower, upper }) if lower.len() == 1 => {
            Ok(Action::Scalar(v.clamp(lower[0], upper[0])))
        }
        (Action::Vector(v), ActionSpace::Box { lower, upper }) => {
            if v.len() != lower.len() {
                return Err(Error::InvalidShape(format!(
                    "vector of length {} for a {}-dimensional box",
                    v.len(),
                    lower.len()
                )));
            }
            Ok(Action::Vector(
                v.iter()
                    .zip(lower.iter().zip(upper))
                    .map(|(x, (l, u))| x.clamp(*l, *u))
                    .collect(),
            ))
        }
        (Action::Vector(v), ActionSpace::Ball { dim, radius }) => {
            if v.len() != *dim {
                return Err(Error::InvalidShape(format!(
                    "vector of length {} for a {dim}-dimensional ball",
                    v.len()
                )));
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm <= *radius {
                Ok(a.clone())
            } else {
                Ok(Action::Vector(v.iter().map(|x| x * radius / norm).collect()))
            }
        }
        (Action::Scalar(v), ActionSpace::Ball { dim: 1, radius }) => Ok(Action::Scalar(v.clamp(-radius, *radius))),
        _ => Err(Error::InvalidAction(format!("{a:?} is incompatible with {space:?}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Context(pub Vec<f64>);

impl Context {
    pub fn empty() -> Self {
        Context(Vec::new())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Observation vector. Its layout is declared per environment family.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub context: Context,
    pub action: Action,
    pub observation: Observation,
}

fn same_kind(a: &Action, b: &Action) -> bool {
    match (a, b) {
        (Action::Index(_), Action::Index(_)) | (Action::Scalar(_), Action::Scalar(_)) => true,
        (Action::Vector(x), Action::Vector(y)) | (Action::Distribution(x), Action::Distribution(y)) => {
            x.len() == y.len()
        }
        _ => false,
    }
}

/// `(X_1, a_1, O_1, ..., X_{t-1}, a_{t-1}, O_{t-1}, X_t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    steps: Vec<Step>,
    current_context: Context,
}

impl History {
    /// `H_1`: no steps yet, only the first context.
    pub fn new(first_context: Context) -> Self {
        Self {
            steps: Vec::new(),
            current_context: first_context,
        }
    }

    pub fn from_parts(steps: Vec<Step>, current_context: Context) -> Result<Self> {
        let mut h = History::new(current_context.clone());
        for s in &steps {
            h.check_step(&s.context, &s.action, &s.observation)?;
            h.steps.push(s.clone());
        }
        if let Some(first) = steps.first() {
            if first.context.len() != current_context.len() {
                return Err(Error::InvalidShape("context length changes within history".into()));
            }
        }
        Ok(h)
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn current_context(&self) -> &Context {
        &self.current_context
    }

    /// Current time index `t`; the history holds `t - 1` steps.
    pub fn t(&self) -> usize {
        self.steps.len() + 1
    }

    fn check_step(&self, context: &Context, action: &Action, observation: &Observation) -> Result<()> {
        if let Some(prev) = self.steps.last() {
            if prev.context.len() != context.len() {
                return Err(Error::InvalidShape(format!(
                    "context of length {} after contexts of length {}",
                    context.len(),
                    prev.context.len()
                )));
            }
            if prev.observation.len() != observation.len() {
                return Err(Error::InvalidShape(format!(
                    "observation of length {} after observations of length {}",
                    observation.len(),
                    prev.observation.len()
                )));
            }
            if !same_kind(&prev.action, action) {
                return Err(Error::InvalidShape("action kind changes within history".into()));
            }
        }
        Ok(())
    }

    /// Record `(a_t, O_t)` against the current context and move to `X_{t+1}`.
    pub fn push(&mut self, action: Action, observation: Observation, next_context: Context) -> Result<()> {
        if next_context.len() != self.current_context.len() {
            return Err(Error::InvalidShape(format!(
                "next context of length {} but current context has length {}",
                next_context.len(),
                self.current_context.len()
            )));
        }
        let context = std::mem::replace(&mut self.current_context, next_context);
        if let Err(e) = self.check_step(&context, &action, &observation) {
            self.current_context = context;
            return Err(e);
        }
        self.steps.push(Step {
            context,
            action,
            observation,
        });
        Ok(())
    }

    /// Value-semantics variant of [`History::push`]; `self` is unchanged.
    pub fn append_step(&self, action: Action, observation: Observation, next_context: Context) -> Result<History> {
        let mut next = self.clone();
        next.push(action, observation, next_context)?;
        Ok(next)
    }

    /// Keep the most recent `min(window, t)` timesteps, i.e. the last
    /// `window - 1` steps plus the current context.
    pub fn truncate_to_window(&self, window: usize) -> History {
        assert!(window >= 1, "window must be at least one timestep");
        let keep = self.steps.len().min(window - 1);
        History {
            steps: self.steps[self.steps.len() - keep..].to_vec(),
            current_context: self.current_context.clone(),
        }
    }

    /// Replace the current context, leaving past steps untouched.
    pub fn with_context(&self, context: Context) -> Result<History> {
        if context.len() != self.current_context.len() {
            return Err(Error::InvalidShape(format!(
                "replacement context of length {} for contexts of length {}",
                context.len(),
                self.current_context.len()
            )));
        }
        Ok(History {
            steps: self.steps.clone(),
            current_context: context,
        })
    }
}

/// One pre-training record set: a rolled trajectory with a target action for
/// every timestep. Record `t` pairs `H_t` (the first `t - 1` steps plus the
/// context of step `t`) with `targets[t - 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub env_id: u64,
    pub steps: Vec<Step>,
    pub targets: Vec<Action>,
}

impl TrajectorySample {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    /// `H_t` for `1 <= t <= horizon`.
    pub fn history_at(&self, t: usize) -> History {
        assert!(t >= 1 && t <= self.steps.len(), "record {t} outside 1..={}", self.steps.len());
        History {
            steps: self.steps[..t - 1].to_vec(),
            current_context: self.steps[t - 1].context.clone(),
        }
    }

    pub fn records(&self) -> impl Iterator<Item = (History, &Action)> + '_ {
        (1..=self.steps.len()).map(move |t| (self.history_at(t), &self.targets[t - 1]))
    }

    /// First `horizon` timesteps.
    pub fn truncated(&self, horizon: usize) -> TrajectorySample {
        let h = horizon.min(self.steps.len());
        TrajectorySample {
            env_id: self.env_id,
            steps: self.steps[..h].to_vec(),
            targets: self.targets[..h].to_vec(),
        }
    }
}
