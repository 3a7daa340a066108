//! Pre-training data generation and the two-phase supervised training loop.

use serde::{Deserialize, Serialize};

use crate::domain::{project_to_space, Action, History, Step, TrajectorySample};
use crate::envs::{EnvParams, Environment, PriorSpec};
use crate::error::{Error, Result};
use crate::model::{OmgptModel, Tokens};
use crate::nn::{adamw_step, AdamWConfig, AdamWState, Checkpoint, Gradients, Graph, ParamStore, Var};
use crate::oracle::{LossKind, Posterior};
use crate::rng::{labels, RngStream};

/// Sequences per gradient worker graph. Fixed so that the reduction order
/// does not depend on the thread count.
pub const GRAD_CHUNK: usize = 8;

const TRAIN_STATE_FORMAT: &str = "omgpt-train-1";

/// `p_t = min{1, 2 / sqrt(t)}`.
pub fn behavior_noise_prob(t: usize) -> f64 {
    (2.0 / (t.max(1) as f64).sqrt()).min(1.0)
}

/// Noisy optimal action `a*_t + eps'_t`, projected onto the current action
/// space. Discrete actions shift by an offset drawn from {-2, -1, 1, 2}.
pub fn behavior_action(env: &Environment, h: &History, rng: &mut RngStream) -> Result<Action> {
    let space = env.action_space();
    let a_star = env.optimal_action(h.current_context())?;
    if !rng.bernoulli(behavior_noise_prob(h.t())) {
        return Ok(a_star);
    }
    let noisy = match &a_star {
        Action::Index(i) => {
            const OFFSETS: [i64; 4] = [-2, -1, 1, 2];
            let j = (*i as i64 + OFFSETS[rng.index(4)]).max(0) as usize;
            Action::Index(j)
        }
        Action::Scalar(v) => Action::Scalar(v + rng.uniform_range(-1.0, 1.0)),
        Action::Vector(v) => Action::Vector(v.iter().map(|x| x + rng.uniform_range(-1.0, 1.0)).collect()),
        Action::Distribution(_) => return Err(Error::InvalidAction("optimal actions are never distributions".into())),
    };
    project_to_space(&noisy, &space)
}

/// Acting rule used to roll a trajectory.
#[derive(Debug, Clone, Copy)]
pub enum Generator<'a> {
    Behavior,
    Model(&'a OmgptModel),
}

/// Roll `env` (reset first) for `steps` timesteps. Every record's target is
/// the environment's optimal action for that record's state and context.
pub fn generate_trajectory(env: &mut Environment, generator: Generator<'_>, steps: usize, env_id: u64, rng: &RngStream) -> Result<TrajectorySample> {
    env.reset();
    let mut ctx_rng = rng.derive(labels::CONTEXT);
    let mut obs_rng = rng.derive(labels::OBSERVATION);
    let mut pol_rng = rng.derive(labels::POLICY);
    let mut h = History::new(env.sample_context(&mut ctx_rng));
    let mut out = Vec::with_capacity(steps);
    let mut targets = Vec::with_capacity(steps);
    for t in 1..=steps {
        let x = h.current_context().clone();
        targets.push(env.optimal_action(&x)?);
        let a = match generator {
            Generator::Behavior => behavior_action(env, &h, &mut pol_rng)?,
            Generator::Model(m) => m.predict_action(&h, &env.action_space(), &mut pol_rng)?,
        };
        let o = env.sample_observation(&x, &a, &mut obs_rng)?;
        out.push(Step {
            context: x,
            action: a.clone(),
            observation: o.clone(),
        });
        if t < steps {
            let next = env.sample_context(&mut ctx_rng);
            h.push(a, o, next)?;
        }
    }
    Ok(TrajectorySample {
        env_id,
        steps: out,
        targets,
    })
}

/// Draw an environment from `prior` (child stream `ENV` of `rng`) and roll
/// it. The sample's `env_id` is the pool index for finite priors.
pub fn sample_trajectory(prior: &PriorSpec, generator: Generator<'_>, steps: usize, rng: &RngStream) -> Result<(EnvParams, TrajectorySample)> {
    let (idx, params) = prior.draw(&mut rng.derive(labels::ENV));
    let mut env = Environment::new(params.clone(), prior.horizon)?;
    let s = generate_trajectory(&mut env, generator, steps, idx.map_or(rng.stream_id(), |i| i as u64), rng)?;
    Ok((params, s))
}

fn roll_one(prior: &PriorSpec, generator: Generator<'_>, steps: usize, rng: &RngStream) -> Result<TrajectorySample> {
    sample_trajectory(prior, generator, steps, rng).map(|(_, s)| s)
}

/// `count` independent trajectories of `steps` timesteps; trajectory `i` uses
/// child stream `i` of `rng`, so the result does not depend on scheduling.
pub fn generate_pool(prior: &PriorSpec, generator: Generator<'_>, count: usize, steps: usize, rng: &RngStream) -> Result<Vec<TrajectorySample>> {
    prior.validate()?;
    if steps == 0 || steps > prior.horizon {
        return Err(Error::Config(format!("trajectory length {steps} outside 1..={}", prior.horizon)));
    }
    let rngs: Vec<RngStream> = (0..count).map(|i| rng.derive(i as u64)).collect();
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        rngs.par_iter().map(|r| roll_one(prior, generator, steps, r)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        rngs.iter().map(|r| roll_one(prior, generator, steps, r)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurriculumMode {
    Off,
    /// Piecewise schedule clamped to `[20, T]`.
    #[default]
    Clamped,
    /// Piecewise schedule clamped only to `[1, T]`.
    Raw,
}

/// The schedule before any clamping:
/// `m <= M0: 20 (m % 10 + 1)`, `M0 < m <= 100: 20 (m % 10 - 4)`, else `T`.
pub fn curriculum_raw(m: usize, m0: usize, horizon: usize) -> i64 {
    let r = (m % 10) as i64;
    if m <= m0 {
        20 * (r + 1)
    } else if m <= 100 {
        20 * (r - 4)
    } else {
        horizon as i64
    }
}

/// Trajectory length `T~` used at iteration `m`.
pub fn curriculum_horizon(m: usize, m0: usize, horizon: usize, mode: CurriculumMode) -> usize {
    let raw = curriculum_raw(m, m0, horizon);
    let t = horizon as i64;
    match mode {
        CurriculumMode::Off => horizon,
        CurriculumMode::Clamped => raw.clamp(20.min(t), t) as usize,
        CurriculumMode::Raw => raw.clamp(1, t) as usize,
    }
}

fn default_pool_size() -> usize {
    20_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Total iterations `M`.
    pub iterations: usize,
    /// Early-phase iterations `M0`.
    pub early_iterations: usize,
    /// Sequences per iteration `n`.
    pub sequences_per_iteration: usize,
    /// Share of behavior-pool sequences in the mixed phase.
    pub kappa: f64,
    pub batch_size: usize,
    /// Trajectory horizon `T`.
    pub horizon: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout_p: f64,
    /// Defaults to the family's matched loss.
    #[serde(default)]
    pub loss_kind: Option<LossKind>,
    #[serde(default)]
    pub curriculum: CurriculumMode,
    #[serde(default = "default_pool_size")]
    pub pool_size: usize,
    /// Held-out trajectories for the holdout loss (0 disables it).
    #[serde(default)]
    pub holdout_size: usize,
    /// Holdout loss is computed every this many iterations and at the end.
    #[serde(default)]
    pub holdout_every: usize,
    /// Add the squared observation loss (needs the observation head).
    #[serde(default)]
    pub observation_loss: bool,
    /// Checkpoint every this many iterations (0 = only at the end).
    #[serde(default)]
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            early_iterations: 100,
            sequences_per_iteration: 64,
            kappa: 0.5,
            batch_size: 64,
            horizon: 20,
            lr: 1e-4,
            weight_decay: 1e-4,
            dropout_p: 0.05,
            loss_kind: None,
            curriculum: CurriculumMode::Clamped,
            pool_size: default_pool_size(),
            holdout_size: 0,
            holdout_every: 0,
            observation_loss: false,
            checkpoint_every: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.iterations == 0 || self.early_iterations == 0 || self.early_iterations > self.iterations {
            return bad(format!(
                "need 1 <= early_iterations ({}) <= iterations ({})",
                self.early_iterations, self.iterations
            ));
        }
        if !(0.0..=1.0).contains(&self.kappa) {
            return bad(format!("kappa {} outside [0, 1]", self.kappa));
        }
        if self.sequences_per_iteration == 0 || self.batch_size == 0 || self.horizon == 0 || self.pool_size == 0 {
            return bad("sequence counts, batch size, horizon and pool size must be positive".into());
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("lr must be positive and weight decay non-negative".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p {} outside [0, 1)", self.dropout_p));
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }

    pub fn loss_for(&self, prior: &PriorSpec) -> LossKind {
        self.loss_kind.unwrap_or_else(|| LossKind::for_family(prior.task.family()))
    }

    /// Pool sequences used in a mixed-phase iteration: `round(kappa * n)`.
    pub fn pool_share(&self) -> usize {
        (self.kappa * self.sequences_per_iteration as f64).round() as usize
    }
}

/// Forward inputs covering every record of one trajectory: a single pass
/// when it fits the window, otherwise one pass for the first `W` records and
/// one truncated pass per later record.
#[derive(Debug, Clone)]
pub struct TrainingItem {
    pub tokens: Tokens,
    /// Feature-token rows that carry a target.
    pub rows: Vec<usize>,
    pub targets: Vec<Action>,
}

pub fn training_items(model: &OmgptModel, s: &TrajectorySample) -> Result<Vec<TrainingItem>> {
    let w = model.config().window;
    let n = s.horizon();
    if n == 0 {
        return Err(Error::InvalidShape("empty trajectory".into()));
    }
    let first = n.min(w);
    let mut items = vec![TrainingItem {
        tokens: model.tokenize(&s.history_at(first))?,
        rows: (0..first).collect(),
        targets: s.targets[..first].to_vec(),
    }];
    for t in first + 1..=n {
        items.push(TrainingItem {
            tokens: model.tokenize(&s.history_at(t))?,
            rows: vec![w - 1],
            targets: vec![s.targets[t - 1].clone()],
        });
    }
    Ok(items)
}

/// Mean per-record loss of one trajectory inside `g`.
#[allow(clippy::too_many_arguments)]
fn trajectory_loss(
    model: &OmgptModel,
    store: &ParamStore,
    g: &mut Graph,
    s: &TrajectorySample,
    kind: LossKind,
    with_obs: bool,
    training: bool,
    rng: &mut RngStream,
) -> Result<Var> {
    let items = training_items(model, s)?;
    let n = s.horizon() as f64;
    let mut total: Option<Var> = None;
    for it in &items {
        let l = model.sequence_loss(store, g, &it.tokens, &it.rows, &it.targets, kind, with_obs, training, rng)?;
        let l = g.scale(l, it.rows.len() as f64 / n);
        total = Some(match total {
            Some(t) => g.add(t, l)?,
            None => l,
        });
    }
    Ok(total.expect("at least one item"))
}

/// Batch-mean loss and its gradient. Sequences are split into fixed chunks
/// of [`GRAD_CHUNK`], each on its own graph; chunk gradients are summed in
/// chunk order.
pub fn batch_gradients(
    model: &OmgptModel,
    batch: &[TrajectorySample],
    kind: LossKind,
    with_obs: bool,
    dropout: &RngStream,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::InvalidShape("empty batch".into()));
    }
    let store = model.params();
    let scale = 1.0 / batch.len() as f64;
    let chunks: Vec<(usize, &[TrajectorySample])> = batch.chunks(GRAD_CHUNK).enumerate().collect();
    let work = |(ci, chunk): &(usize, &[TrajectorySample])| -> Result<(f64, Gradients)> {
        let mut g = Graph::new();
        let mut total: Option<Var> = None;
        for (j, s) in chunk.iter().enumerate() {
            let mut rng = dropout.derive((ci * GRAD_CHUNK + j) as u64);
            let l = trajectory_loss(model, store, &mut g, s, kind, with_obs, true, &mut rng)?;
            total = Some(match total {
                Some(t) => g.add(t, l)?,
                None => l,
            });
        }
        let loss = g.scale(total.expect("non-empty chunk"), scale);
        let value = g.value(loss).data[0];
        Ok((value, g.backward(loss, store)?))
    };
    #[cfg(feature = "parallel")]
    let parts: Vec<(f64, Gradients)> = {
        use rayon::prelude::*;
        chunks.par_iter().map(work).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<(f64, Gradients)> = chunks.iter().map(work).collect::<Result<_>>()?;
    let mut grads = Gradients::zeros(store);
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        grads.add_assign(g);
    }
    Ok((loss, grads))
}

/// Mean per-record loss over `samples` without dropout.
pub fn evaluate_loss(model: &OmgptModel, samples: &[TrajectorySample], kind: LossKind, with_obs: bool) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidShape("no samples to evaluate".into()));
    }
    let one = |s: &TrajectorySample| -> Result<f64> {
        let mut g = Graph::new();
        let l = trajectory_loss(model, model.params(), &mut g, s, kind, with_obs, false, &mut RngStream::new(0, 0))?;
        Ok(g.value(l).data[0])
    };
    #[cfg(feature = "parallel")]
    let losses: Vec<f64> = {
        use rayon::prelude::*;
        samples.par_iter().map(one).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let losses: Vec<f64> = samples.iter().map(one).collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / samples.len() as f64)
}

/// Combined action and observation loss on `batch`; requires the
/// observation head.
pub fn observation_pretrain_loss(model: &OmgptModel, batch: &[TrajectorySample], kind: LossKind) -> Result<f64> {
    if !model.has_observation_head() {
        return Err(Error::Config("the model has no observation head".into()));
    }
    evaluate_loss(model, batch, kind, true)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub train_loss: f64,
    pub holdout_loss: Option<f64>,
}

/// Model, optimizer moments and the number of finished iterations.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: OmgptModel,
    pub opt: AdamWState,
    pub iteration: usize,
}

impl TrainState {
    pub fn new(model: OmgptModel) -> Self {
        let opt = AdamWState::new(model.params());
        Self {
            model,
            opt,
            iteration: 0,
        }
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut c = self.model.to_checkpoint()?;
        if let Some(obj) = c.meta.as_object_mut() {
            obj.insert(
                "train".into(),
                serde_json::json!({
                    "format": TRAIN_STATE_FORMAT,
                    "iteration": self.iteration,
                    "step": self.opt.step,
                }),
            );
        }
        for (id, p) in self.model.params().iter() {
            let shape = p.value.shape.clone();
            c.push(&format!("opt.m.{}", p.name), &crate::nn::Tensor::new(shape.clone(), self.opt.m[id.0].clone())?, true);
            c.push(&format!("opt.v.{}", p.name), &crate::nn::Tensor::new(shape, self.opt.v[id.0].clone())?, true);
        }
        Ok(c)
    }

    /// Restore a training state; a plain model checkpoint starts with fresh
    /// optimizer moments at iteration 0.
    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let model = OmgptModel::from_checkpoint(c)?;
        let mut st = TrainState::new(model);
        let Some(train) = c.meta.get("train") else {
            return Ok(st);
        };
        if train.get("format").and_then(|f| f.as_str()) != Some(TRAIN_STATE_FORMAT) {
            return Err(Error::Format("unknown training-state format".into()));
        }
        let field = |k: &str| {
            train
                .get(k)
                .and_then(|v| v.as_u64())
                .ok_or_else(|| Error::Format(format!("training state lacks {k}")))
        };
        st.iteration = field("iteration")? as usize;
        st.opt.step = field("step")?;
        for (id, p) in st.model.params().iter() {
            for (prefix, dst) in [("opt.m.", &mut st.opt.m[id.0]), ("opt.v.", &mut st.opt.v[id.0])] {
                let t = c
                    .get(&format!("{prefix}{}", p.name))
                    .ok_or_else(|| Error::Format(format!("missing optimizer moment for {}", p.name)))?;
                if t.shape != p.value.shape {
                    return Err(Error::Format(format!("optimizer moment for {} has the wrong shape", p.name)));
                }
                dst.copy_from_slice(&t.data);
            }
        }
        Ok(st)
    }
}

/// Pre-generated behavior pool and holdout set for a run.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub pool: Vec<TrajectorySample>,
    pub holdout: Vec<TrajectorySample>,
}

impl TrainingData {
    /// The behavior pool alone, as materialized by dataset generation.
    pub fn behavior_pool(prior: &PriorSpec, cfg: &TrainConfig) -> Result<Vec<TrajectorySample>> {
        let root = RngStream::new(cfg.seed, 0);
        generate_pool(prior, Generator::Behavior, cfg.pool_size, cfg.horizon, &root.derive(labels::POOL))
    }

    pub fn generate(prior: &PriorSpec, cfg: &TrainConfig) -> Result<Self> {
        let root = RngStream::new(cfg.seed, 0);
        let pool = Self::behavior_pool(prior, cfg)?;
        let holdout = if cfg.holdout_size > 0 {
            generate_pool(prior, Generator::Behavior, cfg.holdout_size, cfg.horizon, &root.derive(labels::HOLDOUT))?
        } else {
            Vec::new()
        };
        Ok(Self { pool, holdout })
    }
}

/// Algorithm 1. Continues from `state.iteration + 1` up to `cfg.iterations`;
/// `on_iteration` sees every finished iteration (for logging and periodic
/// checkpoints).
pub fn pretrain(
    prior: &PriorSpec,
    cfg: &TrainConfig,
    data: &TrainingData,
    state: &mut TrainState,
    on_iteration: &mut dyn FnMut(&TrainState, &LossRecord) -> Result<()>,
) -> Result<Vec<LossRecord>> {
    cfg.validate()?;
    prior.validate()?;
    if cfg.horizon > prior.horizon {
        return Err(Error::Config(format!(
            "training horizon {} exceeds the prior horizon {}",
            cfg.horizon, prior.horizon
        )));
    }
    state.model.config().check_task(&prior.task)?;
    if cfg.observation_loss && !state.model.has_observation_head() {
        return Err(Error::Config("observation_loss needs a model with an observation head".into()));
    }
    if data.pool.is_empty() {
        return Err(Error::Config("behavior pool is empty".into()));
    }
    let kind = cfg.loss_for(prior);
    let adam = cfg.adamw();
    state.model.set_dropout(cfg.dropout_p)?;
    let root = RngStream::new(cfg.seed, 0);
    let mut trace = Vec::new();
    for m in state.iteration + 1..=cfg.iterations {
        let t_tilde = curriculum_horizon(m, cfg.early_iterations, cfg.horizon, cfg.curriculum);
        let it_rng = root.derive2(labels::BATCH, m as u64);
        let n = cfg.sequences_per_iteration;
        let from_pool = if m <= cfg.early_iterations { n } else { cfg.pool_share() };
        let mut pick = it_rng.derive(0);
        let mut seqs: Vec<TrajectorySample> = (0..from_pool)
            .map(|_| data.pool[pick.index(data.pool.len())].truncated(t_tilde))
            .collect();
        if from_pool < n {
            // the snapshot is the model as of the start of this iteration
            let snapshot = state.model.clone();
            let rolled = generate_pool(prior, Generator::Model(&snapshot), n - from_pool, t_tilde, &it_rng.derive(labels::ROLLOUT))?;
            seqs.extend(rolled);
        }
        let mut losses = Vec::new();
        for (b, batch) in seqs.chunks(cfg.batch_size).enumerate() {
            let drop_rng = it_rng.derive2(labels::DROPOUT, b as u64);
            let (loss, grads) = batch_gradients(&state.model, batch, kind, cfg.observation_loss, &drop_rng)?;
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::NonFiniteLoss { iteration: m, batch: b });
            }
            adamw_step(state.model.params_mut(), &grads, &mut state.opt, &adam)?;
            losses.push(loss);
        }
        state.iteration = m;
        let train_loss = losses.iter().sum::<f64>() / losses.len() as f64;
        let holdout_due = !data.holdout.is_empty()
            && (m == cfg.iterations || (cfg.holdout_every > 0 && m % cfg.holdout_every == 0));
        let holdout_loss = if holdout_due {
            Some(evaluate_loss(&state.model, &data.holdout, kind, cfg.observation_loss)?)
        } else {
            None
        };
        let rec = LossRecord {
            iteration: m,
            train_loss,
            holdout_loss,
        };
        on_iteration(state, &rec)?;
        trace.push(rec);
    }
    Ok(trace)
}

/// Loss trace as CSV: `iteration,train_loss,holdout_loss` (holdout empty
/// when not computed).
pub fn write_loss_csv<W: std::io::Write>(trace: &[LossRecord], out: W, with_header: bool) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    let err = |e: csv::Error| Error::Format(e.to_string());
    if with_header {
        w.write_record(["iteration", "train_loss", "holdout_loss"]).map_err(err)?;
    }
    for r in trace {
        let h = r.holdout_loss.map(|v| format!("{v:?}")).unwrap_or_default();
        w.write_record([r.iteration.to_string(), format!("{:?}", r.train_loss), h]).map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-timestep agreement between the model's most likely arm and the mode
/// of the Alg* (posterior sampling) action distribution on `samples`.
#[derive(Debug, Clone, PartialEq)]
pub struct Agreement {
    /// `matches[t - 1] / totals[t - 1]` is the agreement at time `t`.
    pub matches: Vec<usize>,
    pub totals: Vec<usize>,
}

impl Agreement {
    pub fn rate_from(&self, t_min: usize) -> f64 {
        let m: usize = self.matches.iter().skip(t_min - 1).sum();
        let n: usize = self.totals.iter().skip(t_min - 1).sum();
        if n == 0 {
            return f64::NAN;
        }
        m as f64 / n as f64
    }
}

/// Mode of the posterior distribution over optimal arms.
pub fn posterior_mode_arm(p: &Posterior, h: &History, arms: usize) -> Result<usize> {
    let w = p.weights();
    let opt = p.optimal_actions(h.current_context())?;
    let mut mass = vec![0.0; arms];
    for (wi, a) in w.iter().zip(&opt) {
        if let Some(i) = a.as_index() {
            if i < arms {
                mass[i] += wi;
            }
        }
    }
    Ok(crate::domain::argmax(&mass))
}

pub fn alg_star_agreement(model: &OmgptModel, pool: &[crate::envs::EnvParams], horizon: usize, samples: &[TrajectorySample]) -> Result<Agreement> {
    let arms = match model.config().output_kind {
        crate::model::OutputKind::Distribution { arms } => arms,
        _ => return Err(Error::UnsupportedMode("agreement needs a distribution head".into())),
    };
    let t_max = samples.iter().map(TrajectorySample::horizon).max().unwrap_or(0);
    let one = |s: &TrajectorySample| -> Result<Vec<bool>> {
        let mut post = Posterior::uniform(pool.to_vec(), horizon)?;
        let mut hits = Vec::with_capacity(s.horizon());
        for t in 1..=s.horizon() {
            let h = s.history_at(t);
            if t > 1 {
                post.observe(&s.steps[t - 2])?;
            }
            let mode = posterior_mode_arm(&post, &h, arms)?;
            let probs = model.action_probabilities(&h)?;
            hits.push(crate::domain::argmax(&probs) == mode);
        }
        Ok(hits)
    };
    #[cfg(feature = "parallel")]
    let all: Vec<Vec<bool>> = {
        use rayon::prelude::*;
        samples.par_iter().map(one).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let all: Vec<Vec<bool>> = samples.iter().map(one).collect::<Result<_>>()?;
    let mut agr = Agreement {
        matches: vec![0; t_max],
        totals: vec![0; t_max],
    };
    for hits in all {
        for (t, hit) in hits.into_iter().enumerate() {
            agr.totals[t] += 1;
            agr.matches[t] += hit as usize;
        }
    }
    Ok(agr)
}
