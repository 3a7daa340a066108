//! Decoder-only transformer over interleaved feature/action tokens.
//!
//! A history `H_t` becomes `(O_0, X_1), a_1, (O_1, X_2), ..., a_{t-1}, (O_{t-1}, X_t)`
//! with `O_0 = 0`. Feature tokens and action tokens pass through separate
//! affine embeddings, get a learned positional embedding, and run through
//! pre-norm GPT-2 blocks with causal multi-head attention. The action head
//! reads every feature-token position; the optional observation head reads
//! every action-token position.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{project_to_space, Action, ActionSpace, History};
use crate::envs::TaskSpec;
use crate::error::{Error, Result};
use crate::eval::PolicyHandle;
use crate::nn::{Checkpoint, Graph, ParamId, ParamStore, Tensor, Var};
use crate::oracle::LossKind;
use crate::rng::RngStream;

const CHECKPOINT_FORMAT: &str = "omgpt-model-1";
const INIT_SD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutputKind {
    Distribution { arms: usize },
    Scalar,
    Vector { dim: usize },
}

impl OutputKind {
    pub fn width(&self) -> usize {
        match self {
            OutputKind::Distribution { arms } => *arms,
            OutputKind::Scalar => 1,
            OutputKind::Vector { dim } => *dim,
        }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub embed_dim: usize,
    /// Context window in timesteps.
    pub window: usize,
    pub observation_dim: usize,
    pub context_dim: usize,
    pub output_kind: OutputKind,
    #[serde(default)]
    pub observation_head: bool,
    #[serde(default)]
    pub dropout_p: f64,
    /// Sample from the distribution head instead of taking its argmax.
    #[serde(default)]
    pub sample_actions: bool,
    /// Multiplies every feature-token entry.
    #[serde(default = "one")]
    pub feature_scale: f64,
    /// Continuous actions are encoded as `(a - offset) / scale` and the head
    /// predicts `offset + scale * raw`.
    #[serde(default)]
    pub action_offset: f64,
    #[serde(default = "one")]
    pub action_scale: f64,
}

impl ModelConfig {
    /// Desk-scale defaults (4 layers, 4 heads, 64 dims, window 20) sized for
    /// `task`.
    pub fn for_task(task: &TaskSpec) -> Self {
        let space = task.action_space();
        let output_kind = match &space {
            ActionSpace::Discrete { count } => OutputKind::Distribution { arms: *count },
            ActionSpace::Box { lower, .. } if lower.len() == 1 => OutputKind::Scalar,
            other => OutputKind::Vector {
                dim: other.encoding_dim(),
            },
        };
        let (action_offset, action_scale) = match &space {
            ActionSpace::Box { lower, upper } => (0.5 * (lower[0] + upper[0]), 0.5 * (upper[0] - lower[0])),
            _ => (0.0, 1.0),
        };
        let feature_scale = match task {
            TaskSpec::Pricing { .. } | TaskSpec::Newsvendor { .. } => 0.1,
            _ => 1.0,
        };
        Self {
            n_layers: 4,
            n_heads: 4,
            embed_dim: 64,
            window: 20,
            observation_dim: task.observation_dim(),
            context_dim: task.context_dim(),
            output_kind,
            observation_head: false,
            dropout_p: 0.0,
            sample_actions: false,
            feature_scale,
            action_offset,
            action_scale,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.observation_dim + self.context_dim
    }

    pub fn action_dim(&self) -> usize {
        self.output_kind.width()
    }

    pub fn max_tokens(&self) -> usize {
        2 * self.window - 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_layers == 0 || self.n_heads == 0 || self.embed_dim == 0 {
            return bad("layers, heads and embedding width must be positive".into());
        }
        if self.embed_dim % self.n_heads != 0 {
            return bad(format!("embed_dim {} is not divisible by n_heads {}", self.embed_dim, self.n_heads));
        }
        if self.window == 0 {
            return bad("window must be at least 1".into());
        }
        if self.feature_dim() == 0 {
            return bad("feature tokens need at least one coordinate".into());
        }
        if self.action_dim() == 0 {
            return bad("action head needs at least one output".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p {} outside [0, 1)", self.dropout_p));
        }
        if !(self.action_scale > 0.0) || !self.feature_scale.is_finite() || !self.action_offset.is_finite() {
            return bad("action_scale must be positive and scales finite".into());
        }
        Ok(())
    }

    /// Dimensions must agree with the task's spaces.
    pub fn check_task(&self, task: &TaskSpec) -> Result<()> {
        if self.context_dim != task.context_dim() || self.observation_dim != task.observation_dim() {
            return Err(Error::Config(format!(
                "model expects context/observation dims ({}, {}), task {} has ({}, {})",
                self.context_dim,
                self.observation_dim,
                task.family().name(),
                task.context_dim(),
                task.observation_dim()
            )));
        }
        let ok = match (&self.output_kind, task.action_space()) {
            (OutputKind::Distribution { arms }, ActionSpace::Discrete { count }) => *arms == count,
            (OutputKind::Scalar, s) => s.is_scalar(),
            (OutputKind::Vector { dim }, s) => !matches!(s, ActionSpace::Discrete { .. }) && s.encoding_dim() == *dim,
            _ => false,
        };
        if !ok {
            return Err(Error::Config(format!(
                "output kind {:?} does not match the {} action space",
                self.output_kind,
                task.family().name()
            )));
        }
        Ok(())
    }

    fn action_space_hint(&self) -> Option<ActionSpace> {
        match self.output_kind {
            OutputKind::Distribution { arms } => Some(ActionSpace::Discrete { count: arms }),
            _ => None,
        }
    }

    pub fn encode_action(&self, a: &Action) -> Result<Vec<f64>> {
        let v = match (&self.output_kind, a) {
            (OutputKind::Distribution { arms }, Action::Index(i)) if i < arms => {
                a.encode(&self.action_space_hint().expect("discrete"))
            }
            (OutputKind::Distribution { arms }, Action::Distribution(p)) if p.len() == *arms => p.clone(),
            (OutputKind::Scalar | OutputKind::Vector { .. }, Action::Scalar(_) | Action::Vector(_)) => a
                .coords()
                .expect("continuous")
                .iter()
                .map(|x| (x - self.action_offset) / self.action_scale)
                .collect(),
            _ => return Err(Error::InvalidShape(format!("action {a:?} does not fit output kind {:?}", self.output_kind))),
        };
        if v.len() != self.action_dim() {
            return Err(Error::InvalidShape(format!(
                "action encodes to {} values, model expects {}",
                v.len(),
                self.action_dim()
            )));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Feature,
    Action,
}

/// Model input for one (window-truncated) history.
#[derive(Debug, Clone, PartialEq)]
pub struct Tokens {
    /// `(O_{tau-1}, X_tau)` scaled, one row per timestep in the window.
    pub features: Vec<Vec<f64>>,
    /// Encoded actions, one fewer than features.
    pub actions: Vec<Vec<f64>>,
    /// `O_tau` following each action token (observation-head targets).
    pub observations: Vec<Vec<f64>>,
}

impl Tokens {
    pub fn len(&self) -> usize {
        self.features.len() + self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn kinds(&self) -> Vec<TokenKind> {
        (0..self.len())
            .map(|i| if i % 2 == 0 { TokenKind::Feature } else { TokenKind::Action })
            .collect()
    }
}

/// Interleaved token sequence for the last `min(W, t)` timesteps of `h`. The
/// first token of the window always carries a zero observation.
pub fn tokenize(h: &History, cfg: &ModelConfig) -> Result<Tokens> {
    let h = h.truncate_to_window(cfg.window);
    let dx = cfg.context_dim;
    let d_o = cfg.observation_dim;
    let steps = h.steps();
    let mut features = Vec::with_capacity(steps.len() + 1);
    let mut actions = Vec::with_capacity(steps.len());
    let mut observations = Vec::with_capacity(steps.len());
    let mut prev_obs = vec![0.0; d_o];
    let contexts = steps.iter().map(|s| &s.context).chain(std::iter::once(h.current_context()));
    for (i, x) in contexts.enumerate() {
        if x.len() != dx {
            return Err(Error::InvalidShape(format!("context of length {} for a model expecting {dx}", x.len())));
        }
        let mut f = Vec::with_capacity(d_o + dx);
        f.extend_from_slice(&prev_obs);
        f.extend_from_slice(x.values());
        features.push(f.into_iter().map(|v| v * cfg.feature_scale).collect());
        if let Some(s) = steps.get(i) {
            if s.observation.len() != d_o {
                return Err(Error::InvalidShape(format!(
                    "observation of length {} for a model expecting {d_o}",
                    s.observation.len()
                )));
            }
            actions.push(cfg.encode_action(&s.action)?);
            observations.push(s.observation.0.clone());
            prev_obs = s.observation.0.clone();
        }
    }
    Ok(Tokens {
        features,
        actions,
        observations,
    })
}

#[derive(Debug, Clone)]
struct BlockIds {
    ln1_g: ParamId,
    ln1_b: ParamId,
    qkv_w: ParamId,
    qkv_b: ParamId,
    proj_w: ParamId,
    proj_b: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    fc_w: ParamId,
    fc_b: ParamId,
    fc2_w: ParamId,
    fc2_b: ParamId,
}

#[derive(Debug, Clone)]
struct ModelIds {
    feat_w: ParamId,
    feat_b: ParamId,
    act_w: ParamId,
    act_b: ParamId,
    pos: ParamId,
    blocks: Vec<BlockIds>,
    lnf_g: ParamId,
    lnf_b: ParamId,
    head_w: ParamId,
    head_b: ParamId,
    obs: Option<(ParamId, ParamId)>,
}

/// Graph handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOut {
    /// Action outputs (logits for the distribution head, actions in action
    /// units otherwise), one row per feature token.
    pub action: Var,
    /// Observation predictions, one row per action token.
    pub observation: Option<Var>,
    /// Residual stream after the embedding (index 0) and after each block.
    pub hidden: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct OmgptModel {
    cfg: ModelConfig,
    store: ParamStore,
    ids: ModelIds,
}

fn build_params(cfg: &ModelConfig, rng: &mut RngStream) -> Result<(ParamStore, ModelIds)> {
    cfg.validate()?;
    let e = cfg.embed_dim;
    let mut s = ParamStore::new();
    let resid_sd = INIT_SD / (2.0 * cfg.n_layers as f64).sqrt();
    let feat_w = s.add_normal("embed.feature.w", vec![cfg.feature_dim(), e], INIT_SD, rng)?;
    let feat_b = s.add_const("embed.feature.b", vec![e], 0.0, true)?;
    let act_w = s.add_normal("embed.action.w", vec![cfg.action_dim(), e], INIT_SD, rng)?;
    let act_b = s.add_const("embed.action.b", vec![e], 0.0, true)?;
    let pos = s.add_normal("embed.position", vec![cfg.max_tokens(), e], INIT_SD, rng)?;
    let mut blocks = Vec::with_capacity(cfg.n_layers);
    for l in 0..cfg.n_layers {
        let n = |p: &str| format!("blocks.{l}.{p}");
        blocks.push(BlockIds {
            ln1_g: s.add_const(&n("ln1.gain"), vec![e], 1.0, true)?,
            ln1_b: s.add_const(&n("ln1.bias"), vec![e], 0.0, true)?,
            qkv_w: s.add_normal(&n("attn.qkv.w"), vec![e, 3 * e], INIT_SD, rng)?,
            qkv_b: s.add_const(&n("attn.qkv.b"), vec![3 * e], 0.0, true)?,
            proj_w: s.add_normal(&n("attn.proj.w"), vec![e, e], resid_sd, rng)?,
            proj_b: s.add_const(&n("attn.proj.b"), vec![e], 0.0, true)?,
            ln2_g: s.add_const(&n("ln2.gain"), vec![e], 1.0, true)?,
            ln2_b: s.add_const(&n("ln2.bias"), vec![e], 0.0, true)?,
            fc_w: s.add_normal(&n("mlp.fc.w"), vec![e, 4 * e], INIT_SD, rng)?,
            fc_b: s.add_const(&n("mlp.fc.b"), vec![4 * e], 0.0, true)?,
            fc2_w: s.add_normal(&n("mlp.proj.w"), vec![4 * e, e], resid_sd, rng)?,
            fc2_b: s.add_const(&n("mlp.proj.b"), vec![e], 0.0, true)?,
        });
    }
    let lnf_g = s.add_const("ln_f.gain", vec![e], 1.0, true)?;
    let lnf_b = s.add_const("ln_f.bias", vec![e], 0.0, true)?;
    let head_w = s.add_const("head.action.w", vec![e, cfg.action_dim()], 0.0, false)?;
    let head_b = s.add_const("head.action.b", vec![cfg.action_dim()], 0.0, true)?;
    let obs = if cfg.observation_head {
        Some((
            s.add_const("head.observation.w", vec![e, cfg.observation_dim], 0.0, false)?,
            s.add_const("head.observation.b", vec![cfg.observation_dim], 0.0, true)?,
        ))
    } else {
        None
    };
    Ok((
        s,
        ModelIds {
            feat_w,
            feat_b,
            act_w,
            act_b,
            pos,
            blocks,
            lnf_g,
            lnf_b,
            head_w,
            head_b,
            obs,
        },
    ))
}

fn interleave(nf: usize, na: usize) -> Vec<usize> {
    let mut idx = Vec::with_capacity(nf + na);
    for i in 0..nf {
        idx.push(i);
        if i < na {
            idx.push(nf + i);
        }
    }
    idx
}

impl OmgptModel {
    /// Freshly initialized model: Gaussian trunk weights, zero output heads.
    pub fn new(cfg: ModelConfig, rng: &mut RngStream) -> Result<Self> {
        let (store, ids) = build_params(&cfg, rng)?;
        Ok(Self { cfg, store, ids })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn set_params(&mut self, store: ParamStore) -> Result<()> {
        if store.len() != self.store.len()
            || store.iter().zip(self.store.iter()).any(|((_, a), (_, b))| a.name != b.name || a.value.shape != b.value.shape)
        {
            return Err(Error::InvalidShape("parameter set does not match the model layout".into()));
        }
        self.store = store;
        Ok(())
    }

    /// Change the training-time dropout rate.
    pub fn set_dropout(&mut self, p: f64) -> Result<()> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout_p {p} outside [0, 1)")));
        }
        self.cfg.dropout_p = p;
        Ok(())
    }

    pub fn tokenize(&self, h: &History) -> Result<Tokens> {
        tokenize(h, &self.cfg)
    }

    /// Forward pass on the model's own parameters.
    pub fn forward(&self, g: &mut Graph, tokens: &Tokens, training: bool, rng: &mut RngStream) -> Result<ForwardOut> {
        self.forward_with(&self.store, g, tokens, training, rng)
    }

    /// Forward pass with an externally supplied parameter set of the same
    /// layout (used for finite differences and gradient workers).
    pub fn forward_with(
        &self,
        store: &ParamStore,
        g: &mut Graph,
        tokens: &Tokens,
        training: bool,
        rng: &mut RngStream,
    ) -> Result<ForwardOut> {
        let cfg = &self.cfg;
        let n_tok = tokens.len();
        if n_tok > cfg.max_tokens() {
            return Err(Error::WindowExceeded {
                tokens: n_tok,
                limit: cfg.max_tokens(),
            });
        }
        let nf = tokens.features.len();
        let na = tokens.actions.len();
        if nf == 0 || na + 1 != nf {
            return Err(Error::InvalidShape(format!("{nf} feature tokens and {na} action tokens")));
        }
        let p = cfg.dropout_p;
        let drop = |g: &mut Graph, v: Var, rng: &mut RngStream| -> Result<Var> {
            if training {
                g.dropout(v, p, rng)
            } else {
                Ok(v)
            }
        };
        let ids = &self.ids;
        let fin = g.input(Tensor::from_rows(&tokens.features, cfg.feature_dim())?);
        let fw = g.param(store, ids.feat_w);
        let fb = g.param(store, ids.feat_b);
        let fe = g.matmul(fin, fw)?;
        let fe = g.add_row(fe, fb)?;
        let x = if na > 0 {
            let ain = g.input(Tensor::from_rows(&tokens.actions, cfg.action_dim())?);
            let aw = g.param(store, ids.act_w);
            let ab = g.param(store, ids.act_b);
            let ae = g.matmul(ain, aw)?;
            let ae = g.add_row(ae, ab)?;
            let stacked = g.concat_rows(&[fe, ae])?;
            g.gather_rows(stacked, &interleave(nf, na))?
        } else {
            fe
        };
        let pos = g.param(store, ids.pos);
        let pos = g.slice_rows(pos, 0, n_tok)?;
        let x = g.add(x, pos)?;
        let mut x = drop(g, x, rng)?;
        let mut hidden = Vec::with_capacity(cfg.n_layers + 1);
        hidden.push(x);
        let e = cfg.embed_dim;
        let dh = e / cfg.n_heads;
        let inv_sqrt = 1.0 / (dh as f64).sqrt();
        for b in &ids.blocks {
            let (g1, b1) = (g.param(store, b.ln1_g), g.param(store, b.ln1_b));
            let h = g.layer_norm(x, g1, b1)?;
            let (qw, qb) = (g.param(store, b.qkv_w), g.param(store, b.qkv_b));
            let qkv = g.matmul(h, qw)?;
            let qkv = g.add_row(qkv, qb)?;
            let mut heads = Vec::with_capacity(cfg.n_heads);
            for hd in 0..cfg.n_heads {
                let q = g.slice_cols(qkv, hd * dh, (hd + 1) * dh)?;
                let k = g.slice_cols(qkv, e + hd * dh, e + (hd + 1) * dh)?;
                let v = g.slice_cols(qkv, 2 * e + hd * dh, 2 * e + (hd + 1) * dh)?;
                let s = g.matmul_nt(q, k)?;
                let s = g.scale(s, inv_sqrt);
                let a = g.softmax_rows(s, true);
                let a = drop(g, a, rng)?;
                heads.push(g.matmul(a, v)?);
            }
            let att = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads)? };
            let (pw, pb) = (g.param(store, b.proj_w), g.param(store, b.proj_b));
            let att = g.matmul(att, pw)?;
            let att = g.add_row(att, pb)?;
            let att = drop(g, att, rng)?;
            x = g.add(x, att)?;
            let (g2, b2) = (g.param(store, b.ln2_g), g.param(store, b.ln2_b));
            let h = g.layer_norm(x, g2, b2)?;
            let (w1, c1) = (g.param(store, b.fc_w), g.param(store, b.fc_b));
            let f = g.matmul(h, w1)?;
            let f = g.add_row(f, c1)?;
            let f = g.gelu(f);
            let (w2, c2) = (g.param(store, b.fc2_w), g.param(store, b.fc2_b));
            let f = g.matmul(f, w2)?;
            let f = g.add_row(f, c2)?;
            let f = drop(g, f, rng)?;
            x = g.add(x, f)?;
            hidden.push(x);
        }
        let (lg, lb) = (g.param(store, ids.lnf_g), g.param(store, ids.lnf_b));
        let xf = g.layer_norm(x, lg, lb)?;
        let feat_pos: Vec<usize> = (0..nf).map(|i| 2 * i).collect();
        let rows = g.gather_rows(xf, &feat_pos)?;
        let action = self.head(g, store, rows)?;
        let observation = match ids.obs {
            Some((ow, ob)) if na > 0 => {
                let act_pos: Vec<usize> = (0..na).map(|i| 2 * i + 1).collect();
                let rows = g.gather_rows(xf, &act_pos)?;
                let (ow, ob) = (g.param(store, ow), g.param(store, ob));
                let o = g.matmul(rows, ow)?;
                Some(g.add_row(o, ob)?)
            }
            _ => None,
        };
        Ok(ForwardOut {
            action,
            observation,
            hidden,
        })
    }

    fn head(&self, g: &mut Graph, store: &ParamStore, rows: Var) -> Result<Var> {
        let (hw, hb) = (g.param(store, self.ids.head_w), g.param(store, self.ids.head_b));
        let out = g.matmul(rows, hw)?;
        let out = g.add_row(out, hb)?;
        Ok(match self.cfg.output_kind {
            OutputKind::Distribution { .. } => out,
            _ => {
                let scaled = g.scale(out, self.cfg.action_scale);
                let off = g.input(Tensor::new(vec![self.cfg.action_dim()], vec![self.cfg.action_offset; self.cfg.action_dim()])?);
                g.add_row(scaled, off)?
            }
        })
    }

    /// Action-head output for the last timestep of `h` (logits or action
    /// coordinates).
    pub fn raw_output(&self, h: &History) -> Result<Vec<f64>> {
        let tokens = self.tokenize(h)?;
        let mut g = Graph::new();
        let mut rng = RngStream::new(0, 0);
        let out = self.forward(&mut g, &tokens, false, &mut rng)?;
        let t = g.value(out.action);
        Ok(t.row(t.rows() - 1).to_vec())
    }

    /// Softmax of the distribution head at the last timestep.
    pub fn action_probabilities(&self, h: &History) -> Result<Vec<f64>> {
        if !matches!(self.cfg.output_kind, OutputKind::Distribution { .. }) {
            return Err(Error::UnsupportedMode("probabilities need a distribution head".into()));
        }
        Ok(softmax(&self.raw_output(h)?))
    }

    /// `TF_theta(H_t)` as a playable action in `space`.
    pub fn predict_action(&self, h: &History, space: &ActionSpace, rng: &mut RngStream) -> Result<Action> {
        let raw = self.raw_output(h)?;
        let a = match self.cfg.output_kind {
            OutputKind::Distribution { .. } => {
                let i = if self.cfg.sample_actions {
                    rng.categorical(&softmax(&raw))
                } else {
                    crate::domain::argmax(&raw)
                };
                Action::Index(i)
            }
            OutputKind::Scalar => Action::Scalar(raw[0]),
            OutputKind::Vector { .. } => Action::Vector(raw),
        };
        project_to_space(&a, space)
    }

    /// Residual-stream vector at the final feature token after `layer`
    /// blocks (0 = input embedding).
    pub fn extract_embeddings(&self, h: &History, layer: usize) -> Result<Vec<f64>> {
        if layer > self.cfg.n_layers {
            return Err(Error::OutOfRange {
                index: layer,
                limit: self.cfg.n_layers,
            });
        }
        let tokens = self.tokenize(h)?;
        let mut g = Graph::new();
        let mut rng = RngStream::new(0, 0);
        let out = self.forward(&mut g, &tokens, false, &mut rng)?;
        let t = g.value(out.hidden[layer]);
        Ok(t.row(t.rows() - 1).to_vec())
    }

    /// Final norm and action head applied to one residual-stream vector.
    pub fn apply_action_head(&self, embedding: &[f64]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![1, embedding.len()], embedding.to_vec())?);
        let (lg, lb) = (g.param(&self.store, self.ids.lnf_g), g.param(&self.store, self.ids.lnf_b));
        let xf = g.layer_norm(x, lg, lb)?;
        let out = self.head(&mut g, &self.store, xf)?;
        Ok(g.value(out).data.clone())
    }

    /// Mean action loss over the supervised feature positions `rows` of one
    /// forward pass, plus the squared observation loss when `with_obs`.
    #[allow(clippy::too_many_arguments)]
    pub fn sequence_loss(
        &self,
        store: &ParamStore,
        g: &mut Graph,
        tokens: &Tokens,
        rows: &[usize],
        targets: &[Action],
        kind: LossKind,
        with_obs: bool,
        training: bool,
        rng: &mut RngStream,
    ) -> Result<Var> {
        if rows.len() != targets.len() || rows.is_empty() {
            return Err(Error::InvalidShape(format!("{} rows for {} targets", rows.len(), targets.len())));
        }
        let out = self.forward_with(store, g, tokens, training, rng)?;
        let picked = if rows.len() == tokens.features.len() && rows.iter().enumerate().all(|(i, &r)| i == r) {
            out.action
        } else {
            g.gather_rows(out.action, rows)?
        };
        let loss = match kind {
            LossKind::CrossEntropy => {
                let idx = targets
                    .iter()
                    .map(|a| {
                        a.argmax()
                            .ok_or_else(|| Error::InvalidAction(format!("cross-entropy target {a:?} is not discrete")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                g.cross_entropy(picked, &idx)?
            }
            LossKind::Squared | LossKind::Absolute => {
                let mut flat = Vec::with_capacity(targets.len() * self.cfg.action_dim());
                for a in targets {
                    let c = a
                        .coords()
                        .ok_or_else(|| Error::InvalidAction(format!("regression target {a:?} is not continuous")))?;
                    flat.extend(c);
                }
                if kind == LossKind::Squared {
                    g.squared_error(picked, &flat)?
                } else {
                    g.absolute_error(picked, &flat)?
                }
            }
        };
        if !with_obs {
            return Ok(loss);
        }
        let Some(obs) = out.observation else {
            if self.ids.obs.is_none() {
                return Err(Error::Config("observation loss requested without an observation head".into()));
            }
            return Ok(loss);
        };
        let flat: Vec<f64> = tokens.observations.iter().flatten().copied().collect();
        let ol = g.squared_error(obs, &flat)?;
        g.add(loss, ol)
    }

    pub fn has_observation_head(&self) -> bool {
        self.ids.obs.is_some()
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut c = Checkpoint::new(serde_json::json!({
            "format": CHECKPOINT_FORMAT,
            "config": self.cfg,
        }));
        c.push_store(&self.store);
        Ok(c)
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        if c.meta.get("format").and_then(|f| f.as_str()) != Some(CHECKPOINT_FORMAT) {
            return Err(Error::Format("checkpoint was not written by this model".into()));
        }
        let cfg: ModelConfig = serde_json::from_value(
            c.meta
                .get("config")
                .cloned()
                .ok_or_else(|| Error::Format("checkpoint has no model config".into()))?,
        )?;
        let mut model = OmgptModel::new(cfg, &mut RngStream::new(0, 0))?;
        c.restore_store(&mut model.store)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|x| (x - mx).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// The model as a test-time policy.
#[derive(Debug, Clone)]
pub struct ModelPolicy {
    model: std::sync::Arc<OmgptModel>,
    space: ActionSpace,
    name: String,
}

impl ModelPolicy {
    pub fn new(model: std::sync::Arc<OmgptModel>, space: ActionSpace) -> Self {
        Self {
            model,
            space,
            name: "TF".into(),
        }
    }

    pub fn with_name(mut self, name: &str) -> Self {
        self.name = name.to_string();
        self
    }
}

impl PolicyHandle for ModelPolicy {
    fn name(&self) -> &str {
        &self.name
    }

    fn act(&mut self, h: &History, rng: &mut RngStream) -> Result<Action> {
        self.model.predict_action(h, &self.space, rng)
    }

    fn reset(&mut self) {}
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Context, Observation};
    use crate::nn::check_gradients;
    use proptest::prelude::*;

    fn tiny(kind: OutputKind, obs_head: bool) -> ModelConfig {
        let (ctx, obs) = match kind {
            OutputKind::Distribution { .. } => (0, 1),
            _ => (2, 2),
        };
        ModelConfig {
            n_layers: 2,
            n_heads: 2,
            embed_dim: 8,
            window: 4,
            observation_dim: obs,
            context_dim: ctx,
            output_kind: kind,
            observation_head: obs_head,
            dropout_p: 0.0,
            sample_actions: false,
            feature_scale: 1.0,
            action_offset: 0.0,
            action_scale: 1.0,
        }
    }

    fn mab_history(actions: &[usize]) -> History {
        let mut h = History::new(Context::empty());
        for (i, &a) in actions.iter().enumerate() {
            h.push(Action::Index(a), Observation(vec![0.1 * i as f64 - 0.3]), Context::empty()).unwrap();
        }
        h
    }

    fn pricing_history(t: usize, rng: &mut RngStream) -> History {
        let ctx = |rng: &mut RngStream| Context(vec![rng.uniform_range(0.0, 2.5), rng.uniform_range(0.0, 2.5)]);
        let mut h = History::new(ctx(rng));
        for _ in 1..t {
            let a = rng.uniform_range(0.0, 3.0);
            let d = rng.normal(1.0, 0.5);
            h.push(Action::Scalar(a), Observation(vec![a * d, d]), ctx(rng)).unwrap();
        }
        h
    }

    /// Randomize every parameter so the zero-initialized heads do not hide
    /// gradient paths.
    fn jitter(m: &mut OmgptModel, seed: u64) {
        let mut rng = RngStream::new(seed, 77);
        let ids: Vec<_> = m.params().iter().map(|(id, _)| id).collect();
        for id in ids {
            for v in m.params_mut().value_mut(id).data.iter_mut() {
                *v += rng.normal(0.0, 0.3);
            }
        }
    }

    #[test]
    fn token_counts_follow_two_t_minus_one() {
        let cfg = tiny(OutputKind::Distribution { arms: 3 }, false);
        let t1 = tokenize(&mab_history(&[]), &cfg).unwrap();
        assert_eq!(t1.len(), 1);
        assert_eq!(t1.features[0], vec![0.0]);
        let t3 = tokenize(&mab_history(&[0, 2]), &cfg).unwrap();
        assert_eq!(t3.len(), 5);
        assert_eq!(
            t3.kinds(),
            vec![TokenKind::Feature, TokenKind::Action, TokenKind::Feature, TokenKind::Action, TokenKind::Feature]
        );
        assert_eq!(t3.actions[1], vec![0.0, 0.0, 1.0]);
        // feature tokens carry the previous observation
        assert_eq!(t3.features[1], vec![-0.3]);
        let long = tokenize(&mab_history(&[0, 1, 2, 0, 1, 2, 0]), &cfg).unwrap();
        assert_eq!(long.len(), 2 * cfg.window - 1);
    }

    #[test]
    fn window_keeps_the_latest_timesteps() {
        let mut cfg = tiny(OutputKind::Distribution { arms: 3 }, false);
        cfg.window = 2;
        let h = mab_history(&[0, 1, 2, 1]);
        let toks = tokenize(&h, &cfg).unwrap();
        // timesteps 4 and 5: step 4 and the current context
        assert_eq!(toks.actions, vec![vec![0.0, 1.0, 0.0]]);
        assert_eq!(toks.features[0], vec![0.0]);
        assert_eq!(toks.features[1], vec![h.steps()[3].observation.0[0]]);
    }

    #[test]
    fn wrong_shapes_are_rejected() {
        let cfg = tiny(OutputKind::Scalar, false);
        let h = History::new(Context(vec![1.0]));
        assert!(matches!(tokenize(&h, &cfg), Err(Error::InvalidShape(_))));
        let mut bad = cfg.clone();
        bad.embed_dim = 9;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_heads_give_uniform_logits() {
        let cfg = tiny(OutputKind::Distribution { arms: 5 }, false);
        let m = OmgptModel::new(cfg, &mut RngStream::new(1, 0)).unwrap();
        let h = mab_history(&[1, 3, 0]);
        assert_eq!(m.raw_output(&h).unwrap(), vec![0.0; 5]);
        let tokens = m.tokenize(&h).unwrap();
        let mut g = Graph::new();
        let targets = vec![Action::Index(2); 4];
        let l = m
            .sequence_loss(m.params(), &mut g, &tokens, &[0, 1, 2, 3], &targets, LossKind::CrossEntropy, false, false, &mut RngStream::new(0, 0))
            .unwrap();
        assert!((g.value(l).data[0] - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn single_token_attends_to_itself() {
        let mut m = OmgptModel::new(tiny(OutputKind::Distribution { arms: 2 }, false), &mut RngStream::new(2, 0)).unwrap();
        jitter(&mut m, 2);
        // with one token the attention output is the value row, whatever the scores
        let h = mab_history(&[]);
        let a = m.raw_output(&h).unwrap();
        assert!(a.iter().all(|v| v.is_finite()));
        let toks = m.tokenize(&h).unwrap();
        assert_eq!(toks.len(), 1);
    }

    #[test]
    fn window_overflow_is_an_error() {
        let m = OmgptModel::new(tiny(OutputKind::Distribution { arms: 2 }, false), &mut RngStream::new(2, 0)).unwrap();
        let toks = Tokens {
            features: vec![vec![0.0]; 5],
            actions: vec![vec![1.0, 0.0]; 4],
            observations: vec![vec![0.0]; 4],
        };
        let mut g = Graph::new();
        let r = m.forward(&mut g, &toks, false, &mut RngStream::new(0, 0));
        assert!(matches!(r, Err(Error::WindowExceeded { tokens: 9, limit: 7 })));
    }

    #[test]
    fn full_pass_matches_prefix_passes() {
        let mut rng = RngStream::new(5, 5);
        let mut m = OmgptModel::new(tiny(OutputKind::Scalar, false), &mut rng).unwrap();
        jitter(&mut m, 5);
        let h = pricing_history(4, &mut rng);
        let toks = m.tokenize(&h).unwrap();
        let mut g = Graph::new();
        let out = m.forward(&mut g, &toks, false, &mut rng).unwrap();
        let full = g.value(out.action).clone();
        for t in 1..=4 {
            let prefix = History::from_parts(h.steps()[..t - 1].to_vec(), if t == 4 {
                h.current_context().clone()
            } else {
                h.steps()[t - 1].context.clone()
            })
            .unwrap();
            let v = m.raw_output(&prefix).unwrap();
            assert!((v[0] - full.get(t - 1, 0)).abs() < 1e-10);
        }
    }

    #[test]
    fn scalar_predictions_are_projected() {
        let mut cfg = tiny(OutputKind::Scalar, false);
        cfg.action_offset = 42.0;
        let m = OmgptModel::new(cfg, &mut RngStream::new(3, 0)).unwrap();
        let h = History::new(Context(vec![1.0, 1.0]));
        assert_eq!(m.raw_output(&h).unwrap(), vec![42.0]);
        let a = m.predict_action(&h, &ActionSpace::interval(0.0, 30.0), &mut RngStream::new(0, 0)).unwrap();
        assert_eq!(a, Action::Scalar(30.0));
    }

    fn set_head_bias(m: &mut OmgptModel, bias: &[f64]) {
        let id = m.params().id("head.action.b").unwrap();
        m.params_mut().value_mut(id).data.copy_from_slice(bias);
    }

    #[test]
    fn argmax_and_sampling_heads() {
        let mut m = OmgptModel::new(tiny(OutputKind::Distribution { arms: 3 }, false), &mut RngStream::new(3, 0)).unwrap();
        set_head_bias(&mut m, &[0.0, 5.0, 0.0]);
        let h = mab_history(&[0]);
        let space = ActionSpace::Discrete { count: 3 };
        assert_eq!(m.predict_action(&h, &space, &mut RngStream::new(0, 0)).unwrap(), Action::Index(1));
        let mut cfg = tiny(OutputKind::Distribution { arms: 2 }, false);
        cfg.sample_actions = true;
        let m = OmgptModel::new(cfg, &mut RngStream::new(3, 0)).unwrap();
        let mut rng = RngStream::new(9, 9);
        let n = 100_000;
        let ones = (0..n)
            .filter(|_| m.predict_action(&mab_history(&[]), &ActionSpace::Discrete { count: 2 }, &mut rng).unwrap() == Action::Index(1))
            .count();
        let p = ones as f64 / n as f64;
        assert!((p - 0.5).abs() < 3.0 * (0.25 / n as f64).sqrt());
    }

    #[test]
    fn embeddings_feed_the_head() {
        let mut rng = RngStream::new(8, 1);
        let mut m = OmgptModel::new(tiny(OutputKind::Scalar, false), &mut rng).unwrap();
        jitter(&mut m, 8);
        let h = pricing_history(3, &mut rng);
        let last = m.extract_embeddings(&h, 2).unwrap();
        let via_head = m.apply_action_head(&last).unwrap();
        assert!((via_head[0] - m.raw_output(&h).unwrap()[0]).abs() < 1e-12);
        // layer 0 = feature embedding of the final token plus its position
        let e0 = m.extract_embeddings(&h, 0).unwrap();
        let toks = m.tokenize(&h).unwrap();
        let f = toks.features.last().unwrap();
        let s = m.params();
        let (w, b, p) = (
            s.value(s.id("embed.feature.w").unwrap()),
            s.value(s.id("embed.feature.b").unwrap()),
            s.value(s.id("embed.position").unwrap()),
        );
        let pos = toks.len() - 1;
        for j in 0..8 {
            let want = (0..f.len()).map(|i| f[i] * w.get(i, j)).sum::<f64>() + b.data[j] + p.get(pos, j);
            assert!((e0[j] - want).abs() < 1e-12);
        }
        assert!(matches!(m.extract_embeddings(&h, 3), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn identical_windows_give_identical_embeddings() {
        let mut cfg = tiny(OutputKind::Distribution { arms: 3 }, false);
        cfg.window = 2;
        let m = OmgptModel::new(cfg, &mut RngStream::new(4, 0)).unwrap();
        let a = mab_history(&[0, 2, 1, 1]);
        let b = mab_history(&[2, 0, 1, 1]);
        assert_eq!(a.steps()[3], b.steps()[3]);
        assert_eq!(m.extract_embeddings(&a, 2).unwrap(), m.extract_embeddings(&b, 2).unwrap());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut rng = RngStream::new(6, 0);
        let mut m = OmgptModel::new(tiny(OutputKind::Scalar, true), &mut rng).unwrap();
        jitter(&mut m, 6);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        m.save(&path).unwrap();
        let back = OmgptModel::load(&path).unwrap();
        assert_eq!(back.config(), m.config());
        assert_eq!(back.params(), m.params());
        let h = pricing_history(3, &mut rng);
        assert_eq!(back.raw_output(&h).unwrap(), m.raw_output(&h).unwrap());
    }

    #[test]
    fn parameter_layout_depends_only_on_config() {
        let cfg = tiny(OutputKind::Vector { dim: 2 }, true);
        let a = OmgptModel::new(cfg.clone(), &mut RngStream::new(1, 0)).unwrap();
        let b = OmgptModel::new(cfg, &mut RngStream::new(2, 0)).unwrap();
        let names = |m: &OmgptModel| m.params().iter().map(|(_, p)| (p.name.clone(), p.value.shape.clone())).collect::<Vec<_>>();
        assert_eq!(names(&a), names(&b));
    }

    #[test]
    fn observation_loss_requires_the_head() {
        let m = OmgptModel::new(tiny(OutputKind::Scalar, false), &mut RngStream::new(1, 0)).unwrap();
        let h = pricing_history(3, &mut RngStream::new(1, 1));
        let toks = m.tokenize(&h).unwrap();
        let mut g = Graph::new();
        let r = m.sequence_loss(m.params(), &mut g, &toks, &[2], &[Action::Scalar(1.0)], LossKind::Squared, true, false, &mut RngStream::new(0, 0));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn model_gradients_match_finite_differences() {
        for seed in 0..3 {
            let mut rng = RngStream::new(seed, 3);
            let mut m = OmgptModel::new(tiny(OutputKind::Scalar, true), &mut rng).unwrap();
            jitter(&mut m, seed);
            let h = pricing_history(4, &mut rng);
            let toks = m.tokenize(&h).unwrap();
            let targets: Vec<Action> = (0..4).map(|i| Action::Scalar(0.5 * i as f64)).collect();
            let r = check_gradients(
                m.params(),
                |s| {
                    let mut g = Graph::new();
                    let l = m.sequence_loss(s, &mut g, &toks, &[0, 1, 2, 3], &targets, LossKind::Squared, true, false, &mut RngStream::new(0, 0))?;
                    Ok((g, l))
                },
                1e-4,
                1e-6,
                1e-3,
                Some(12),
            )
            .unwrap();
            assert!(r.passed(), "{r:?}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn future_tokens_do_not_change_past_outputs(seed in 0u64..1000, t in 2usize..5) {
            let mut rng = RngStream::new(seed, 1);
            let mut m = OmgptModel::new(tiny(OutputKind::Scalar, false), &mut rng).unwrap();
            jitter(&mut m, seed);
            let h = pricing_history(t, &mut rng);
            let toks = m.tokenize(&h).unwrap();
            let mut altered = toks.clone();
            let last = altered.features.len() - 1;
            altered.features[last] = vec![9.0; 4];
            altered.actions[last - 1] = vec![-7.0];
            let run = |tk: &Tokens| {
                let mut g = Graph::new();
                let out = m.forward(&mut g, tk, false, &mut RngStream::new(0, 0)).unwrap();
                g.value(out.action).clone()
            };
            let (a, b) = (run(&toks), run(&altered));
            for i in 0..last {
                prop_assert_eq!(a.get(i, 0), b.get(i, 0));
            }
        }
    }

    #[test]
    fn swapping_past_steps_changes_outputs() {
        let mut changed = 0;
        for seed in 0..10 {
            let mut rng = RngStream::new(seed, 2);
            let mut m = OmgptModel::new(tiny(OutputKind::Scalar, false), &mut rng).unwrap();
            jitter(&mut m, seed);
            let h = pricing_history(3, &mut rng);
            let mut steps = h.steps().to_vec();
            steps.swap(0, 1);
            let swapped = History::from_parts(steps, h.current_context().clone()).unwrap();
            if m.raw_output(&h).unwrap() != m.raw_output(&swapped).unwrap() {
                changed += 1;
            }
        }
        assert!(changed > 0);
    }
}
