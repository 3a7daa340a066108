//! Command-line front end: the run configuration file, the subcommands and
//! their exit codes.
//!
//! A run configuration is a TOML file:
//!
//! ```toml
//! seed = 7
//! out = "runs/mab"
//!
//! [task]
//! family = "mab"          # mab | linear_bandit | pricing | newsvendor | queue | revenue_management
//! arms = 20
//!
//! [prior]
//! horizon = 20
//! pool_size = 4           # finite pool drawn from the task prior; omit for the continuous prior
//! # pool_file = "pool.json"
//!
//! [model]                 # optional overrides of the task's desk model
//! n_layers = 4
//!
//! [train]                 # any training key except horizon and seed
//! iterations = 200
//!
//! [eval]
//! runs = 50
//! policies = ["oracle", "alg_star", "ucb", "ts", "tf"]
//!
//! [probe]
//! episodes = 200
//! ```
//!
//! `OMGPT_SEED` and `OMGPT_OUT` override `seed` and `out`; command-line
//! flags override both.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::baselines::{Ada, Cils, Erm, Fai, Ilse, LinTs, LinUcb, RandomRate, ThompsonMab, TsPricing, Ucb};
use crate::dataset::{write_dataset, DatasetHeader};
use crate::domain::{Action, ActionSpace};
use crate::envs::{load_pool, EnvParams, PriorSpec, TaskFamily, TaskSpec};
use crate::error::{Error, Result};
use crate::eval::{compare, linear_probe, min_max_normalize, write_report_csv, write_runs_csv, OraclePolicy, PolicyFactory, PolicyHandle};
use crate::model::{ModelConfig, ModelPolicy, OmgptModel};
use crate::nn::Checkpoint;
use crate::oracle::{alg_star, AlgStar, LossKind, Posterior, PosteriorMode};
use crate::repro;
use crate::rng::{labels, RngStream};
use crate::train::{
    alg_star_agreement, generate_pool, pretrain, sample_trajectory, write_loss_csv, Generator, LossRecord,
    TrainConfig, TrainState, TrainingData,
};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

pub const ENV_SEED: &str = "OMGPT_SEED";
pub const ENV_OUT: &str = "OMGPT_OUT";

pub const BUNDLES: [&str; 3] = ["prop4-linear-regret", "alg-star-match", "mab-4env"];

#[derive(Debug, Parser)]
#[command(name = "omgpt", version, about = "Pre-train, evaluate and probe decision transformers on operations tasks")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// Run configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Threads for data generation, gradients and evaluation.
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Model checkpoint to evaluate, probe or resume from.
    #[arg(long, global = true, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Write the behavior-policy pre-training pool as a dataset file.
    GenData,
    /// Pre-train a model and write its checkpoint and loss trace.
    Train,
    /// Compare the model, Alg* and baselines by regret.
    Eval,
    /// Fit linear probes on each layer's embeddings.
    Probe,
    /// Write one of the canned reproduction bundles.
    Repro { name: String },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    out: Option<PathBuf>,
    task: TaskSpec,
    prior: PriorSection,
    #[serde(default)]
    model: ModelSection,
    #[serde(default)]
    train: toml::Table,
    #[serde(default)]
    eval: EvalSection,
    #[serde(default)]
    probe: ProbeConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct PriorSection {
    horizon: usize,
    #[serde(default)]
    pool_size: Option<usize>,
    #[serde(default)]
    pool_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub n_layers: Option<usize>,
    pub n_heads: Option<usize>,
    pub embed_dim: Option<usize>,
    pub window: Option<usize>,
    pub observation_head: Option<bool>,
    pub sample_actions: Option<bool>,
}

impl ModelSection {
    pub fn apply(&self, cfg: &mut ModelConfig) {
        if let Some(v) = self.n_layers {
            cfg.n_layers = v;
        }
        if let Some(v) = self.n_heads {
            cfg.n_heads = v;
        }
        if let Some(v) = self.embed_dim {
            cfg.embed_dim = v;
        }
        if let Some(v) = self.window {
            cfg.window = v;
        }
        if let Some(v) = self.observation_head {
            cfg.observation_head = v;
        }
        if let Some(v) = self.sample_actions {
            cfg.sample_actions = v;
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalSection {
    runs: Option<usize>,
    horizon: Option<usize>,
    policies: Option<Vec<String>>,
    alg_star_mode: Option<PosteriorMode>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub runs: usize,
    pub horizon: usize,
    /// `None` selects the family defaults.
    pub policies: Option<Vec<String>>,
    pub alg_star_mode: PosteriorMode,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub episodes: usize,
    pub ridge: f64,
    /// Share of episodes held out to score the probes.
    pub holdout_fraction: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            episodes: 200,
            ridge: 1e-3,
            holdout_fraction: 0.25,
        }
    }
}

/// Fully resolved and validated run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub prior: PriorSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub probe: ProbeConfig,
}

fn config_err(m: impl Into<String>) -> Error {
    Error::Config(m.into())
}

impl RunConfig {
    /// Parse and validate a TOML run configuration. Relative pool files are
    /// resolved against `base`.
    pub fn from_toml(text: &str, base: &Path, seed: Option<u64>) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| config_err(format!("invalid run configuration: {e}")))?;
        let seed = seed.unwrap_or(raw.seed);
        raw.task.validate()?;
        let p = &raw.prior;
        let prior = match (p.pool_size, &p.pool_file) {
            (Some(_), Some(_)) => return Err(config_err("set at most one of prior.pool_size and prior.pool_file")),
            (Some(n), None) => {
                PriorSpec::sampled_pool(raw.task.clone(), p.horizon, n, &mut RngStream::new(seed, 0).derive(labels::ENV))?
            }
            (None, Some(path)) => PriorSpec::finite(raw.task.clone(), p.horizon, load_pool(&base.join(path))?)?,
            (None, None) => PriorSpec::continuous(raw.task.clone(), p.horizon),
        };
        let mut model = ModelConfig::for_task(&raw.task);
        raw.model.apply(&mut model);
        let mut table = raw.train.clone();
        for key in ["horizon", "seed"] {
            if table.contains_key(key) {
                return Err(config_err(format!("train.{key} is taken from the top level; remove it")));
            }
        }
        table.insert("horizon".into(), toml::Value::Integer(p.horizon as i64));
        table.insert("seed".into(), toml::Value::Integer(seed as i64));
        let train: TrainConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e| config_err(format!("invalid [train] section: {e}")))?;
        let fam = raw.task.family();
        let eval = EvalConfig {
            runs: raw.eval.runs.unwrap_or(20),
            horizon: raw.eval.horizon.unwrap_or(p.horizon),
            policies: raw.eval.policies.clone(),
            alg_star_mode: raw.eval.alg_star_mode.unwrap_or(LossKind::for_family(fam).matching_mode()),
        };
        let cfg = RunConfig {
            seed,
            out: raw.out.clone().unwrap_or_else(|| PathBuf::from("out")),
            prior,
            model,
            train,
            eval,
            probe: raw.probe.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, seed: Option<u64>) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")), seed)
    }

    /// Cross-field checks; nothing is computed before these pass.
    pub fn validate(&self) -> Result<()> {
        self.prior.validate()?;
        self.model.validate()?;
        self.model.check_task(&self.prior.task)?;
        self.train.validate()?;
        if self.train.horizon != self.prior.horizon {
            return Err(config_err("training horizon must equal the prior horizon"));
        }
        if self.eval.runs == 0 || self.eval.horizon == 0 || self.eval.horizon > self.prior.horizon {
            return Err(config_err(format!(
                "eval needs runs >= 1 and 1 <= horizon <= {}",
                self.prior.horizon
            )));
        }
        if let Some(ps) = &self.eval.policies {
            if ps.is_empty() {
                return Err(config_err("eval.policies is empty"));
            }
            for p in ps {
                check_policy(p, &self.prior)?;
            }
        }
        if self.probe.episodes < 4 || !(self.probe.holdout_fraction > 0.0 && self.probe.holdout_fraction < 1.0) {
            return Err(config_err("probe needs at least 4 episodes and a holdout fraction in (0, 1)"));
        }
        if !(self.probe.ridge >= 0.0) {
            return Err(config_err("probe.ridge must be non-negative"));
        }
        Ok(())
    }

    pub fn loss_kind(&self) -> LossKind {
        self.train.loss_for(&self.prior)
    }
}

/// Every policy name `eval.policies` accepts.
pub const POLICY_NAMES: [&str; 17] = [
    "oracle",
    "tf",
    "alg_star",
    "alg_star_averaging",
    "alg_star_sampling",
    "alg_star_median",
    "ucb",
    "ts",
    "linucb",
    "lints",
    "ilse",
    "cils",
    "ts_pricing",
    "erm",
    "fai",
    "ada",
    "random",
];

fn policy_family(name: &str) -> Option<TaskFamily> {
    Some(match name {
        "ucb" | "ts" => TaskFamily::Mab,
        "linucb" | "lints" => TaskFamily::LinearBandit,
        "ilse" | "cils" | "ts_pricing" => TaskFamily::Pricing,
        "erm" | "fai" => TaskFamily::Newsvendor,
        "ada" => TaskFamily::RevenueManagement,
        "random" => TaskFamily::Queue,
        _ => return None,
    })
}

fn check_policy(name: &str, prior: &PriorSpec) -> Result<()> {
    if !POLICY_NAMES.contains(&name) {
        return Err(config_err(format!("unknown policy {name}; expected one of {}", POLICY_NAMES.join(", "))));
    }
    let fam = prior.task.family();
    if let Some(f) = policy_family(name) {
        if f != fam {
            return Err(config_err(format!("policy {name} does not apply to {}", fam.name())));
        }
    }
    if name.starts_with("alg_star") && prior.pool().is_none() {
        return Err(config_err(format!("policy {name} needs a finite prior pool")));
    }
    Ok(())
}

/// Oracle, the family's baselines, Alg* when the pool is finite and the
/// model when one is given.
pub fn default_policies(prior: &PriorSpec, with_model: bool) -> Vec<String> {
    let fam = prior.task.family();
    let mut v = vec!["oracle".to_string()];
    v.extend(
        POLICY_NAMES
            .iter()
            .filter(|n| policy_family(n) == Some(fam))
            .map(|n| n.to_string()),
    );
    if prior.pool().is_some() {
        v.push("alg_star".into());
    }
    if with_model {
        v.push("tf".into());
    }
    v
}

fn mode_for(name: &str, default: PosteriorMode) -> PosteriorMode {
    match name {
        "alg_star_averaging" => PosteriorMode::Averaging,
        "alg_star_sampling" => PosteriorMode::Sampling,
        "alg_star_median" => PosteriorMode::Median,
        _ => default,
    }
}

fn boxed(p: Box<dyn PolicyHandle>) -> Result<Box<dyn PolicyHandle>> {
    Ok(p)
}

/// Build a policy factory by name for an evaluation of `horizon` steps.
pub fn policy_factory(
    name: &str,
    prior: &PriorSpec,
    horizon: usize,
    alg_mode: PosteriorMode,
    model: Option<Arc<OmgptModel>>,
) -> Result<PolicyFactory> {
    check_policy(name, prior)?;
    let task = prior.task.clone();
    Ok(match name {
        "oracle" => Box::new(move |params: &EnvParams| boxed(Box::new(OraclePolicy::new(params.clone(), horizon)))),
        "tf" => {
            let m = model.ok_or_else(|| config_err("policy tf needs --checkpoint"))?;
            m.config().check_task(&task)?;
            let space = task.action_space();
            Box::new(move |_: &EnvParams| boxed(Box::new(ModelPolicy::new(m.clone(), space.clone()))))
        }
        n if n.starts_with("alg_star") => {
            let pool = prior.pool().expect("checked above").to_vec();
            let mode = mode_for(n, alg_mode);
            AlgStar::new(pool.clone(), horizon, mode)?;
            Box::new(move |_: &EnvParams| boxed(Box::new(AlgStar::new(pool.clone(), horizon, mode)?)))
        }
        "ucb" | "ts" => {
            let arms = match task.action_space() {
                ActionSpace::Discrete { count } => count,
                _ => unreachable!("bandit tasks have discrete actions"),
            };
            if name == "ucb" {
                Box::new(move |_: &EnvParams| boxed(Box::new(Ucb::new(arms, horizon))))
            } else {
                Box::new(move |_: &EnvParams| boxed(Box::new(ThompsonMab::new(arms, horizon))))
            }
        }
        "linucb" | "lints" => {
            let dim = task.action_space().encoding_dim();
            if name == "linucb" {
                Box::new(move |_: &EnvParams| boxed(Box::new(LinUcb { dim, horizon })))
            } else {
                Box::new(move |_: &EnvParams| boxed(Box::new(LinTs { dim, horizon })))
            }
        }
        "ilse" => Box::new(|_: &EnvParams| boxed(Box::new(Ilse))),
        "cils" => Box::new(|_: &EnvParams| boxed(Box::new(Cils))),
        "ts_pricing" => Box::new(|_: &EnvParams| boxed(Box::new(TsPricing))),
        "erm" | "fai" => {
            let fai = name == "fai";
            Box::new(move |params: &EnvParams| match params {
                EnvParams::Newsvendor(p) if fai => boxed(Box::new(Fai::new(p.perishable, p.lost_sale_cost))),
                EnvParams::Newsvendor(p) => boxed(Box::new(Erm::new(p.perishable))),
                _ => Err(Error::UnsupportedMode("inventory baselines need a newsvendor".into())),
            })
        }
        "ada" => Box::new(move |params: &EnvParams| match params {
            EnvParams::RevenueManagement(p) => boxed(Box::new(Ada::new(p, horizon))),
            _ => Err(Error::UnsupportedMode("Ada needs a revenue-management environment".into())),
        }),
        "random" => Box::new(|_: &EnvParams| boxed(Box::new(RandomRate))),
        _ => unreachable!("names are checked above"),
    })
}

/// Seed and output directory after applying environment overrides; flags
/// win over both.
fn overrides(args: &GlobalArgs) -> Result<(Option<u64>, Option<PathBuf>)> {
    let seed = match args.seed {
        Some(s) => Some(s),
        None => match std::env::var(ENV_SEED) {
            Ok(v) => Some(
                v.trim()
                    .parse()
                    .map_err(|_| config_err(format!("{ENV_SEED}={v} is not an unsigned integer")))?,
            ),
            Err(_) => None,
        },
    };
    let out = args.out.clone().or_else(|| std::env::var_os(ENV_OUT).map(PathBuf::from));
    Ok((seed, out))
}

fn load_config(args: &GlobalArgs) -> Result<RunConfig> {
    let (seed, out) = overrides(args)?;
    let path = args
        .config
        .as_ref()
        .ok_or_else(|| config_err("this command needs --config PATH"))?;
    let mut cfg = RunConfig::load(path, seed)?;
    if let Some(o) = out {
        cfg.out = o;
    }
    Ok(cfg)
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn writer(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn load_model(path: &Path, prior: &PriorSpec) -> Result<OmgptModel> {
    let m = OmgptModel::load(path)?;
    m.config().check_task(&prior.task)?;
    Ok(m)
}

fn fresh_model(cfg: &RunConfig) -> Result<OmgptModel> {
    OmgptModel::new(cfg.model.clone(), &mut RngStream::new(cfg.seed, labels::INIT))
}

pub fn cmd_gen_data(cfg: &RunConfig) -> Result<PathBuf> {
    let samples = TrainingData::behavior_pool(&cfg.prior, &cfg.train)?;
    create_out(&cfg.out)?;
    let path = cfg.out.join("dataset.jsonl");
    let header = DatasetHeader::new(&cfg.prior.task, cfg.prior.horizon, &samples);
    let mut w = writer(&path)?;
    write_dataset(&mut w, &header, &samples)?;
    w.flush()?;
    Ok(path)
}

/// Train (or resume) and write `model.ckpt`, `loss.csv` and periodic
/// `checkpoints/iter_NNNNNN.ckpt`.
pub fn cmd_train(cfg: &RunConfig, resume: Option<&Path>) -> Result<Vec<LossRecord>> {
    let mut state = match resume {
        Some(p) => {
            let st = TrainState::from_checkpoint(&Checkpoint::load(p)?)?;
            st.model.config().check_task(&cfg.prior.task)?;
            st
        }
        None => TrainState::new(fresh_model(cfg)?),
    };
    if cfg.train.observation_loss && !state.model.has_observation_head() {
        return Err(config_err("train.observation_loss needs model.observation_head = true"));
    }
    create_out(&cfg.out)?;
    let mut previous = Vec::new();
    let loss_path = cfg.out.join("loss.csv");
    if state.iteration > 0 && loss_path.exists() {
        previous = read_loss_csv(&loss_path)?
            .into_iter()
            .filter(|r| r.iteration <= state.iteration)
            .collect();
    }
    let data = TrainingData::generate(&cfg.prior, &cfg.train)?;
    let every = cfg.train.checkpoint_every;
    let ck_dir = cfg.out.join("checkpoints");
    let trace = pretrain(&cfg.prior, &cfg.train, &data, &mut state, &mut |st, rec| {
        if every > 0 && rec.iteration % every == 0 {
            fs::create_dir_all(&ck_dir)?;
            st.to_checkpoint()?.save(&ck_dir.join(format!("iter_{:06}.ckpt", rec.iteration)))?;
        }
        eprintln!("iteration {} train_loss {:.6}", rec.iteration, rec.train_loss);
        Ok(())
    })?;
    state.to_checkpoint()?.save(&cfg.out.join("model.ckpt"))?;
    previous.extend(trace.iter().cloned());
    let mut w = writer(&loss_path)?;
    write_loss_csv(&previous, &mut w, true)?;
    w.flush()?;
    Ok(trace)
}

/// Parse a loss trace written by [`write_loss_csv`].
pub fn read_loss_csv(path: &Path) -> Result<Vec<LossRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = Vec::new();
    for row in r.records() {
        let row = row.map_err(|e| Error::Format(e.to_string()))?;
        let num = |i: usize| -> Result<f64> {
            row.get(i)
                .unwrap_or("")
                .parse()
                .map_err(|_| Error::Format(format!("bad loss row {row:?}")))
        };
        let holdout = match row.get(2) {
            Some("") | None => None,
            Some(_) => Some(num(2)?),
        };
        out.push(LossRecord {
            iteration: num(0)? as usize,
            train_loss: num(1)?,
            holdout_loss: holdout,
        });
    }
    Ok(out)
}

/// Writes `eval_runs.csv` and `eval_report.csv`.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<crate::eval::ComparisonReport> {
    let model = match checkpoint {
        Some(p) => Some(Arc::new(load_model(p, &cfg.prior)?)),
        None => None,
    };
    let names = cfg
        .eval
        .policies
        .clone()
        .unwrap_or_else(|| default_policies(&cfg.prior, model.is_some()));
    let factories = names
        .iter()
        .map(|n| policy_factory(n, &cfg.prior, cfg.eval.horizon, cfg.eval.alg_star_mode, model.clone()))
        .collect::<Result<Vec<_>>>()?;
    let report = compare(&factories, &cfg.prior, cfg.eval.runs, cfg.eval.horizon, &RngStream::new(cfg.seed, 1))?;
    create_out(&cfg.out)?;
    let mut w = writer(&cfg.out.join("eval_runs.csv"))?;
    write_runs_csv(&report, &mut w)?;
    w.flush()?;
    let mut w = writer(&cfg.out.join("eval_report.csv"))?;
    write_report_csv(&report, &mut w)?;
    w.flush()?;
    Ok(report)
}

/// Probe targets for one environment: the first coordinate of its main
/// parameter vector, and its demand type where the family has one.
fn env_targets(params: &EnvParams) -> (f64, Option<f64>) {
    use crate::envs::DemandKind;
    let kind = |k: DemandKind| Some(if k == DemandKind::Square { 1.0 } else { 0.0 });
    match params {
        EnvParams::Mab(p) => (p.means[0], None),
        EnvParams::LinearBandit(p) => (p.w[0], None),
        EnvParams::Pricing(p) => (p.alpha[0], kind(p.demand)),
        EnvParams::Newsvendor(p) => (p.w[0], kind(p.demand)),
        EnvParams::Queue(p) => (p.arrival_rate, None),
        EnvParams::RevenueManagement(p) => (p.arrival_probs[0], None),
    }
}

fn action_target(a: &Action) -> f64 {
    match a {
        Action::Index(i) => *i as f64,
        other => other.coords().and_then(|c| c.first().copied()).unwrap_or(f64::NAN),
    }
}

/// Per-layer probe errors.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub targets: Vec<String>,
    /// `errors[layer][target]`, held-out mean squared error.
    pub errors: Vec<Vec<f64>>,
    /// Errors min-max normalized across layers, per target.
    pub normalized: Vec<Vec<f64>>,
}

pub fn probe_model(model: &OmgptModel, prior: &PriorSpec, probe: &ProbeConfig, seed: u64) -> Result<ProbeReport> {
    let root = RngStream::new(seed, 2);
    let steps = prior.horizon;
    let layers = model.config().n_layers + 1;
    let mut feats: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(probe.episodes); layers];
    let mut params_t = Vec::new();
    let mut demand_t = Vec::new();
    let mut action_t = Vec::new();
    for i in 0..probe.episodes {
        let (params, s) = sample_trajectory(prior, Generator::Behavior, steps, &root.derive(i as u64))?;
        let h = s.history_at(steps);
        for (l, f) in feats.iter_mut().enumerate() {
            f.push(model.extract_embeddings(&h, l)?);
        }
        let (p, d) = env_targets(&params);
        params_t.push(p);
        if let Some(d) = d {
            demand_t.push(d);
        }
        action_t.push(action_target(&s.targets[steps - 1]));
    }
    let mut targets = vec![("optimal_action", action_t), ("parameter", params_t)];
    if demand_t.len() == probe.episodes {
        targets.push(("demand_type", demand_t));
    }
    let n_test = ((probe.episodes as f64 * probe.holdout_fraction).round() as usize).clamp(1, probe.episodes - 2);
    let n_train = probe.episodes - n_test;
    let mut errors = vec![vec![0.0; targets.len()]; layers];
    for (l, f) in feats.iter().enumerate() {
        for (k, (_, y)) in targets.iter().enumerate() {
            let fit = linear_probe(&f[..n_train], &y[..n_train], &f[n_train..], &y[n_train..], probe.ridge)?;
            errors[l][k] = fit.mse;
        }
    }
    let mut normalized = vec![vec![0.0; targets.len()]; layers];
    for k in 0..targets.len() {
        let col: Vec<f64> = errors.iter().map(|r| r[k]).collect();
        for (l, v) in min_max_normalize(&col).into_iter().enumerate() {
            normalized[l][k] = v;
        }
    }
    Ok(ProbeReport {
        targets: targets.into_iter().map(|(n, _)| n.to_string()).collect(),
        errors,
        normalized,
    })
}

/// `layer,<target>_mse,<target>_normalized,...` with one row per layer.
pub fn write_probe_csv<W: Write>(r: &ProbeReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Format(e.to_string());
    let mut head = vec!["layer".to_string()];
    for t in &r.targets {
        head.push(format!("{t}_mse"));
        head.push(format!("{t}_normalized"));
    }
    w.write_record(&head).map_err(err)?;
    for (l, (e, n)) in r.errors.iter().zip(&r.normalized).enumerate() {
        let mut row = vec![l.to_string()];
        for (a, b) in e.iter().zip(n) {
            row.push(a.to_string());
            row.push(b.to_string());
        }
        w.write_record(&row).map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `probe.csv`. Without a checkpoint the freshly initialized model
/// is probed.
pub fn cmd_probe(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<ProbeReport> {
    let model = match checkpoint {
        Some(p) => load_model(p, &cfg.prior)?,
        None => fresh_model(cfg)?,
    };
    let report = probe_model(&model, &cfg.prior, &cfg.probe, cfg.seed)?;
    create_out(&cfg.out)?;
    let mut w = writer(&cfg.out.join("probe.csv"))?;
    write_probe_csv(&report, &mut w)?;
    w.flush()?;
    Ok(report)
}

/// Canned configuration used by a training bundle when no `--config` is
/// given.
pub fn bundle_config(name: &str, seed: u64) -> Result<RunConfig> {
    let text = match name {
        "alg-star-match" => {
            "[task]\nfamily = \"pricing\"\ndim = 2\n\n[prior]\nhorizon = 20\npool_size = 4\n\n\
             [model]\nn_layers = 2\nn_heads = 2\nembed_dim = 32\n\n\
             [train]\niterations = 300\nearly_iterations = 150\nsequences_per_iteration = 32\nbatch_size = 32\n\
             lr = 1e-3\ndropout_p = 0.0\npool_size = 400\ncurriculum = \"off\"\n\n[eval]\nruns = 64\n"
        }
        "mab-4env" => {
            "[task]\nfamily = \"mab\"\narms = 20\n\n[prior]\nhorizon = 20\npool_size = 4\n\n\
             [model]\nn_layers = 2\nn_heads = 2\nembed_dim = 32\n\n\
             [train]\niterations = 300\nearly_iterations = 150\nsequences_per_iteration = 32\nbatch_size = 32\n\
             lr = 1e-3\ndropout_p = 0.0\npool_size = 800\ncurriculum = \"off\"\n\n\
             [eval]\nruns = 100\npolicies = [\"oracle\", \"alg_star_sampling\", \"ucb\", \"ts\", \"tf\"]\n"
        }
        _ => return Err(unknown_bundle(name)),
    };
    RunConfig::from_toml(text, Path::new("."), Some(seed))
}

fn unknown_bundle(name: &str) -> Error {
    config_err(format!("unknown bundle {name}; expected one of: {}", BUNDLES.join(", ")))
}

fn bundle_model(cfg: &RunConfig, checkpoint: Option<&Path>, dir: &Path) -> Result<OmgptModel> {
    if let Some(p) = checkpoint {
        return load_model(p, &cfg.prior);
    }
    let mut sub = cfg.clone();
    sub.out = dir.to_path_buf();
    cmd_train(&sub, None)?;
    OmgptModel::load(&dir.join("model.ckpt"))
}

/// Write bundle `name` into `out/<name>/` and return the files written.
pub fn cmd_repro(name: &str, cfg: Option<RunConfig>, seed: u64, out: &Path, checkpoint: Option<&Path>) -> Result<Vec<PathBuf>> {
    if !BUNDLES.contains(&name) {
        return Err(unknown_bundle(name));
    }
    let dir = out.join(name);
    create_out(&dir)?;
    match name {
        "prop4-linear-regret" => repro_prop4(seed, &dir),
        "alg-star-match" => {
            let cfg = match cfg {
                Some(c) => c,
                None => bundle_config(name, seed)?,
            };
            if cfg.prior.pool().is_none() || !cfg.prior.task.action_space().is_scalar() {
                return Err(config_err("alg-star-match needs a finite pool and scalar actions"));
            }
            let model = bundle_model(&cfg, checkpoint, &dir)?;
            repro_alg_star_match(&cfg, &model, &dir)
        }
        _ => {
            let cfg = match cfg {
                Some(c) => c,
                None => bundle_config(name, seed)?,
            };
            let model = bundle_model(&cfg, checkpoint, &dir)?;
            let mut c = cfg.clone();
            c.out = dir.clone();
            let trained = dir.join("model.ckpt");
            cmd_eval(&c, Some(checkpoint.unwrap_or(&trained)))?;
            let agr = alg_star_agreement(
                &model,
                cfg.prior.pool().ok_or_else(|| config_err("mab-4env needs a finite pool"))?,
                cfg.prior.horizon,
                &generate_pool(&cfg.prior, Generator::Behavior, 64, cfg.prior.horizon, &RngStream::new(cfg.seed, 3))?,
            );
            let mut files = vec![dir.join("eval_runs.csv"), dir.join("eval_report.csv")];
            if let Ok(agr) = agr {
                let path = dir.join("agreement.csv");
                let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Format(e.to_string()))?;
                w.write_record(["t", "matches", "episodes"]).map_err(|e| Error::Format(e.to_string()))?;
                for (t, (m, n)) in agr.matches.iter().zip(&agr.totals).enumerate() {
                    w.write_record([(t + 1).to_string(), m.to_string(), n.to_string()])
                        .map_err(|e| Error::Format(e.to_string()))?;
                }
                w.flush()?;
                files.push(path);
            }
            if checkpoint.is_none() {
                files.push(dir.join("loss.csv"));
                files.push(dir.join("model.ckpt"));
            }
            Ok(files)
        }
    }
}

fn repro_prop4(seed: u64, dir: &Path) -> Result<Vec<PathBuf>> {
    const T: usize = 100;
    let x = repro::pricing_pair_context();
    let cases = [
        ("linear_bandit", repro::linear_bandit_pair(), None),
        ("pricing", repro::pricing_pair(), Some(&x)),
    ];
    let path = dir.join("prop4_linear_regret.csv");
    let summary_path = dir.join("summary.csv");
    let err = |e: csv::Error| Error::Format(e.to_string());
    let mut w = csv::Writer::from_path(&path).map_err(err)?;
    let mut s = csv::Writer::from_path(&summary_path).map_err(err)?;
    w.write_record(["instance", "truth", "t", "weight_1", "weight_2", "gap", "cumulative_regret"])
        .map_err(err)?;
    s.write_record(["instance", "truth", "horizon", "cumulative_regret", "slope"]).map_err(err)?;
    for (k, (label, pool, ctx)) in cases.iter().enumerate() {
        for truth in 0..pool.len() {
            let rng = RngStream::new(seed, 3).derive2(k as u64, truth as u64);
            let tr = repro::alg_star_live(pool, truth, T, PosteriorMode::Averaging, *ctx, &rng)?;
            for t in 0..T {
                w.write_record([
                    label.to_string(),
                    (truth + 1).to_string(),
                    (t + 1).to_string(),
                    tr.weights[t][0].to_string(),
                    tr.weights[t][1].to_string(),
                    tr.gaps[t].to_string(),
                    tr.cumulative[t].to_string(),
                ])
                .map_err(err)?;
            }
            let total = tr.cumulative[T - 1];
            s.write_record([
                label.to_string(),
                (truth + 1).to_string(),
                T.to_string(),
                total.to_string(),
                (total / T as f64).to_string(),
            ])
            .map_err(err)?;
        }
    }
    w.flush()?;
    s.flush()?;
    Ok(vec![path, summary_path])
}

/// The model's actions along its own trajectories next to Alg*'s action on
/// the same histories, plus a 20-bin histogram of the differences.
fn repro_alg_star_match(cfg: &RunConfig, model: &OmgptModel, dir: &Path) -> Result<Vec<PathBuf>> {
    let pool = cfg.prior.pool().expect("checked by the caller").to_vec();
    let horizon = cfg.prior.horizon;
    let mode = cfg.eval.alg_star_mode;
    let episodes = generate_pool(&cfg.prior, Generator::Model(model), cfg.eval.runs, horizon, &RngStream::new(cfg.seed, 4))?;
    let err = |e: csv::Error| Error::Format(e.to_string());
    let path = dir.join("alg_star_match.csv");
    let mut w = csv::Writer::from_path(&path).map_err(err)?;
    w.write_record(["episode", "t", "tf_action", "alg_star_action", "difference"]).map_err(err)?;
    let mut diffs = Vec::new();
    let mut pick = RngStream::new(cfg.seed, 5);
    for (e, s) in episodes.iter().enumerate() {
        let mut post = Posterior::uniform(pool.clone(), horizon)?;
        for t in 1..=s.horizon() {
            if t > 1 {
                post.observe(&s.steps[t - 2])?;
            }
            let x = &s.steps[t - 1].context;
            let a_star = action_target(&alg_star(&post, x, mode, &mut pick)?);
            let a_tf = action_target(&s.steps[t - 1].action);
            diffs.push(a_tf - a_star);
            w.write_record([
                e.to_string(),
                t.to_string(),
                a_tf.to_string(),
                a_star.to_string(),
                (a_tf - a_star).to_string(),
            ])
            .map_err(err)?;
        }
    }
    w.flush()?;
    let hist_path = dir.join("histogram.csv");
    let mut h = csv::Writer::from_path(&hist_path).map_err(err)?;
    h.write_record(["bin_low", "bin_high", "count"]).map_err(err)?;
    let lo = diffs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = diffs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    const BINS: usize = 20;
    let width = if hi > lo { (hi - lo) / BINS as f64 } else { 1.0 };
    let mut counts = [0usize; BINS];
    for d in &diffs {
        counts[(((d - lo) / width) as usize).min(BINS - 1)] += 1;
    }
    for (b, c) in counts.iter().enumerate() {
        h.write_record([
            (lo + b as f64 * width).to_string(),
            (lo + (b + 1) as f64 * width).to_string(),
            c.to_string(),
        ])
        .map_err(err)?;
    }
    h.flush()?;
    let mut files = vec![path, hist_path];
    if dir.join("model.ckpt").exists() {
        files.push(dir.join("loss.csv"));
        files.push(dir.join("model.ckpt"));
    }
    Ok(files)
}

fn init_workers(n: Option<usize>) -> Result<()> {
    let Some(n) = n else { return Ok(()) };
    if n == 0 {
        return Err(config_err("--workers must be at least 1"));
    }
    #[cfg(feature = "parallel")]
    {
        // a pool that already exists (repeated in-process runs) is kept
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Execute parsed arguments.
pub fn execute(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    init_workers(g.workers)?;
    let ck = g.checkpoint.as_deref();
    match &cli.command {
        Command::GenData => {
            let cfg = load_config(g)?;
            let p = cmd_gen_data(&cfg)?;
            eprintln!("wrote {}", p.display());
        }
        Command::Train => {
            let cfg = load_config(g)?;
            cmd_train(&cfg, ck)?;
            eprintln!("wrote {}", cfg.out.join("model.ckpt").display());
        }
        Command::Eval => {
            let cfg = load_config(g)?;
            let r = cmd_eval(&cfg, ck)?;
            for c in &r.curves {
                eprintln!("{:>16}  final regret {:.4}", c.name, c.final_mean);
            }
        }
        Command::Probe => {
            let cfg = load_config(g)?;
            cmd_probe(&cfg, ck)?;
            eprintln!("wrote {}", cfg.out.join("probe.csv").display());
        }
        Command::Repro { name } => {
            if !BUNDLES.contains(&name.as_str()) {
                return Err(unknown_bundle(name));
            }
            let (seed, out) = overrides(g)?;
            let cfg = match &g.config {
                Some(_) => Some(load_config(g)?),
                None => None,
            };
            let seed = cfg.as_ref().map(|c| c.seed).or(seed).unwrap_or(0);
            let out = out.or_else(|| cfg.as_ref().map(|c| c.out.clone())).unwrap_or_else(|| PathBuf::from("out"));
            for f in cmd_repro(name, cfg, seed, &out, ck)? {
                eprintln!("wrote {}", f.display());
            }
        }
    }
    Ok(())
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

/// Parse `args` (program name first), run, and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::CurriculumMode;

    const MAB: &str = "seed = 3\n[task]\nfamily = \"mab\"\narms = 5\n[prior]\nhorizon = 6\npool_size = 2\n";

    #[test]
    fn parses_minimal_config() {
        let c = RunConfig::from_toml(MAB, Path::new("."), None).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.train.horizon, 6);
        assert_eq!(c.eval.horizon, 6);
        assert_eq!(c.prior.pool().unwrap().len(), 2);
        assert_eq!(c.eval.alg_star_mode, PosteriorMode::Sampling);
        let c = RunConfig::from_toml(MAB, Path::new("."), Some(9)).unwrap();
        assert_eq!(c.train.seed, 9);
    }

    #[test]
    fn rejects_inconsistent_configs() {
        let bad = [
            format!("{MAB}[train]\nhorizon = 4\n"),
            format!("{MAB}[train]\nbogus = 1\n"),
            format!("{MAB}[model]\nembed_dim = 30\nn_heads = 4\n"),
            format!("{MAB}[eval]\npolicies = [\"ilse\"]\n"),
            format!("{MAB}[eval]\nhorizon = 7\n"),
            "[task]\nfamily = \"mab\"\n[prior]\nhorizon = 5\n[eval]\npolicies = [\"alg_star\"]\n".to_string(),
            format!("{MAB}[train]\nkappa = 2.0\n"),
        ];
        for text in bad {
            let e = RunConfig::from_toml(&text, Path::new("."), None).unwrap_err();
            assert_eq!(exit_code(&e), EXIT_CONFIG, "{text}: {e}");
        }
    }

    #[test]
    fn default_policy_lists() {
        let c = RunConfig::from_toml(MAB, Path::new("."), None).unwrap();
        assert_eq!(default_policies(&c.prior, true), ["oracle", "ucb", "ts", "alg_star", "tf"]);
        let p = PriorSpec::continuous(TaskSpec::pricing(2), 5);
        assert_eq!(default_policies(&p, false), ["oracle", "ilse", "cils", "ts_pricing"]);
    }

    #[test]
    fn unknown_bundle_lists_names() {
        let e = cmd_repro("nope", None, 0, Path::new("/nonexistent"), None).unwrap_err();
        let msg = e.to_string();
        assert_eq!(exit_code(&e), EXIT_CONFIG);
        for b in BUNDLES {
            assert!(msg.contains(b));
        }
    }

    #[test]
    fn bundle_configs_validate() {
        for b in ["alg-star-match", "mab-4env"] {
            bundle_config(b, 1).unwrap();
        }
    }

    #[test]
    fn usage_errors_exit_with_config_code() {
        assert_eq!(run(["omgpt", "frobnicate"]), EXIT_CONFIG);
        assert_eq!(run(["omgpt", "train"]), EXIT_CONFIG);
        assert_eq!(run(["omgpt", "repro", "nope"]), EXIT_CONFIG);
    }

    #[test]
    fn probe_has_one_row_per_layer() {
        let c = RunConfig::from_toml(
            &format!("{MAB}[model]\nn_layers = 2\nembed_dim = 8\nn_heads = 2\n[probe]\nepisodes = 12\n"),
            Path::new("."),
            None,
        )
        .unwrap();
        let r = probe_model(&fresh_model(&c).unwrap(), &c.prior, &c.probe, c.seed).unwrap();
        assert_eq!(r.errors.len(), 3);
        assert_eq!(r.targets, ["optimal_action", "parameter"]);
        for k in 0..2 {
            let col: Vec<f64> = r.normalized.iter().map(|row| row[k]).collect();
            assert!(col.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let mut buf = Vec::new();
        write_probe_csv(&r, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 4);
    }

    #[test]
    fn curriculum_key_parses() {
        let c = RunConfig::from_toml(&format!("{MAB}[train]\ncurriculum = \"raw\"\n"), Path::new("."), None).unwrap();
        assert_eq!(c.train.curriculum, CurriculumMode::Raw);
    }
}
