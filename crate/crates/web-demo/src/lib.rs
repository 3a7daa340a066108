//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export returns a JSON string so the page needs no generated glue
//! beyond `wasm-bindgen`'s.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use omgpt::baselines::{ThompsonMab, Ucb};
use omgpt::envs::{PriorSpec, QueueParams, TaskSpec, QUEUE_MAX_LEN, QUEUE_RATES};
use omgpt::eval::{compare, OraclePolicy, PolicyFactory, PolicyHandle};
use omgpt::oracle::{AlgStar, PosteriorMode};
use omgpt::repro::{alg_star_live, linear_bandit_pair, pricing_pair, pricing_pair_context};
use omgpt::rng::{labels, RngStream};

fn to_js(e: omgpt::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn mode_from(name: &str) -> Result<PosteriorMode, JsValue> {
    match name {
        "averaging" => Ok(PosteriorMode::Averaging),
        "sampling" => Ok(PosteriorMode::Sampling),
        "median" => Ok(PosteriorMode::Median),
        other => Err(JsValue::from_str(&format!("unknown mode {other}"))),
    }
}

/// Live Alg* on one of the two-environment instances (`"linear"` or
/// `"pricing"`), against pool member `truth`.
pub fn two_env_trace_json(instance: &str, truth: usize, horizon: usize, mode: &str, seed: u64) -> Result<Value, JsValue> {
    let mode = mode_from(mode)?;
    let rng = RngStream::new(seed, 0);
    let x = pricing_pair_context();
    let tr = match instance {
        "linear" => alg_star_live(&linear_bandit_pair(), truth, horizon, mode, None, &rng),
        "pricing" => alg_star_live(&pricing_pair(), truth, horizon, mode, Some(&x), &rng),
        other => return Err(JsValue::from_str(&format!("unknown instance {other}"))),
    }
    .map_err(to_js)?;
    Ok(json!({
        "weights": tr.weights.iter().map(|w| w[truth]).collect::<Vec<_>>(),
        "cumulative": tr.cumulative,
    }))
}

#[wasm_bindgen]
pub fn two_env_trace(instance: &str, truth: usize, horizon: usize, mode: &str, seed: u64) -> Result<String, JsValue> {
    Ok(two_env_trace_json(instance, truth, horizon, mode, seed)?.to_string())
}

/// Mean cumulative regret of the oracle, Alg* (posterior sampling), UCB and
/// Thompson sampling on a finite pool of bandits.
pub fn bandit_comparison_json(arms: usize, pool_size: usize, horizon: usize, runs: usize, seed: u64) -> Result<Value, JsValue> {
    let task = TaskSpec::mab(arms);
    let prior = PriorSpec::sampled_pool(task, horizon, pool_size, &mut RngStream::new(seed, labels::ENV)).map_err(to_js)?;
    let pool = prior.pool().expect("finite pool").to_vec();
    let factories: Vec<PolicyFactory> = vec![
        Box::new(move |p| Ok(Box::new(OraclePolicy::new(p.clone(), horizon)) as Box<dyn PolicyHandle>)),
        Box::new(move |_| Ok(Box::new(AlgStar::new(pool.clone(), horizon, PosteriorMode::Sampling)?) as Box<dyn PolicyHandle>)),
        Box::new(move |_| Ok(Box::new(Ucb::new(arms, horizon)) as Box<dyn PolicyHandle>)),
        Box::new(move |_| Ok(Box::new(ThompsonMab::new(arms, horizon)) as Box<dyn PolicyHandle>)),
    ];
    let report = compare(&factories, &prior, runs, horizon, &RngStream::new(seed, 1)).map_err(to_js)?;
    Ok(json!({
        "curves": report.curves.iter().map(|c| json!({"name": c.name, "mean": c.mean})).collect::<Vec<_>>(),
    }))
}

#[wasm_bindgen]
pub fn bandit_comparison(arms: usize, pool_size: usize, horizon: usize, runs: usize, seed: u64) -> Result<String, JsValue> {
    Ok(bandit_comparison_json(arms, pool_size, horizon, runs, seed)?.to_string())
}

/// Optimal service rate for every queue length and number of periods left.
pub fn queue_policy_json(arrival_rate: f64, cost_coeff: f64, horizon: usize) -> Result<Value, JsValue> {
    let q = QueueParams { arrival_rate, cost_coeff };
    q.validate().map_err(to_js)?;
    let mut rates = Vec::with_capacity(horizon);
    for remaining in 1..=horizon {
        let row: Vec<f64> = (0..=QUEUE_MAX_LEN)
            .map(|len| {
                let qv = q.q_values(len, remaining);
                let mut best = 0;
                for k in 1..qv.len() {
                    if qv[k] > qv[best] + 1e-12 {
                        best = k;
                    }
                }
                QUEUE_RATES[best]
            })
            .collect();
        rates.push(row);
    }
    Ok(json!({ "rates": rates, "values": q.values(horizon) }))
}

#[wasm_bindgen]
pub fn queue_policy(arrival_rate: f64, cost_coeff: f64, horizon: usize) -> Result<String, JsValue> {
    Ok(queue_policy_json(arrival_rate, cost_coeff, horizon)?.to_string())
}
