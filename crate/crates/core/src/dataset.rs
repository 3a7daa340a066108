//! Line-delimited JSON datasets of pre-training records.
//!
//! The first line is a header declaring the task and its dimensions. Every
//! further line is one record `(seq, env_id, t, H_t, a*_t)` with the history
//! flattened into `contexts` (t rows), `actions` and `observations`
//! (t - 1 rows each).

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::domain::{Action, ActionSpace, Context, Observation, Step, TrajectorySample};
use crate::envs::TaskSpec;
use crate::error::{Error, Result};

pub const DATASET_FORMAT: &str = "omgpt-dataset-1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub family: String,
    pub task: TaskSpec,
    pub horizon: usize,
    pub context_dim: usize,
    pub observation_dim: usize,
    pub action_space: ActionSpace,
    pub sequences: usize,
    pub records: usize,
}

impl DatasetHeader {
    pub fn new(task: &TaskSpec, horizon: usize, samples: &[TrajectorySample]) -> Self {
        Self {
            format: DATASET_FORMAT.into(),
            family: task.family().name().into(),
            task: task.clone(),
            horizon,
            context_dim: task.context_dim(),
            observation_dim: task.observation_dim(),
            action_space: task.action_space(),
            sequences: samples.len(),
            records: samples.iter().map(TrajectorySample::horizon).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub seq: usize,
    pub env_id: u64,
    pub t: usize,
    pub contexts: Vec<Vec<f64>>,
    pub actions: Vec<Action>,
    pub observations: Vec<Vec<f64>>,
    pub target: Action,
}

/// Write the header and one record per timestep of every sample.
pub fn write_dataset<W: Write>(mut out: W, header: &DatasetHeader, samples: &[TrajectorySample]) -> Result<()> {
    serde_json::to_writer(&mut out, header)?;
    out.write_all(b"\n")?;
    for (seq, s) in samples.iter().enumerate() {
        for t in 1..=s.horizon() {
            let rec = Record {
                seq,
                env_id: s.env_id,
                t,
                contexts: s.steps[..t].iter().map(|st| st.context.0.clone()).collect(),
                actions: s.steps[..t - 1].iter().map(|st| st.action.clone()).collect(),
                observations: s.steps[..t - 1].iter().map(|st| st.observation.0.clone()).collect(),
                target: s.targets[t - 1].clone(),
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Read a dataset back into trajectories. The last record of each sequence
/// supplies the steps; every record supplies its target.
pub fn read_dataset<R: BufRead>(input: R) -> Result<(DatasetHeader, Vec<TrajectorySample>)> {
    let mut lines = input.lines();
    let first = lines.next().ok_or_else(|| Error::Format("empty dataset".into()))??;
    let header: DatasetHeader = serde_json::from_str(&first)?;
    if header.format != DATASET_FORMAT {
        return Err(Error::Format(format!("unknown dataset format {}", header.format)));
    }
    let mut seqs: BTreeMap<usize, Vec<Record>> = BTreeMap::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::Format(format!("record {}: {e}", i + 1)))?;
        if rec.contexts.len() != rec.t || rec.actions.len() + 1 != rec.t || rec.observations.len() + 1 != rec.t {
            return Err(Error::Format(format!("record {} has inconsistent history lengths", i + 1)));
        }
        if rec.contexts.iter().any(|c| c.len() != header.context_dim)
            || rec.observations.iter().any(|o| o.len() != header.observation_dim)
        {
            return Err(Error::Format(format!("record {} does not match the header dimensions", i + 1)));
        }
        seqs.entry(rec.seq).or_default().push(rec);
    }
    let mut samples = Vec::with_capacity(seqs.len());
    for (seq, mut recs) in seqs {
        recs.sort_by_key(|r| r.t);
        if recs.iter().enumerate().any(|(i, r)| r.t != i + 1) {
            return Err(Error::Format(format!("sequence {seq} has missing timesteps")));
        }
        let last = recs.last().expect("non-empty");
        let n = last.t;
        let mut steps = Vec::with_capacity(n);
        for k in 0..n {
            // the final step's action and observation are not part of any H_t
            let (action, observation) = if k + 1 < n {
                (last.actions[k].clone(), Observation(last.observations[k].clone()))
            } else {
                (last.target.clone(), Observation(vec![f64::NAN; header.observation_dim]))
            };
            steps.push(Step {
                context: Context(last.contexts[k].clone()),
                action,
                observation,
            });
        }
        samples.push(TrajectorySample {
            env_id: last.env_id,
            steps,
            targets: recs.iter().map(|r| r.target.clone()).collect(),
        });
    }
    if samples.len() != header.sequences {
        return Err(Error::Format(format!(
            "header declares {} sequences, found {}",
            header.sequences,
            samples.len()
        )));
    }
    Ok((header, samples))
}
