use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::heads::{head_masks, HeadKey};
use super::model::{AttentionMode, LmParams};
use super::train::argmax;
use crate::error::{Error, Result};
use crate::miner::{TaskInstance, TaskKind};
use crate::pattern::{AttentionPattern, PatternMeta, StoreWriter, DEFAULT_EPS};

#[derive(Debug, Clone)]
pub struct FimOutput {
    pub predicted: u32,
    pub logits: Vec<f32>,
    /// `layers * heads` dense `seq x seq` matrices, index `layer * heads + head`.
    pub attention: Vec<Vec<f32>>,
}

/// Greedy prediction of the token after `FIM_MIDDLE`, with every head's
/// attention matrix. Heads in `zeroed` contribute nothing to the residual stream.
pub fn infer_fim(params: &LmParams<f32>, instance: &TaskInstance, zeroed: Option<&BTreeSet<HeadKey>>) -> Result<FimOutput> {
    Ok(infer_many(params, std::slice::from_ref(instance), zeroed)?.remove(0))
}

pub(crate) fn infer_many(
    params: &LmParams<f32>,
    instances: &[TaskInstance],
    zeroed: Option<&BTreeSet<HeadKey>>,
) -> Result<Vec<FimOutput>> {
    let c = &params.config;
    let masks = zeroed.map(|z| head_masks(z, c.layers, c.heads)).transpose()?;
    let mode = match &masks {
        Some(m) => AttentionMode::Masked(m),
        None => AttentionMode::Full,
    };
    let (seq, v) = (c.context_len, c.vocab_size);
    let streams: Vec<&[u32]> = instances.iter().map(|i| i.fim_stream.as_slice()).collect();
    params.check_streams(&streams)?;
    let fwd = params.forward(&streams, mode);
    Ok((0..instances.len())
        .map(|s| {
            let logits = fwd.logits[(s * seq + seq - 1) * v..(s * seq + seq) * v].to_vec();
            let attention = (0..c.layers)
                .flat_map(|l| (0..c.heads).map(move |h| (l, h)))
                .map(|(l, h)| fwd.attention(l, s, h, c.heads, seq).to_vec())
                .collect();
            FimOutput {
                predicted: argmax(&logits) as u32,
                logits,
                attention,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarvestOptions {
    pub model_id: String,
    /// Fraction of heads sampled per layer; 1.0 keeps every head.
    pub subsample_ratio: f64,
    /// Drop instances whose first token was predicted wrongly.
    pub correct_only: bool,
    /// Keep equal numbers of correct and incorrect instances per task.
    pub balance: bool,
    pub seed: u64,
}

impl Default for HarvestOptions {
    fn default() -> Self {
        HarvestOptions {
            model_id: "mini-lm".into(),
            subsample_ratio: 0.25,
            correct_only: true,
            balance: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarvestRecord {
    pub sample_id: u64,
    pub task: TaskKind,
    pub predicted: u32,
    /// `None` for noise instances.
    pub correct: Option<bool>,
    pub heads: Vec<HeadKey>,
}

#[derive(Debug, Clone, Default)]
pub struct Harvest {
    pub records: Vec<HarvestRecord>,
    pub patterns: Vec<AttentionPattern>,
}

/// Heads sampled per layer: `round(ratio * heads)`, at least one.
pub fn heads_per_layer(ratio: f64, heads: usize) -> usize {
    ((ratio * heads as f64).round() as usize).clamp(1, heads)
}

/// Runs every instance, selects instances per the options and exports the
/// sampled heads' patterns in instance order.
pub fn harvest(params: &LmParams<f32>, instances: &[TaskInstance], opts: &HarvestOptions) -> Result<Harvest> {
    if params.trained_steps == 0 {
        return Err(Error::Contract("refusing to harvest from an untrained model".into()));
    }
    if !(opts.subsample_ratio > 0.0 && opts.subsample_ratio <= 1.0) {
        return Err(Error::Config(format!("subsample ratio {} outside (0, 1]", opts.subsample_ratio)));
    }
    let c = &params.config;
    let preds = super::train::predict_batch(params, instances, None)?;
    let correct: Vec<Option<bool>> = instances
        .iter()
        .zip(&preds)
        .map(|(i, &p)| i.first_truth.map(|t| t == p))
        .collect();

    let mut keep: Vec<bool> = correct
        .iter()
        .map(|c| !(opts.correct_only && *c == Some(false)))
        .collect();
    if opts.balance {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x6261_6c61);
        let mut groups: BTreeMap<(TaskKind, bool), Vec<usize>> = BTreeMap::new();
        for (i, c) in correct.iter().enumerate() {
            if let (Some(c), true) = (c, keep[i]) {
                groups.entry((instances[i].task_id, *c)).or_default().push(i);
            }
        }
        let tasks: BTreeSet<TaskKind> = groups.keys().map(|k| k.0).collect();
        for task in tasks {
            let yes = groups.get(&(task, true)).cloned().unwrap_or_default();
            let no = groups.get(&(task, false)).cloned().unwrap_or_default();
            let n = yes.len().min(no.len());
            for mut side in [yes, no] {
                side.shuffle(&mut rng);
                for &i in &side[n..] {
                    keep[i] = false;
                }
            }
        }
    }

    let per_layer = heads_per_layer(opts.subsample_ratio, c.heads);
    let chosen: Vec<usize> = (0..instances.len()).filter(|&i| keep[i]).collect();
    let mut out = Harvest::default();
    for chunk in chosen.chunks(16) {
        let batch: Vec<TaskInstance> = chunk.iter().map(|&i| instances[i].clone()).collect();
        let outputs = infer_many(params, &batch, None)?;
        for (&i, o) in chunk.iter().zip(outputs) {
            let inst = &instances[i];
            let sample_id = inst.sample_id();
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ sample_id.rotate_left(17));
            let mut heads = Vec::with_capacity(per_layer * c.layers);
            for l in 0..c.layers {
                let mut picked = index::sample(&mut rng, c.heads, per_layer).into_vec();
                picked.sort_unstable();
                heads.extend(picked.into_iter().map(|h| HeadKey::new(l, h)));
            }
            let meta = PatternMeta::new(inst.task_id, sample_id, correct[i]);
            for key in &heads {
                let dense = &o.attention[key.flat(c.heads)];
                let clamped: Vec<f32> = dense.iter().map(|x| x.clamp(0.0, 1.0)).collect();
                out.patterns.push(AttentionPattern::from_dense(
                    opts.model_id.clone(),
                    key.layer,
                    key.head,
                    c.context_len,
                    &clamped,
                    meta.clone(),
                )?);
            }
            out.records.push(HarvestRecord {
                sample_id,
                task: inst.task_id,
                predicted: o.predicted,
                correct: correct[i],
                heads,
            });
        }
    }
    Ok(out)
}

/// Harvests straight into an APTN store and returns the records.
pub fn harvest_to_store(
    params: &LmParams<f32>,
    instances: &[TaskInstance],
    opts: &HarvestOptions,
    path: impl AsRef<Path>,
) -> Result<Vec<HarvestRecord>> {
    let h = harvest(params, instances, opts)?;
    let mut w = StoreWriter::create(path, params.config.context_len, DEFAULT_EPS)?;
    for p in &h.patterns {
        w.append(p)?;
    }
    w.finish()?;
    Ok(h.records)
}
