use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::heads::{head_masks, HeadKey};
use super::model::{AttentionMode, LmParams};
use crate::error::{Error, Result};
use crate::mae::LossPoint;
use crate::miner::{TaskInstance, TaskKind, Vocab};
use crate::nn::{AdamW, CosineSchedule};

/// Splits instances by source file so no file contributes to both sides.
pub fn split_by_file(instances: &[TaskInstance], holdout_frac: f64, seed: u64) -> (Vec<TaskInstance>, Vec<TaskInstance>) {
    let files: BTreeSet<u64> = instances.iter().map(|i| i.file_id).collect();
    let mut files: Vec<u64> = files.into_iter().collect();
    files.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_hold = ((files.len() as f64 * holdout_frac).round() as usize).min(files.len());
    let held: BTreeSet<u64> = files[..n_hold].iter().copied().collect();
    instances.iter().cloned().partition(|i| !held.contains(&i.file_id))
}

/// Next-token targets and loss weights for one instance: ordinary positions
/// predict the following stream token, the last position predicts the first
/// middle token. Padding positions carry no loss.
pub(crate) fn training_targets(inst: &TaskInstance, vocab: &Vocab, answer_weight: f64) -> (Vec<u32>, Vec<f64>) {
    let s = &inst.fim_stream;
    let n = s.len();
    let mut targets = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for t in 0..n {
        if t + 1 < n {
            targets.push(s[t + 1]);
            weights.push(if s[t] == vocab.pad { 0.0 } else { 1.0 });
        } else {
            targets.push(inst.first_truth.unwrap_or(vocab.eos));
            weights.push(if inst.first_truth.is_some() { answer_weight } else { 0.0 });
        }
    }
    (targets, weights)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accuracy {
    pub correct: usize,
    pub total: usize,
}

impl Accuracy {
    pub fn rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmMetrics {
    pub curve: Vec<LossPoint>,
    /// First-token accuracy per task on the held-out instances.
    pub heldout: BTreeMap<TaskKind, Accuracy>,
}

/// Greedy first-token predictions, with optional zeroed heads.
pub fn predict_batch(
    params: &LmParams<f32>,
    instances: &[TaskInstance],
    zeroed: Option<&BTreeSet<HeadKey>>,
) -> Result<Vec<u32>> {
    let c = &params.config;
    let masks = zeroed.map(|z| head_masks(z, c.layers, c.heads)).transpose()?;
    let mode = match &masks {
        Some(m) => AttentionMode::Masked(m),
        None => AttentionMode::Full,
    };
    let mut out = Vec::with_capacity(instances.len());
    for chunk in instances.chunks(32) {
        let streams: Vec<&[u32]> = chunk.iter().map(|i| i.fim_stream.as_slice()).collect();
        params.check_streams(&streams)?;
        let fwd = params.forward(&streams, mode);
        let (seq, v) = (c.context_len, c.vocab_size);
        for s in 0..chunk.len() {
            let row = &fwd.logits[(s * seq + seq - 1) * v..(s * seq + seq) * v];
            out.push(argmax(row) as u32);
        }
    }
    Ok(out)
}

pub(crate) fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy_by_task(params: &LmParams<f32>, instances: &[TaskInstance]) -> Result<BTreeMap<TaskKind, Accuracy>> {
    let scored: Vec<TaskInstance> = instances.iter().filter(|i| i.first_truth.is_some()).cloned().collect();
    let preds = predict_batch(params, &scored, None)?;
    let mut acc: BTreeMap<TaskKind, Accuracy> = BTreeMap::new();
    for (inst, p) in scored.iter().zip(preds) {
        let a = acc.entry(inst.task_id).or_default();
        a.total += 1;
        a.correct += (Some(p) == inst.first_truth) as usize;
    }
    Ok(acc)
}

/// Trains on `train` for `config.total_steps` batches and scores `heldout`.
pub fn train_lm(
    params: &mut LmParams<f32>,
    train: &[TaskInstance],
    heldout: &[TaskInstance],
    vocab: &Vocab,
) -> Result<LmMetrics> {
    let config = params.config.clone();
    config.validate()?;
    let usable: Vec<&TaskInstance> = train.iter().filter(|i| i.first_truth.is_some()).collect();
    if usable.is_empty() {
        return Err(Error::Data("no training instances with ground truth".into()));
    }
    let schedule = CosineSchedule::new(config.lr, config.total_steps, config.warmup_frac);
    let mut opt = AdamW::new(config.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x6c6d);
    let mut curve = Vec::with_capacity(config.total_steps);
    for step in 0..config.total_steps {
        let batch: Vec<&TaskInstance> = (0..config.batch_size)
            .map(|_| usable[rng.gen_range(0..usable.len())])
            .collect();
        let streams: Vec<&[u32]> = batch.iter().map(|i| i.fim_stream.as_slice()).collect();
        params.check_streams(&streams)?;
        let (targets, weights): (Vec<_>, Vec<_>) = batch
            .iter()
            .map(|i| training_targets(i, vocab, config.answer_weight))
            .unzip();
        let fwd = params.forward(&streams, AttentionMode::Full);
        let (loss, dlogits) = params.loss(&fwd, &targets, &weights);
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("non-finite loss at step {step}")));
        }
        let grads = params.backward(&streams, &fwd, &dlogits);
        let lr = schedule.lr(step);
        opt.step(params, &grads, lr);
        params.trained_steps += 1;
        curve.push(LossPoint { batch: step, loss, lr });
    }
    Ok(LmMetrics {
        curve,
        heldout: accuracy_by_task(params, heldout)?,
    })
}
