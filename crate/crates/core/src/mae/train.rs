use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{Batch, MaeParams};
use super::prepare;
use crate::error::{Error, Result};
use crate::io::AtomicFile;
use crate::nn::{AdamW, CosineSchedule};
use crate::pattern::{select_mask, AttentionPattern};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub batch: usize,
    pub loss: f64,
    pub lr: f64,
}

/// Trains in place for `config.total_batches` batches and returns the loss curve.
///
/// Scaling is applied at batch assembly. With `correct_only` set, records
/// whose generation was not correct are skipped; patterns without a
/// correctness label are always admitted.
pub fn train(params: &mut MaeParams<f32>, dataset: &[AttentionPattern]) -> Result<Vec<LossPoint>> {
    let config = params.config.clone();
    config.validate()?;
    let admitted: Vec<&AttentionPattern> = dataset
        .iter()
        .filter(|p| !config.correct_only || p.meta.correct != Some(false))
        .collect();
    if admitted.is_empty() {
        return Err(Error::Data("training set is empty after filtering".into()));
    }
    if let Some(p) = admitted.iter().find(|p| p.n != config.pattern_size) {
        return Err(Error::Domain(format!(
            "pattern of size {} does not match model size {}",
            p.n, config.pattern_size
        )));
    }
    let grid = config.grid()?;
    let k = grid.num_patches();
    let schedule = CosineSchedule::new(config.global_lr(), config.total_batches, config.warmup_frac);
    let mut opt = AdamW::new(config.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7472_6169_6e00);
    let mut order: Vec<usize> = (0..admitted.len()).collect();
    let mut cursor = order.len();
    let mut curve = Vec::with_capacity(config.total_batches);

    for step in 0..config.total_batches {
        let mut picked = Vec::with_capacity(config.batch_size);
        while picked.len() < config.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            picked.push(admitted[order[cursor]].clone());
            cursor += 1;
        }
        let sets = prepare(params, &picked)?;
        let masks = (0..sets.len())
            .map(|_| select_mask(k, config.mask_ratio, rng.gen()))
            .collect::<Result<Vec<_>>>()?;
        let batch = Batch::<f32>::assemble(&config, &sets, &masks)?;
        let (loss, grads) = params.loss_and_grad(&batch);
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("non-finite loss at batch {step}")));
        }
        let lr = schedule.lr(step);
        opt.step(params, &grads, lr);
        curve.push(LossPoint { batch: step, loss, lr });
    }
    Ok(curve)
}

/// Writes `batch,loss,lr` rows.
pub fn write_loss_csv(curve: &[LossPoint], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = AtomicFile::create(path)?;
    let mut body = String::from("batch,loss,lr\n");
    for p in curve {
        body.push_str(&format!("{},{},{}\n", p.batch, p.loss, p.lr));
    }
    f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))?;
    f.commit()
}
