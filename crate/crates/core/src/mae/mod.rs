//! Masked autoencoder over patchified attention patterns.

mod config;
mod eval;
mod gradcheck;
mod model;
mod train;

use std::path::Path;

pub use config::{MaeConfig, StackConfig, BASE_LR_BATCH};
pub use eval::{cross_evaluate, evaluate, reconstruct, CrossEval, EvalReport, Reconstruction};
pub use gradcheck::{grad_check, GradCheckReport};
pub use model::{masked_mse, MaeParams};
pub use train::{train, write_loss_csv, LossPoint};

use crate::error::{Error, Result};
use crate::nn::checkpoint;
use crate::pattern::{AttentionPattern, MaskSelection, PatchSet};
use model::Batch;

/// Loss and per-sample reconstructions of the masked patches.
#[derive(Debug, Clone)]
pub struct TrainForward {
    pub loss: f64,
    /// `[sample][masked patch]` reconstructed cell values, in mask order.
    pub reconstructions: Vec<Vec<Vec<f32>>>,
}

/// Reconstructs the masked patches of a batch and reports the masked-cell loss.
pub fn forward_train(params: &MaeParams<f32>, sets: &[PatchSet], masks: &[MaskSelection]) -> Result<TrainForward> {
    let batch = Batch::<f32>::assemble(&params.config, sets, masks)?;
    let fwd = params.forward(&batch);
    let (loss, _) = params.loss(&batch, &fwd.pred);
    let grid = params.grid();
    let (k, cells) = (grid.num_patches(), grid.cells());
    let reconstructions = masks
        .iter()
        .enumerate()
        .map(|(s, m)| {
            m.masked
                .iter()
                .map(|&p| fwd.pred[(s * k + p) * cells..(s * k + p + 1) * cells].to_vec())
                .collect()
        })
        .collect();
    Ok(TrainForward { loss, reconstructions })
}

/// Visible patches from `input`, masked patches from `recon`; padded cells stay 0.
pub fn composite(input: &PatchSet, mask: &MaskSelection, recon: &[Vec<f32>]) -> PatchSet {
    let mut out = input.clone();
    let cells = input.grid.cells();
    for (&p, r) in mask.masked.iter().zip(recon) {
        let valid = input.patch_valid(p).to_vec();
        let dst = &mut out.values[p * cells..(p + 1) * cells];
        for c in 0..cells {
            dst[c] = if valid[c] { r[c] } else { 0.0 };
        }
    }
    out
}

/// [CLS] embedding of one pattern with every patch visible.
pub fn embed(params: &MaeParams<f32>, pattern: &AttentionPattern) -> Result<Vec<f32>> {
    Ok(embed_all(params, std::slice::from_ref(pattern))?.remove(0))
}

/// [CLS] embeddings of many patterns; scaling follows the model config.
pub fn embed_all(params: &MaeParams<f32>, patterns: &[AttentionPattern]) -> Result<Vec<Vec<f32>>> {
    let mut out = Vec::with_capacity(patterns.len());
    for chunk in patterns.chunks(64) {
        let sets = prepare(params, chunk)?;
        out.extend(params.embed_batch(&sets)?);
    }
    Ok(out)
}

/// Scales raw patterns per the model config and patchifies them.
pub(crate) fn prepare(params: &MaeParams<f32>, patterns: &[AttentionPattern]) -> Result<Vec<PatchSet>> {
    let c = &params.config;
    patterns
        .iter()
        .map(|p| {
            if p.n != c.pattern_size {
                return Err(Error::Domain(format!(
                    "pattern of size {} does not match model size {}",
                    p.n, c.pattern_size
                )));
            }
            let scaled = if p.meta.scaled { p.clone() } else { p.scaled(c.scaling)? };
            crate::pattern::patchify(&scaled, c.patch_size)
        })
        .collect()
}

pub fn save_params(path: impl AsRef<Path>, params: &MaeParams<f32>) -> Result<()> {
    let cfg = serde_json::to_value(&params.config)?;
    checkpoint::save(path, &cfg, params)
}

pub fn load_params(path: impl AsRef<Path>) -> Result<MaeParams<f32>> {
    let ck = checkpoint::load::<f32>(path)?;
    let config: MaeConfig = serde_json::from_value(ck.config.clone())?;
    let mut params = MaeParams::init(&config, 0)?;
    ck.bind(&mut params)?;
    Ok(params)
}

#[cfg(test)]
mod tests;
