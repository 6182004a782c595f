//! A small causal byte-level language model that stands in for the analysed
//! code model: FIM training, greedy inference with head zeroing, and
//! attention harvesting.

mod config;
mod harvest;
mod heads;
mod model;
mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use config::LmConfig;
pub use harvest::{harvest, harvest_to_store, heads_per_layer, infer_fim, FimOutput, Harvest, HarvestOptions, HarvestRecord};
pub use heads::{format_head_list, head_masks, parse_head_list, HeadKey};
pub use model::{AttentionMode, LmParams};
pub use train::{accuracy_by_task, predict_batch, split_by_file, train_lm, Accuracy, LmMetrics};

use crate::error::Result;
use crate::nn::checkpoint;

#[derive(Serialize, Deserialize)]
struct Header {
    config: LmConfig,
    trained_steps: u64,
}

pub fn save_lm(path: impl AsRef<Path>, params: &LmParams<f32>) -> Result<()> {
    let header = serde_json::to_value(Header {
        config: params.config.clone(),
        trained_steps: params.trained_steps,
    })?;
    checkpoint::save(path, &header, params)
}

pub fn load_lm(path: impl AsRef<Path>) -> Result<LmParams<f32>> {
    let ck = checkpoint::load::<f32>(path)?;
    let header: Header = serde_json::from_value(ck.config.clone())?;
    let mut params = LmParams::init(&header.config)?;
    ck.bind(&mut params)?;
    params.trained_steps = header.trained_steps;
    Ok(params)
}
