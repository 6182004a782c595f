use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub vocab_size: usize,
    pub layers: usize,
    pub heads: usize,
    pub width: usize,
    pub mlp: usize,
    pub context_len: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_frac: f64,
    pub total_steps: usize,
    pub init_std: f64,
    /// Loss weight of the position that predicts the first middle token,
    /// relative to ordinary next-token positions.
    pub answer_weight: f64,
    pub seed: u64,
}

impl LmConfig {
    /// Four layers of four heads at width 128 over a 64-token context.
    pub fn desk() -> Self {
        LmConfig {
            vocab_size: 261,
            layers: 4,
            heads: 4,
            width: 128,
            mlp: 512,
            context_len: 64,
            batch_size: 16,
            lr: 2e-3,
            weight_decay: 0.05,
            warmup_frac: 0.05,
            total_steps: 1500,
            init_std: 0.02,
            answer_weight: 8.0,
            seed: 0,
        }
    }

    /// A minimal configuration for gradient checks and fast tests.
    pub fn tiny() -> Self {
        LmConfig {
            layers: 2,
            heads: 2,
            width: 16,
            mlp: 32,
            context_len: 16,
            batch_size: 4,
            total_steps: 20,
            ..LmConfig::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "tiny" => Ok(Self::tiny()),
            other => Err(Error::Config(format!("unknown language-model preset '{other}'"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || self.width == 0 || self.mlp == 0 || self.context_len == 0 {
            return Err(Error::Config("language model dimensions must be positive".into()));
        }
        if !self.width.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "width {} not divisible by {} heads",
                self.width, self.heads
            )));
        }
        if self.vocab_size < 256 {
            return Err(Error::Config("vocabulary must cover all byte values".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }

    pub fn num_heads(&self) -> usize {
        self.layers * self.heads
    }
}
