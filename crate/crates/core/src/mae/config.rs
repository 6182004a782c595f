use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pattern::{PatchGrid, Scaling};

/// Batch size the base learning rate refers to.
pub const BASE_LR_BATCH: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackConfig {
    pub layers: usize,
    pub width: usize,
    pub heads: usize,
    pub mlp: usize,
}

impl StackConfig {
    fn validate(&self, what: &str) -> Result<()> {
        if self.layers == 0 || self.width == 0 || self.heads == 0 || self.mlp == 0 {
            return Err(Error::Config(format!("{what}: all dimensions must be positive")));
        }
        if !self.width.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "{what}: width {} not divisible by {} heads",
                self.width, self.heads
            )));
        }
        if !self.width.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "{what}: width {} must be divisible by 4 for 2-D positional encodings",
                self.width
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaeConfig {
    pub pattern_size: usize,
    pub patch_size: usize,
    pub mask_ratio: f64,
    pub encoder: StackConfig,
    pub decoder: StackConfig,
    pub batch_size: usize,
    /// Learning rate for a batch of 50; scaled linearly to `batch_size`.
    pub base_lr: f64,
    /// Explicit global learning rate; derived from `base_lr` when absent.
    pub global_lr: Option<f64>,
    pub weight_decay: f64,
    pub warmup_frac: f64,
    pub total_batches: usize,
    pub init_std: f64,
    pub scaling: Scaling,
    /// Admit only patterns from correct generations when training.
    pub correct_only: bool,
    /// Seed of the fixed evaluation masks.
    pub eval_seed: u64,
    pub seed: u64,
}

impl MaeConfig {
    /// The full-size architecture and optimizer settings.
    pub fn full() -> Self {
        MaeConfig {
            pattern_size: 256,
            patch_size: 32,
            mask_ratio: 0.5,
            encoder: StackConfig {
                layers: 24,
                width: 512,
                heads: 16,
                mlp: 2048,
            },
            decoder: StackConfig {
                layers: 8,
                width: 512,
                heads: 8,
                mlp: 2048,
            },
            batch_size: 480,
            base_lr: 1.5e-4,
            global_lr: None,
            weight_decay: 0.05,
            warmup_frac: 0.05,
            total_batches: 150_000,
            init_std: 0.02,
            scaling: Scaling::default(),
            correct_only: true,
            eval_seed: 0x5eed_e7a1,
            seed: 0,
        }
    }

    /// A CPU-sized model over 64-token patterns.
    pub fn desk() -> Self {
        MaeConfig {
            pattern_size: 64,
            patch_size: 16,
            encoder: StackConfig {
                layers: 4,
                width: 64,
                heads: 4,
                mlp: 256,
            },
            decoder: StackConfig {
                layers: 2,
                width: 64,
                heads: 4,
                mlp: 256,
            },
            batch_size: 32,
            base_lr: 5e-3,
            total_batches: 2000,
            ..MaeConfig::full()
        }
    }

    /// A tiny configuration for gradient checks.
    pub fn tiny() -> Self {
        MaeConfig {
            pattern_size: 8,
            patch_size: 4,
            encoder: StackConfig {
                layers: 2,
                width: 16,
                heads: 2,
                mlp: 32,
            },
            decoder: StackConfig {
                layers: 1,
                width: 8,
                heads: 2,
                mlp: 16,
            },
            batch_size: 4,
            total_batches: 10,
            ..MaeConfig::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::full()),
            "desk" => Ok(Self::desk()),
            "tiny" => Ok(Self::tiny()),
            other => Err(Error::Config(format!("unknown autoencoder preset '{other}'"))),
        }
    }

    pub fn global_lr(&self) -> f64 {
        self.global_lr
            .unwrap_or(self.base_lr * self.batch_size as f64 / BASE_LR_BATCH)
    }

    pub fn grid(&self) -> Result<PatchGrid> {
        PatchGrid::new(self.pattern_size, self.patch_size)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        self.encoder.validate("encoder")?;
        self.decoder.validate("decoder")?;
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return Err(Error::Config(format!(
                "mask ratio {} must lie in [0, 1)",
                self.mask_ratio
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.init_std > 0.0) {
            return Err(Error::Config("init_std must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_learning_rate_is_linearly_scaled() {
        let c = MaeConfig::full();
        assert!((c.global_lr() - 1.44e-3).abs() < 1e-9);
        c.validate().unwrap();
        assert_eq!(c.grid().unwrap().num_patches(), 36);
    }

    #[test]
    fn rejects_indivisible_heads() {
        let mut c = MaeConfig::desk();
        c.encoder.heads = 3;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = MaeConfig::desk();
        c.patch_size = 24;
        assert!(c.validate().is_err());
    }

    #[test]
    fn presets_by_name() {
        assert_eq!(MaeConfig::preset("desk").unwrap(), MaeConfig::desk());
        assert!(MaeConfig::preset("huge").is_err());
    }
}
