use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::{Batch, MaeParams};
use super::MaeConfig;
use crate::error::{Error, Result};
use crate::motifs::{motif_pattern, Motif};
use crate::nn::ParamSet;
use crate::pattern::{patchify, select_mask};

/// Finite-difference step.
const STEP: f64 = 1e-3;
/// Gradients smaller than this are compared in absolute terms.
const REL_FLOOR: f64 = 1e-6;
const COORDINATES: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameter name and offset with the largest error.
    pub worst: (String, usize),
    pub grad_norm: f64,
}

/// Compares backprop gradients with central differences on random coordinates
/// of a freshly initialized model, in 64-bit arithmetic.
pub fn grad_check(config: &MaeConfig, seed: u64) -> Result<GradCheckReport> {
    if config.encoder.layers > 2 || config.encoder.width > 16 || config.decoder.layers > 2 || config.decoder.width > 16 {
        return Err(Error::Config("gradient check expects at most 2 layers of width 16".into()));
    }
    let mut params: MaeParams<f64> = MaeParams::init(config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6772_6164);
    // Perturb norms and biases away from their initial constants so every
    // parameter has a generic gradient.
    params.visit_mut(&mut |_, t| {
        for x in t.data.iter_mut() {
            *x += rng.gen_range(-0.1..0.1);
        }
    });
    let grid = params.grid();
    let batch_size = config.batch_size.max(2);
    let mut sets = Vec::with_capacity(batch_size);
    let mut masks = Vec::with_capacity(batch_size);
    for i in 0..batch_size {
        let motif = Motif::ALL[i % Motif::ALL.len()];
        let p = motif_pattern(motif, config.pattern_size, i as u64, &mut rng).scaled(config.scaling)?;
        sets.push(patchify(&p, config.patch_size)?);
        masks.push(select_mask(grid.num_patches(), config.mask_ratio.max(0.25), rng.gen())?);
    }
    let mut cfg = config.clone();
    cfg.mask_ratio = config.mask_ratio.max(0.25);
    let batch = Batch::<f64>::assemble(&cfg, &sets, &masks)?;
    let (_, grads) = params.loss_and_grad(&batch);
    let flat = grads.flat();
    if let Some(i) = flat.iter().position(|g| !g.is_finite()) {
        let (name, off) = grads.locate(i).unwrap();
        return Err(Error::Numerical(format!("non-finite gradient at {name}[{off}]")));
    }

    let total = params.num_params();
    let picks = index::sample(&mut rng, total, COORDINATES.min(total)).into_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: picks.len(),
        worst: (String::new(), 0),
        grad_norm: grads.sq_norm().sqrt(),
    };
    for idx in picks {
        let orig = params.with_scalar_mut(idx, |x| *x).unwrap();
        params.with_scalar_mut(idx, |x| *x = orig + STEP);
        let plus = params.loss(&batch, &params.forward(&batch).pred).0;
        params.with_scalar_mut(idx, |x| *x = orig - STEP);
        let minus = params.loss(&batch, &params.forward(&batch).pred).0;
        params.with_scalar_mut(idx, |x| *x = orig);
        let numeric = (plus - minus) / (2.0 * STEP);
        let analytic = flat[idx];
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = grads.locate(idx).unwrap();
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_config_gradients_match_finite_differences() {
        let r = grad_check(&MaeConfig::tiny(), 7).unwrap();
        assert!(r.checked >= 200);
        assert!(r.max_rel_error <= 1e-3, "{r:?}");
    }

    #[test]
    fn report_is_deterministic() {
        let a = grad_check(&MaeConfig::tiny(), 3).unwrap();
        let b = grad_check(&MaeConfig::tiny(), 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_large_configs() {
        assert!(grad_check(&MaeConfig::desk(), 0).is_err());
    }
}
