use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-6;

/// How raw attention values are mapped before entering the autoencoder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Scaling {
    /// Natural-log rescaling onto [0, 1].
    Log { eps: f64 },
    /// Raw values, used by the scaling ablation.
    Identity,
}

impl Default for Scaling {
    fn default() -> Self {
        Scaling::Log { eps: DEFAULT_EPS }
    }
}

impl Scaling {
    pub fn apply(self, v: f32) -> f32 {
        match self {
            Scaling::Identity => v,
            Scaling::Log { eps } => scale_log_unchecked(v as f64, eps) as f32,
        }
    }

    pub fn invert(self, s: f32) -> f32 {
        match self {
            Scaling::Identity => s,
            Scaling::Log { eps } => unscale_log_unchecked(s as f64, eps) as f32,
        }
    }

    pub fn is_log(self) -> bool {
        matches!(self, Scaling::Log { .. })
    }
}

#[inline]
fn scale_log_unchecked(v: f64, eps: f64) -> f64 {
    let lo = eps.ln();
    ((v + eps).ln() - lo) / ((1.0 + eps).ln() - lo)
}

#[inline]
fn unscale_log_unchecked(s: f64, eps: f64) -> f64 {
    let lo = eps.ln();
    (s * ((1.0 + eps).ln() - lo) + lo).exp() - eps
}

/// Maps `v` in [0, 1] to `(ln(v + eps) - ln eps) / (ln(1 + eps) - ln eps)`.
pub fn scale_log(v: f64, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Domain(format!("attention value {v} outside [0, 1]")));
    }
    Ok(scale_log_unchecked(v, eps).clamp(0.0, 1.0))
}

pub fn unscale_log(s: f64, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::Domain(format!("scaled value {s} outside [0, 1]")));
    }
    Ok(unscale_log_unchecked(s, eps).clamp(0.0, 1.0))
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("eps must be positive, got {eps}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn endpoints_and_midpoint() {
        assert_eq!(scale_log(0.0, 1e-6).unwrap(), 0.0);
        assert!((scale_log(1.0, 1e-6).unwrap() - 1.0).abs() < 1e-15);
        // (ln(0.500001) - ln(1e-6)) / (ln(1.000001) - ln(1e-6)) evaluated
        // independently: 13.122365 / 13.815512 = 0.949828
        let lo = (1e-6f64).ln();
        let oracle = ((0.500001f64).ln() - lo) / ((1.000001f64).ln() - lo);
        let s = scale_log(0.5, 1e-6).unwrap();
        assert!((s - oracle).abs() < 1e-12);
        assert!((s - 0.94983).abs() < 1e-5);
    }

    #[test]
    fn domain_errors() {
        assert!(scale_log(-0.1, 1e-6).is_err());
        assert!(scale_log(1.1, 1e-6).is_err());
        assert!(scale_log(0.5, 0.0).is_err());
        assert!(scale_log(0.5, -1.0).is_err());
        assert!(unscale_log(0.5, f64::NAN).is_err());
    }

    proptest! {
        #[test]
        fn strictly_monotone(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            prop_assume!(a < b);
            prop_assert!(scale_log(a, 1e-6).unwrap() < scale_log(b, 1e-6).unwrap());
        }

        #[test]
        fn inverse_within_tolerance(v in 0.0f64..=1.0) {
            let s = scale_log(v, 1e-6).unwrap();
            prop_assert!((unscale_log(s, 1e-6).unwrap() - v).abs() < 1e-6);
        }
    }

    #[test]
    fn row_argmax_survives_scaling() {
        let row = [0.05f32, 0.6, 0.3, 0.05];
        let scaled: Vec<f32> = row.iter().map(|&v| Scaling::default().apply(v)).collect();
        let argmax = |xs: &[f32]| {
            xs.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0
        };
        assert_eq!(argmax(&row), argmax(&scaled));
    }
}
