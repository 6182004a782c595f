//! Attention patterns: the causal lower triangle of one head's post-softmax
//! matrix, its log scaling, patchification and the APTN store format.

mod patch;
mod scale;
mod store;

pub use patch::{depatchify, patchify, select_mask, MaskSelection, PatchGrid, PatchSet};
pub use scale::{scale_log, unscale_log, Scaling, DEFAULT_EPS};
pub use store::{read_store, write_store, StoreHeader, StoreReader, StoreWriter};

use crate::error::{Error, Result};
use crate::miner::TaskKind;

/// Number of stored cells for an `n`-token causal pattern.
pub fn tri_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Row-major offset of cell `(i, j)` with `j <= i`.
#[inline]
pub fn tri_index(i: usize, j: usize) -> usize {
    debug_assert!(j <= i);
    i * (i + 1) / 2 + j
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternMeta {
    pub task: TaskKind,
    pub sample_id: u64,
    /// First-token correctness of the harvesting model; `None` for noise inputs.
    pub correct: Option<bool>,
    pub scaled: bool,
}

impl PatternMeta {
    pub fn new(task: TaskKind, sample_id: u64, correct: Option<bool>) -> Self {
        let correct = if task.has_correctness() { correct } else { None };
        PatternMeta {
            task,
            sample_id,
            correct,
            scaled: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionPattern {
    pub model_id: String,
    pub layer: u16,
    pub head: u16,
    pub n: usize,
    /// Lower triangle, row-major over `(i, j)` with `j <= i`.
    pub values: Vec<f32>,
    pub meta: PatternMeta,
}

impl AttentionPattern {
    pub fn new(
        model_id: impl Into<String>,
        layer: u16,
        head: u16,
        n: usize,
        values: Vec<f32>,
        meta: PatternMeta,
    ) -> Result<Self> {
        if values.len() != tri_len(n) {
            return Err(Error::Contract(format!(
                "pattern of size {n} needs {} cells, got {}",
                tri_len(n),
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("attention value {bad} outside [0, 1]")));
        }
        Ok(AttentionPattern {
            model_id: model_id.into(),
            layer,
            head,
            n,
            values,
            meta,
        })
    }

    /// Builds a pattern from a dense row-major `n x n` matrix, dropping the
    /// strictly upper triangle.
    pub fn from_dense(
        model_id: impl Into<String>,
        layer: u16,
        head: u16,
        n: usize,
        dense: &[f32],
        meta: PatternMeta,
    ) -> Result<Self> {
        if dense.len() != n * n {
            return Err(Error::Contract(format!(
                "dense matrix has {} cells, expected {}",
                dense.len(),
                n * n
            )));
        }
        let mut values = Vec::with_capacity(tri_len(n));
        for i in 0..n {
            values.extend_from_slice(&dense[i * n..i * n + i + 1]);
        }
        Self::new(model_id, layer, head, n, values, meta)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.values[tri_index(i, j)]
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let start = tri_index(i, 0);
        &self.values[start..start + i + 1]
    }

    /// Dense `n x n` copy with zeros above the diagonal.
    pub fn to_dense(&self) -> Vec<f32> {
        let n = self.n;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            out[i * n..i * n + i + 1].copy_from_slice(self.row(i));
        }
        out
    }

    /// Checks the softmax-row property of a raw pattern.
    pub fn check_rows(&self, tol: f64) -> Result<()> {
        if self.meta.scaled {
            return Err(Error::Contract("row sums are only defined for raw patterns".into()));
        }
        for i in 0..self.n {
            let sum: f64 = self.row(i).iter().map(|&v| v as f64).sum();
            if (sum - 1.0).abs() > tol {
                return Err(Error::Domain(format!("row {i} sums to {sum}")));
            }
        }
        Ok(())
    }

    /// Returns a copy mapped into the model's input space.
    pub fn scaled(&self, scaling: Scaling) -> Result<AttentionPattern> {
        if self.meta.scaled {
            return Err(Error::Contract("pattern is already scaled".into()));
        }
        let mut out = self.clone();
        match scaling {
            Scaling::Identity => {}
            Scaling::Log { eps } => {
                for v in out.values.iter_mut() {
                    *v = scale_log(*v as f64, eps)? as f32;
                }
                out.meta.scaled = true;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> PatternMeta {
        PatternMeta::new(TaskKind::RandomSpan, 1, Some(true))
    }

    #[test]
    fn cell_count_and_indexing() {
        assert_eq!(tri_len(256), 32896);
        let n = 4;
        let dense: Vec<f32> = (0..16).map(|x| x as f32 / 16.0).collect();
        let p = AttentionPattern::from_dense("m", 0, 0, n, &dense, meta()).unwrap();
        assert_eq!(p.values.len(), 10);
        assert_eq!(p.get(3, 2), dense[14]);
        let back = p.to_dense();
        assert_eq!(back[1], 0.0);
        assert_eq!(back[13], dense[13]);
    }

    #[test]
    fn rejects_out_of_range_values() {
        let err = AttentionPattern::new("m", 0, 0, 2, vec![1.0, 0.5, 1.5], meta());
        assert!(matches!(err, Err(Error::Domain(_))));
        let err = AttentionPattern::new("m", 0, 0, 2, vec![1.0, 0.5], meta());
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn noise_meta_drops_correctness() {
        let m = PatternMeta::new(TaskKind::Noise, 3, Some(true));
        assert_eq!(m.correct, None);
    }

    #[test]
    fn row_sums_checked() {
        let p = AttentionPattern::new("m", 0, 0, 2, vec![1.0, 0.25, 0.75], meta()).unwrap();
        p.check_rows(1e-4).unwrap();
        let q = AttentionPattern::new("m", 0, 0, 2, vec![1.0, 0.25, 0.5], meta()).unwrap();
        assert!(q.check_rows(1e-4).is_err());
    }
}
