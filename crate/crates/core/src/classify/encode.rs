//! Ordered target statistics for categorical columns.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PRIOR: f64 = 0.5;

/// Per-column category statistics over the full training set, used for
/// rows the model never trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryEncoder {
    pub prior: f64,
    /// `(sum of labels, count)` per category, per column.
    pub stats: Vec<BTreeMap<i32, (f64, u64)>>,
}

impl CategoryEncoder {
    pub fn columns(&self) -> usize {
        self.stats.len()
    }

    pub fn code(&self, column: usize, category: i32) -> f64 {
        match self.stats[column].get(&category) {
            Some(&(sum, count)) => (sum + self.prior) / (count as f64 + 1.0),
            None => self.prior,
        }
    }

    pub fn encode_row(&self, row: &[i32]) -> Result<Vec<f64>> {
        if row.len() != self.columns() {
            return Err(Error::Domain(format!(
                "row has {} features, encoder expects {}",
                row.len(),
                self.columns()
            )));
        }
        Ok(row.iter().enumerate().map(|(c, &v)| self.code(c, v)).collect())
    }
}

/// Encodes training columns without leaking each row's own label: rows are
/// visited in a seeded permutation and each sees only the labels of rows
/// before it. Returns the full-data encoder and the column-major codes.
pub fn ordered_encode(columns: &[&[i32]], labels: &[bool], prior: f64, seed: u64) -> (CategoryEncoder, Vec<Vec<f64>>) {
    let n = labels.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut stats = Vec::with_capacity(columns.len());
    let mut codes = Vec::with_capacity(columns.len());
    for col in columns {
        let mut running: BTreeMap<i32, (f64, u64)> = BTreeMap::new();
        let mut out = vec![0.0; n];
        for &r in &order {
            let e = running.entry(col[r]).or_insert((0.0, 0));
            out[r] = (e.0 + prior) / (e.1 as f64 + 1.0);
            e.0 += labels[r] as u8 as f64;
            e.1 += 1;
        }
        stats.push(running);
        codes.push(out);
    }
    (CategoryEncoder { prior, stats }, codes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_occurrence_gets_the_prior() {
        let col = [4, 5, 6];
        let (_, codes) = ordered_encode(&[&col], &[true, false, true], PRIOR, 1);
        assert_eq!(codes[0], vec![PRIOR; 3]);
    }

    #[test]
    fn codes_follow_the_permutation_prefix() {
        let col = [7; 3];
        let labels = [true, true, true];
        let (enc, codes) = ordered_encode(&[&col], &labels, PRIOR, 9);
        let mut seen: Vec<f64> = codes[0].clone();
        seen.sort_by(f64::total_cmp);
        // Prefixes of zero, one and two positive labels.
        assert_eq!(seen, vec![0.5, 0.75, 2.5 / 3.0]);
        assert!((enc.code(0, 7) - 3.5 / 4.0).abs() < 1e-15);
        assert_eq!(enc.code(0, 8), PRIOR);
    }

    #[test]
    fn row_never_sees_its_own_label() {
        let col = [1, 1];
        for seed in 0..8 {
            let (_, a) = ordered_encode(&[&col], &[true, false], PRIOR, seed);
            let (_, b) = ordered_encode(&[&col], &[false, false], PRIOR, seed);
            // Flipping row 0's label can only change row 1's code.
            assert_eq!(a[0][0], b[0][0]);
        }
    }

    #[test]
    fn encoding_is_deterministic_per_seed() {
        let col: Vec<i32> = (0..50).map(|i| i % 4).collect();
        let labels: Vec<bool> = (0..50).map(|i| i % 3 == 0).collect();
        let a = ordered_encode(&[&col], &labels, PRIOR, 3);
        assert_eq!(a, ordered_encode(&[&col], &labels, PRIOR, 3));
        assert!(a.0.encode_row(&[1, 2]).is_err());
    }
}
