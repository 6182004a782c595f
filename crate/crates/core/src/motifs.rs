//! Synthetic attention patterns drawn from a few structural families.
//!
//! Each row is a softmax over logits that place a high score on the family's
//! structure, plus small Gaussian logit noise.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::miner::TaskKind;
use crate::pattern::{tri_len, AttentionPattern, PatternMeta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Motif {
    /// Mass concentrated near the diagonal.
    Band,
    /// A few columns attended from every later row.
    Stripes,
    /// Block-diagonal squares.
    Blocks,
    /// Diagonal lines repeating at a fixed period.
    Repeat,
    /// Close to uniform over the prefix.
    Uniform,
}

impl Motif {
    pub const ALL: [Motif; 5] = [Motif::Band, Motif::Stripes, Motif::Blocks, Motif::Repeat, Motif::Uniform];

    pub fn name(self) -> &'static str {
        match self {
            Motif::Band => "band",
            Motif::Stripes => "stripes",
            Motif::Blocks => "blocks",
            Motif::Repeat => "repeat",
            Motif::Uniform => "uniform",
        }
    }

    /// The `model_id` stamped on generated patterns.
    pub fn model_id(self) -> String {
        format!("motif:{}", self.name())
    }

    pub fn index(self) -> usize {
        Motif::ALL.iter().position(|&m| m == self).unwrap()
    }
}

impl fmt::Display for Motif {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Motif {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Motif::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown motif '{s}'")))
    }
}

/// Logit noise standard deviation.
pub const LOGIT_NOISE: f64 = 0.2;

/// Structural parameters of one draw.
#[derive(Debug, Clone, PartialEq)]
pub struct MotifShape {
    /// Logit added on the family's structure.
    pub strength: f64,
    /// Band width in cells.
    pub width: usize,
    /// Block side length.
    pub block: usize,
    /// Spacing of repeated diagonals.
    pub period: usize,
    /// Number of extra attended columns besides column 0.
    pub stripes: usize,
}

impl MotifShape {
    /// Draws every parameter from its full range.
    pub fn sample(rng: &mut impl Rng) -> Self {
        MotifShape {
            strength: rng.gen_range(6.0..8.0),
            width: rng.gen_range(1..=3),
            block: rng.gen_range(4..=12),
            period: rng.gen_range(5..=12),
            stripes: rng.gen_range(1..=3),
        }
    }

    /// One fixed shape per family; only strength, stripe columns and logit
    /// noise vary between draws.
    pub fn fixed(rng: &mut impl Rng) -> Self {
        MotifShape {
            strength: rng.gen_range(6.0..8.0),
            width: 2,
            block: 8,
            period: 6,
            stripes: 2,
        }
    }
}

/// Draws one pattern of size `n` from `motif`.
pub fn motif_pattern(motif: Motif, n: usize, sample_id: u64, rng: &mut impl Rng) -> AttentionPattern {
    let shape = MotifShape::sample(rng);
    shaped_pattern(motif, &shape, n, sample_id, rng)
}

pub fn shaped_pattern(motif: Motif, shape: &MotifShape, n: usize, sample_id: u64, rng: &mut impl Rng) -> AttentionPattern {
    let noise = Normal::new(0.0, LOGIT_NOISE).unwrap();
    let mut stripes = vec![0usize];
    for _ in 0..shape.stripes {
        stripes.push(rng.gen_range(1..n.max(2)));
    }
    let hit = |i: usize, j: usize| -> bool {
        match motif {
            Motif::Band => i - j < shape.width,
            Motif::Stripes => stripes.contains(&j),
            Motif::Blocks => i / shape.block == j / shape.block,
            Motif::Repeat => (i - j).is_multiple_of(shape.period),
            Motif::Uniform => false,
        }
    };
    let mut values = Vec::with_capacity(tri_len(n));
    let mut logits = Vec::with_capacity(n);
    for i in 0..n {
        logits.clear();
        for j in 0..=i {
            let base = if hit(i, j) { shape.strength } else { 0.0 };
            logits.push(base + noise.sample(rng));
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        values.extend(logits.iter().map(|l| ((l - max).exp() / sum) as f32));
    }
    let meta = PatternMeta::new(TaskKind::RandomSpan, sample_id, Some(true));
    AttentionPattern::new(motif.model_id(), 0, motif.index() as u16, n, values, meta)
        .expect("softmax rows lie in [0, 1]")
}

/// `per_family` patterns from each listed family, interleaved, deterministic in `seed`.
pub fn motif_corpus(families: &[Motif], per_family: usize, n: usize, seed: u64) -> Vec<AttentionPattern> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(families.len() * per_family);
    for _ in 0..per_family {
        for &m in families {
            let id = out.len() as u64;
            out.push(motif_pattern(m, n, id, &mut rng));
        }
    }
    out
}

/// Like `motif_corpus`, with one fixed shape per family.
pub fn fixed_motif_corpus(families: &[Motif], per_family: usize, n: usize, seed: u64) -> Vec<AttentionPattern> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(families.len() * per_family);
    for _ in 0..per_family {
        for &m in families {
            let id = out.len() as u64;
            let shape = MotifShape::fixed(&mut rng);
            out.push(shaped_pattern(m, &shape, n, id, &mut rng));
        }
    }
    out
}

/// Labels of `motif_corpus` output, in the same order.
pub fn motif_labels(families: &[Motif], per_family: usize) -> Vec<usize> {
    (0..per_family).flat_map(|_| families.iter().map(|m| m.index())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_are_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for m in Motif::ALL {
            let p = motif_pattern(m, 32, 0, &mut rng);
            p.check_rows(1e-5).unwrap();
            assert_eq!(p.model_id, format!("motif:{m}"));
        }
    }

    #[test]
    fn corpus_is_deterministic() {
        let a = motif_corpus(&Motif::ALL, 3, 16, 9);
        let b = motif_corpus(&Motif::ALL, 3, 16, 9);
        assert_eq!(a, b);
        assert_eq!(a.len(), 15);
        let labels = motif_labels(&Motif::ALL, 3);
        for (p, l) in a.iter().zip(labels) {
            assert_eq!(p.head as usize, l);
        }
    }

    #[test]
    fn band_concentrates_on_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = motif_pattern(Motif::Band, 32, 0, &mut rng);
        assert!(p.get(31, 31) > 0.2);
        assert!(p.get(31, 0) < 0.01);
    }
}
