use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{tri_index, tri_len, AttentionPattern};
use crate::error::{Error, Result};

/// Geometry of the lower-triangular patch grid for one pattern size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGrid {
    pub n: usize,
    pub patch: usize,
    pub g: usize,
}

impl PatchGrid {
    pub fn new(n: usize, patch: usize) -> Result<Self> {
        if patch == 0 || n == 0 || !n.is_multiple_of(patch) {
            return Err(Error::Config(format!(
                "patch size {patch} does not divide pattern size {n}"
            )));
        }
        Ok(PatchGrid {
            n,
            patch,
            g: n / patch,
        })
    }

    pub fn num_patches(&self) -> usize {
        self.g * (self.g + 1) / 2
    }

    pub fn cells(&self) -> usize {
        self.patch * self.patch
    }

    /// Kept `(row, col)` grid positions, row-major with `col <= row`.
    pub fn positions(&self) -> Vec<(usize, usize)> {
        (0..self.g)
            .flat_map(|r| (0..=r).map(move |c| (r, c)))
            .collect()
    }

    /// Per-cell validity for all kept patches, concatenated. Only diagonal
    /// patches have invalid (padded) cells: those strictly above the token
    /// diagonal.
    pub fn validity(&self) -> Vec<bool> {
        let p = self.patch;
        let mut out = Vec::with_capacity(self.num_patches() * p * p);
        for (r, c) in self.positions() {
            for a in 0..p {
                for b in 0..p {
                    out.push(r != c || b <= a);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub grid: PatchGrid,
    pub positions: Vec<(usize, usize)>,
    /// `positions.len() * patch * patch` values, patch-major then row-major.
    pub values: Vec<f32>,
    pub valid: Vec<bool>,
    pub scaled: bool,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn patch(&self, k: usize) -> &[f32] {
        let c = self.grid.cells();
        &self.values[k * c..(k + 1) * c]
    }

    pub fn patch_valid(&self, k: usize) -> &[bool] {
        let c = self.grid.cells();
        &self.valid[k * c..(k + 1) * c]
    }
}

pub fn patchify(p: &AttentionPattern, patch_size: usize) -> Result<PatchSet> {
    let grid = PatchGrid::new(p.n, patch_size)?;
    let positions = grid.positions();
    let ps = patch_size;
    let mut values = Vec::with_capacity(positions.len() * ps * ps);
    for &(r, c) in &positions {
        for a in 0..ps {
            let i = r * ps + a;
            for b in 0..ps {
                let j = c * ps + b;
                values.push(if j <= i { p.values[tri_index(i, j)] } else { 0.0 });
            }
        }
    }
    Ok(PatchSet {
        valid: grid.validity(),
        grid,
        positions,
        values,
        scaled: p.meta.scaled,
    })
}

/// Reassembles the lower triangle from a patch set.
pub fn depatchify(ps: &PatchSet) -> Vec<f32> {
    let grid = ps.grid;
    let p = grid.patch;
    let mut out = vec![0.0f32; tri_len(grid.n)];
    for (k, &(r, c)) in ps.positions.iter().enumerate() {
        let patch = ps.patch(k);
        for a in 0..p {
            let i = r * p + a;
            for b in 0..p {
                let j = c * p + b;
                if j <= i {
                    out[tri_index(i, j)] = patch[a * p + b];
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSelection {
    pub seed: u64,
    /// Sorted masked patch indices.
    pub masked: Vec<usize>,
    /// Sorted visible patch indices.
    pub visible: Vec<usize>,
}

impl MaskSelection {
    pub fn masked_count(num_patches: usize, mask_ratio: f64) -> usize {
        ((mask_ratio * num_patches as f64).round() as usize).min(num_patches)
    }

    /// A selection with every patch visible.
    pub fn none(num_patches: usize) -> Self {
        MaskSelection {
            seed: 0,
            masked: Vec::new(),
            visible: (0..num_patches).collect(),
        }
    }

    pub fn is_masked(&self, k: usize) -> bool {
        self.masked.binary_search(&k).is_ok()
    }
}

/// Samples `round(mask_ratio * patches)` patches uniformly without replacement.
pub fn select_mask(num_patches: usize, mask_ratio: f64, seed: u64) -> Result<MaskSelection> {
    if !(0.0..=1.0).contains(&mask_ratio) {
        return Err(Error::Config(format!("mask ratio {mask_ratio} outside [0, 1]")));
    }
    let count = MaskSelection::masked_count(num_patches, mask_ratio);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut masked = index::sample(&mut rng, num_patches, count).into_vec();
    masked.sort_unstable();
    let mut is_masked = vec![false; num_patches];
    for &k in &masked {
        is_masked[k] = true;
    }
    let visible = (0..num_patches).filter(|&k| !is_masked[k]).collect();
    Ok(MaskSelection {
        seed,
        masked,
        visible,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::miner::TaskKind;
    use crate::pattern::PatternMeta;
    use proptest::prelude::*;

    fn ramp(n: usize) -> AttentionPattern {
        let values: Vec<f32> = (0..tri_len(n))
            .map(|k| ((k % 97) as f32 + 1.0) / 100.0)
            .collect();
        let meta = PatternMeta::new(TaskKind::RandomSpan, 0, Some(true));
        AttentionPattern::new("m", 0, 0, n, values, meta).unwrap()
    }

    #[test]
    fn patch_counts() {
        assert_eq!(PatchGrid::new(256, 32).unwrap().num_patches(), 36);
        assert_eq!(PatchGrid::new(256, 32).unwrap().g, 8);
        assert_eq!(PatchGrid::new(64, 16).unwrap().num_patches(), 10);
        assert!(matches!(PatchGrid::new(64, 24), Err(Error::Config(_))));
        let ps = patchify(&ramp(64), 16).unwrap();
        assert_eq!(ps.len(), 10);
        assert_eq!(ps.values.len(), 10 * 256);
    }

    #[test]
    fn diagonal_padding() {
        let ps = patchify(&ramp(64), 16).unwrap();
        assert_eq!(ps.positions[0], (0, 0));
        let (vals, valid) = (ps.patch(0), ps.patch_valid(0));
        for a in 0..16 {
            for b in 0..16 {
                let k = a * 16 + b;
                if b > a {
                    assert!(!valid[k]);
                    assert_eq!(vals[k], 0.0);
                } else {
                    assert!(valid[k]);
                    assert!(vals[k] > 0.0);
                }
            }
        }
        // off-diagonal patches carry no padding
        let k = ps.positions.iter().position(|&rc| rc == (2, 1)).unwrap();
        assert!(ps.patch_valid(k).iter().all(|&v| v));
    }

    #[test]
    fn mask_selection_counts() {
        let m = select_mask(36, 0.5, 7).unwrap();
        assert_eq!(m.masked.len(), 18);
        assert_eq!(m.visible.len(), 18);
        assert!(select_mask(36, 0.0, 7).unwrap().masked.is_empty());
        assert_eq!(select_mask(36, 0.5, 7).unwrap(), m);
        assert!(select_mask(36, 1.5, 7).is_err());
    }

    proptest! {
        #[test]
        fn depatchify_inverts_patchify(seed in any::<u64>(), gi in 1usize..5, p in 1usize..6) {
            let n = gi * p;
            let mut x = seed;
            let values: Vec<f32> = (0..tri_len(n)).map(|_| {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (x >> 40) as f32 / (1u64 << 24) as f32
            }).collect();
            let meta = PatternMeta::new(TaskKind::Identifier, 0, Some(false));
            let pat = AttentionPattern::new("m", 1, 2, n, values.clone(), meta).unwrap();
            let ps = patchify(&pat, p).unwrap();
            prop_assert_eq!(ps.len(), gi * (gi + 1) / 2);
            let back = depatchify(&ps);
            prop_assert!(back.iter().zip(&values).all(|(a, b)| a.to_bits() == b.to_bits()));
        }

        #[test]
        fn mask_is_partition(seed in any::<u64>(), k in 0usize..60, ratio in 0.0f64..=1.0) {
            let m = select_mask(k, ratio, seed).unwrap();
            prop_assert_eq!(m.masked.len(), MaskSelection::masked_count(k, ratio));
            prop_assert_eq!(m.masked.len() + m.visible.len(), k);
            prop_assert!(m.masked.iter().all(|i| *i < k && !m.visible.contains(i)));
            prop_assert_eq!(select_mask(k, ratio, seed).unwrap(), m);
        }
    }
}
