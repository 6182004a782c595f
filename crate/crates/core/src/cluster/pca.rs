use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Centered projection onto the leading principal axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reducer {
    pub mean: Vec<f64>,
    /// `out_dim` orthonormal rows of length `in_dim`.
    pub axes: Vec<Vec<f64>>,
    /// Fraction of total variance along each axis.
    pub explained: Vec<f64>,
}

impl Reducer {
    pub fn in_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn out_dim(&self) -> usize {
        self.axes.len()
    }

    pub fn project(&self, x: &[f32]) -> Vec<f64> {
        self.axes
            .iter()
            .map(|a| a.iter().zip(x).zip(&self.mean).map(|((w, &v), m)| w * (v as f64 - m)).sum())
            .collect()
    }

    /// Maps reduced coordinates back to the input space.
    pub fn reconstruct(&self, y: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (a, &c) in self.axes.iter().zip(y) {
            for (o, w) in out.iter_mut().zip(a) {
                *o += c * w;
            }
        }
        out
    }
}

/// Fits a `out_dim`-axis reducer and projects the data.
pub fn reduce(data: &[Vec<f32>], out_dim: usize) -> Result<(Reducer, Vec<Vec<f64>>)> {
    let n = data.len();
    if n < out_dim {
        return Err(Error::Domain(format!("{n} samples cannot span {out_dim} dimensions")));
    }
    let dim = data[0].len();
    if data.iter().any(|x| x.len() != dim) {
        return Err(Error::Domain("embeddings have inconsistent widths".into()));
    }
    if out_dim == 0 || out_dim > dim {
        return Err(Error::Config(format!("cannot reduce {dim} dimensions to {out_dim}")));
    }
    let mut mean = vec![0.0f64; dim];
    for x in data {
        for (m, &v) in mean.iter_mut().zip(x) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    let mut centered = vec![0.0f64; dim];
    for x in data {
        for (c, (&v, m)) in centered.iter_mut().zip(x.iter().zip(&mean)) {
            *c = v as f64 - m;
        }
        for i in 0..dim {
            let ci = centered[i];
            if ci == 0.0 {
                continue;
            }
            for j in i..dim {
                cov[(i, j)] += ci * centered[j];
            }
        }
    }
    for i in 0..dim {
        for j in 0..i {
            cov[(i, j)] = cov[(j, i)];
        }
    }
    cov /= n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let mut axes = Vec::with_capacity(out_dim);
    let mut explained = Vec::with_capacity(out_dim);
    for &k in order.iter().take(out_dim) {
        let mut axis: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        if let Some(first) = axis.iter().find(|v| v.abs() > 1e-12) {
            if *first < 0.0 {
                axis.iter_mut().for_each(|v| *v = -*v);
            }
        }
        axes.push(axis);
        explained.push(if total > 0.0 { eig.eigenvalues[k].max(0.0) / total } else { 0.0 });
    }
    let reducer = Reducer { mean, axes, explained };
    let reduced = data.iter().map(|x| reducer.project(x)).collect();
    Ok((reducer, reduced))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, d: usize, seed: u64) -> Vec<Vec<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn axes_are_orthonormal_and_signed() {
        let data = random(200, 12, 1);
        let (r, _) = reduce(&data, 8).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let dot: f64 = r.axes[i].iter().zip(&r.axes[j]).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-6);
            }
            let first = r.axes[i].iter().find(|v| v.abs() > 1e-12).unwrap();
            assert!(*first > 0.0);
        }
        assert!(r.explained.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn subspace_variance_is_captured() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let basis: Vec<Vec<f64>> = (0..3).map(|_| (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let data: Vec<Vec<f32>> = (0..300)
            .map(|_| {
                let c: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
                (0..10).map(|j| (0..3).map(|k| c[k] * basis[k][j]).sum::<f64>() as f32 + 0.5).collect()
            })
            .collect();
        let (r, _) = reduce(&data, 8).unwrap();
        assert!(r.explained[..3].iter().sum::<f64>() >= 0.999);
    }

    #[test]
    fn full_rank_reconstruction_is_exact() {
        let data = random(50, 6, 3);
        let (r, y) = reduce(&data, 6).unwrap();
        for (x, yi) in data.iter().zip(&y) {
            let back = r.reconstruct(yi);
            for (a, b) in x.iter().zip(back) {
                assert!((*a as f64 - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn identical_inputs_give_identical_outputs() {
        let mut data = random(20, 5, 4);
        data[3] = data[7].clone();
        let (_, y) = reduce(&data, 3).unwrap();
        assert_eq!(y[3], y[7]);
    }

    #[test]
    fn too_few_samples() {
        assert!(reduce(&random(5, 10, 0), 8).is_err());
    }
}
