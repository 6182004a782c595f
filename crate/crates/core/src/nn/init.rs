use rand::Rng;
use rand_distr::StandardNormal;

use super::{Real, Tensor};

/// Normal(0, std) truncated to two standard deviations.
pub fn trunc_normal<T: Real>(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor<T> {
    let n = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    while data.len() < n {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 2.0 {
            data.push(T::f(z * std));
        }
    }
    Tensor {
        shape: shape.to_vec(),
        data,
    }
}

fn sincos_1d(dim: usize, pos: f64, out: &mut [f64]) {
    let half = dim / 2;
    for i in 0..half {
        let omega = 1.0 / 10000f64.powf(i as f64 / half as f64);
        out[i] = (pos * omega).sin();
        out[half + i] = (pos * omega).cos();
    }
}

/// Fixed 2-D sine-cosine encodings for grid positions `(row, col)`: the
/// first half of each vector encodes the row, the second half the column.
pub fn sincos_2d<T: Real>(dim: usize, positions: &[(usize, usize)]) -> Tensor<T> {
    assert!(dim.is_multiple_of(4), "2-D sincos encoding needs a width divisible by 4");
    let mut data = Vec::with_capacity(dim * positions.len());
    let mut buf = vec![0.0f64; dim];
    for &(r, c) in positions {
        sincos_1d(dim / 2, r as f64, &mut buf[..dim / 2]);
        sincos_1d(dim / 2, c as f64, &mut buf[dim / 2..]);
        data.extend(buf.iter().map(|&x| T::f(x)));
    }
    Tensor {
        shape: vec![positions.len(), dim],
        data,
    }
}
