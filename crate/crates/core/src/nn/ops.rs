//! Row-major dense kernels with hand-written backward passes.

use super::{gemm, Real, View};

const LN_EPS: f64 = 1e-5;

/// `y = x @ w (+ b)`; `x` is `rows x din`, `w` is `din x dout`.
pub fn linear<T: Real>(x: &[T], w: &[T], b: Option<&[T]>, rows: usize, din: usize, dout: usize) -> Vec<T> {
    let mut y = vec![T::zero(); rows * dout];
    if let Some(b) = b {
        for row in y.chunks_exact_mut(dout) {
            row.copy_from_slice(b);
        }
    }
    let beta = if b.is_some() { T::one() } else { T::zero() };
    gemm(
        T::one(),
        View::rm(x, 0, rows, din, din),
        View::rm(w, 0, din, dout, dout),
        beta,
        &mut y,
        0,
        dout,
    );
    y
}

/// Accumulates `dw += x^T dy`, `db += sum(dy)` and returns `dx = dy @ w^T`
/// when requested.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward<T: Real>(
    x: &[T],
    w: &[T],
    dy: &[T],
    rows: usize,
    din: usize,
    dout: usize,
    dw: &mut [T],
    db: Option<&mut [T]>,
    want_dx: bool,
) -> Option<Vec<T>> {
    gemm(
        T::one(),
        View::tr(x, 0, din, rows, din),
        View::rm(dy, 0, rows, dout, dout),
        T::one(),
        dw,
        0,
        dout,
    );
    if let Some(db) = db {
        for row in dy.chunks_exact(dout) {
            for (g, &d) in db.iter_mut().zip(row) {
                *g += d;
            }
        }
    }
    if !want_dx {
        return None;
    }
    let mut dx = vec![T::zero(); rows * din];
    gemm(
        T::one(),
        View::rm(dy, 0, rows, dout, dout),
        View::tr(w, 0, dout, din, dout),
        T::zero(),
        &mut dx,
        0,
        din,
    );
    Some(dx)
}

#[derive(Debug, Clone, Default)]
pub struct LnCache<T> {
    pub xhat: Vec<T>,
    pub rstd: Vec<T>,
}

pub fn layer_norm<T: Real>(x: &[T], g: &[T], b: &[T], dim: usize) -> (Vec<T>, LnCache<T>) {
    let rows = x.len() / dim;
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); rows];
    let inv_d = T::f(1.0 / dim as f64);
    let eps = T::f(LN_EPS);
    for r in 0..rows {
        let xr = &x[r * dim..(r + 1) * dim];
        let mean = xr.iter().copied().sum::<T>() * inv_d;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for c in 0..dim {
            let h = (xr[c] - mean) * rs;
            xhat[r * dim + c] = h;
            y[r * dim + c] = h * g[c] + b[c];
        }
    }
    (y, LnCache { xhat, rstd })
}

pub fn layer_norm_backward<T: Real>(
    dy: &[T],
    g: &[T],
    cache: &LnCache<T>,
    dim: usize,
    dg: &mut [T],
    db: &mut [T],
) -> Vec<T> {
    let rows = dy.len() / dim;
    let mut dx = vec![T::zero(); dy.len()];
    let inv_d = T::f(1.0 / dim as f64);
    let mut dxhat = vec![T::zero(); dim];
    for r in 0..rows {
        let dyr = &dy[r * dim..(r + 1) * dim];
        let xh = &cache.xhat[r * dim..(r + 1) * dim];
        let mut mean_dxhat = T::zero();
        let mut mean_dxhat_xhat = T::zero();
        for c in 0..dim {
            dg[c] += dyr[c] * xh[c];
            db[c] += dyr[c];
            dxhat[c] = dyr[c] * g[c];
            mean_dxhat += dxhat[c];
            mean_dxhat_xhat += dxhat[c] * xh[c];
        }
        mean_dxhat *= inv_d;
        mean_dxhat_xhat *= inv_d;
        let rs = cache.rstd[r];
        for c in 0..dim {
            dx[r * dim + c] = rs * (dxhat[c] - mean_dxhat - xh[c] * mean_dxhat_xhat);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044715;

pub fn gelu<T: Real>(x: &[T]) -> Vec<T> {
    let (c, a, half) = (T::f(GELU_C), T::f(GELU_A), T::f(0.5));
    x.iter()
        .map(|&v| half * v * (T::one() + (c * (v + a * v * v * v)).tanh()))
        .collect()
}

/// `dx = dy * gelu'(x)`, in place on `dy`.
pub fn gelu_backward<T: Real>(x: &[T], dy: &mut [T]) {
    let (c, a, half, three) = (T::f(GELU_C), T::f(GELU_A), T::f(0.5), T::f(3.0));
    for (d, &v) in dy.iter_mut().zip(x) {
        let t = (c * (v + a * v * v * v)).tanh();
        let grad = half * (T::one() + t) + half * v * (T::one() - t * t) * c * (T::one() + three * a * v * v);
        *d *= grad;
    }
}

/// In-place softmax over the first `len` entries of `row`; the rest are zeroed.
pub fn softmax_prefix<T: Real>(row: &mut [T], len: usize) {
    let max = row[..len].iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row[..len].iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = T::one() / sum;
    for v in row[..len].iter_mut() {
        *v *= inv;
    }
    for v in row[len..].iter_mut() {
        *v = T::zero();
    }
}

pub fn add_in_place<T: Real>(acc: &mut [T], x: &[T]) {
    for (a, &b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}
