//! Pre-norm transformer block: `x + Attn(LN(x))` followed by `x + MLP(LN(x))`.
//! Attention projections carry no bias, so a zeroed head contributes nothing.

use rand::Rng;

use super::init::trunc_normal;
use super::ops::{self, LnCache};
use super::{gemm, Real, Tensor, View};

#[derive(Debug, Clone, PartialEq)]
pub struct Block<T> {
    pub ln1_g: Tensor<T>,
    pub ln1_b: Tensor<T>,
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
    pub wo: Tensor<T>,
    pub ln2_g: Tensor<T>,
    pub ln2_b: Tensor<T>,
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
}

/// Batch layout for one call: `batch` sequences of `seq` tokens each,
/// stored as `batch * seq` consecutive rows.
#[derive(Debug, Clone, Copy)]
pub struct AttnShape {
    pub batch: usize,
    pub seq: usize,
    pub heads: usize,
    pub causal: bool,
}

impl AttnShape {
    pub fn rows(&self) -> usize {
        self.batch * self.seq
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BlockOptions<'a> {
    /// `true` entries zero that head's output slice before the output projection.
    pub head_mask: Option<&'a [bool]>,
    /// Drops the attention sub-layer entirely.
    pub skip_attention: bool,
}

#[derive(Debug, Clone, Default)]
pub struct BlockCache<T> {
    ln1: LnCache<T>,
    h1: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// `batch * heads * seq * seq` post-softmax weights.
    pub probs: Vec<T>,
    heads: Vec<T>,
    ln2: LnCache<T>,
    h2: Vec<T>,
    u: Vec<T>,
    z: Vec<T>,
}

impl<T: Real> Block<T> {
    pub fn new(dim: usize, mlp: usize, std: f64, rng: &mut impl Rng) -> Self {
        Block {
            ln1_g: Tensor::filled(&[dim], T::one()),
            ln1_b: Tensor::zeros(&[dim]),
            wq: trunc_normal(&[dim, dim], std, rng),
            wk: trunc_normal(&[dim, dim], std, rng),
            wv: trunc_normal(&[dim, dim], std, rng),
            wo: trunc_normal(&[dim, dim], std, rng),
            ln2_g: Tensor::filled(&[dim], T::one()),
            ln2_b: Tensor::zeros(&[dim]),
            w1: trunc_normal(&[dim, mlp], std, rng),
            b1: Tensor::zeros(&[mlp]),
            w2: trunc_normal(&[mlp, dim], std, rng),
            b2: Tensor::zeros(&[dim]),
        }
    }

    pub fn dim(&self) -> usize {
        self.wq.shape[0]
    }

    pub fn mlp(&self) -> usize {
        self.w1.shape[1]
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor<T>)) {
        for (name, t) in [
            ("ln1_g", &self.ln1_g),
            ("ln1_b", &self.ln1_b),
            ("wq", &self.wq),
            ("wk", &self.wk),
            ("wv", &self.wv),
            ("wo", &self.wo),
            ("ln2_g", &self.ln2_g),
            ("ln2_b", &self.ln2_b),
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
        ] {
            f(&format!("{prefix}.{name}"), t);
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        for (name, t) in [
            ("ln1_g", &mut self.ln1_g),
            ("ln1_b", &mut self.ln1_b),
            ("wq", &mut self.wq),
            ("wk", &mut self.wk),
            ("wv", &mut self.wv),
            ("wo", &mut self.wo),
            ("ln2_g", &mut self.ln2_g),
            ("ln2_b", &mut self.ln2_b),
            ("w1", &mut self.w1),
            ("b1", &mut self.b1),
            ("w2", &mut self.w2),
            ("b2", &mut self.b2),
        ] {
            f(&format!("{prefix}.{name}"), t);
        }
    }

    pub fn forward(&self, x: &[T], shape: AttnShape, opts: BlockOptions) -> (Vec<T>, BlockCache<T>) {
        let d = self.dim();
        let m = self.mlp();
        let rows = shape.rows();
        debug_assert_eq!(x.len(), rows * d);
        let mut cache = BlockCache::default();

        let mut x2 = x.to_vec();
        if !opts.skip_attention {
            let (h1, ln1) = ops::layer_norm(x, &self.ln1_g.data, &self.ln1_b.data, d);
            let q = ops::linear(&h1, &self.wq.data, None, rows, d, d);
            let k = ops::linear(&h1, &self.wk.data, None, rows, d, d);
            let v = ops::linear(&h1, &self.wv.data, None, rows, d, d);
            let (mut heads, probs) = attention(&q, &k, &v, shape, d);
            if let Some(mask) = opts.head_mask {
                zero_heads(&mut heads, mask, d);
            }
            let proj = ops::linear(&heads, &self.wo.data, None, rows, d, d);
            ops::add_in_place(&mut x2, &proj);
            cache.ln1 = ln1;
            cache.h1 = h1;
            cache.q = q;
            cache.k = k;
            cache.v = v;
            cache.probs = probs;
            cache.heads = heads;
        }

        let (h2, ln2) = ops::layer_norm(&x2, &self.ln2_g.data, &self.ln2_b.data, d);
        let u = ops::linear(&h2, &self.w1.data, Some(&self.b1.data), rows, d, m);
        let z = ops::gelu(&u);
        let out = ops::linear(&z, &self.w2.data, Some(&self.b2.data), rows, m, d);
        let mut y = x2;
        ops::add_in_place(&mut y, &out);
        cache.ln2 = ln2;
        cache.h2 = h2;
        cache.u = u;
        cache.z = z;
        (y, cache)
    }

    /// Accumulates parameter gradients into `g` and returns `dL/dx`.
    pub fn backward(
        &self,
        cache: &BlockCache<T>,
        dy: &[T],
        shape: AttnShape,
        opts: BlockOptions,
        g: &mut Block<T>,
    ) -> Vec<T> {
        let d = self.dim();
        let m = self.mlp();
        let rows = shape.rows();

        // MLP branch
        let mut dz = ops::linear_backward(
            &cache.z,
            &self.w2.data,
            dy,
            rows,
            m,
            d,
            &mut g.w2.data,
            Some(&mut g.b2.data),
            true,
        )
        .unwrap();
        ops::gelu_backward(&cache.u, &mut dz);
        let dh2 = ops::linear_backward(
            &cache.h2,
            &self.w1.data,
            &dz,
            rows,
            d,
            m,
            &mut g.w1.data,
            Some(&mut g.b1.data),
            true,
        )
        .unwrap();
        let mut dx2 = ops::layer_norm_backward(&dh2, &self.ln2_g.data, &cache.ln2, d, &mut g.ln2_g.data, &mut g.ln2_b.data);
        ops::add_in_place(&mut dx2, dy);

        if opts.skip_attention {
            return dx2;
        }

        // attention branch
        let mut dheads = ops::linear_backward(&cache.heads, &self.wo.data, &dx2, rows, d, d, &mut g.wo.data, None, true)
            .unwrap();
        if let Some(mask) = opts.head_mask {
            zero_heads(&mut dheads, mask, d);
        }
        let (dq, dk, dv) = attention_backward(&cache.q, &cache.k, &cache.v, &cache.probs, &dheads, shape, d);
        let mut dh1 = ops::linear_backward(&cache.h1, &self.wq.data, &dq, rows, d, d, &mut g.wq.data, None, true)
            .unwrap();
        let dh1k = ops::linear_backward(&cache.h1, &self.wk.data, &dk, rows, d, d, &mut g.wk.data, None, true)
            .unwrap();
        let dh1v = ops::linear_backward(&cache.h1, &self.wv.data, &dv, rows, d, d, &mut g.wv.data, None, true)
            .unwrap();
        ops::add_in_place(&mut dh1, &dh1k);
        ops::add_in_place(&mut dh1, &dh1v);
        let dx1 = ops::layer_norm_backward(&dh1, &self.ln1_g.data, &cache.ln1, d, &mut g.ln1_g.data, &mut g.ln1_b.data);
        ops::add_in_place(&mut dx2, &dx1);
        dx2
    }
}

fn zero_heads<T: Real>(x: &mut [T], mask: &[bool], dim: usize) {
    let dh = dim / mask.len();
    for row in x.chunks_exact_mut(dim) {
        for (h, &off) in mask.iter().enumerate() {
            if off {
                row[h * dh..(h + 1) * dh].iter_mut().for_each(|v| *v = T::zero());
            }
        }
    }
}

fn attention<T: Real>(q: &[T], k: &[T], v: &[T], shape: AttnShape, dim: usize) -> (Vec<T>, Vec<T>) {
    let AttnShape { batch, seq, heads, causal } = shape;
    let dh = dim / heads;
    let scale = T::f(1.0 / (dh as f64).sqrt());
    let mut out = vec![T::zero(); batch * seq * dim];
    let mut probs = vec![T::zero(); batch * heads * seq * seq];
    for b in 0..batch {
        for h in 0..heads {
            let off = b * seq * dim + h * dh;
            let s = &mut probs[(b * heads + h) * seq * seq..][..seq * seq];
            gemm(
                scale,
                View::rm(q, off, seq, dh, dim),
                View::tr(k, off, dh, seq, dim),
                T::zero(),
                s,
                0,
                seq,
            );
            for i in 0..seq {
                let len = if causal { i + 1 } else { seq };
                ops::softmax_prefix(&mut s[i * seq..(i + 1) * seq], len);
            }
            gemm(
                T::one(),
                View::rm(s, 0, seq, seq, seq),
                View::rm(v, off, seq, dh, dim),
                T::zero(),
                &mut out,
                off,
                dim,
            );
        }
    }
    (out, probs)
}

fn attention_backward<T: Real>(
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    dout: &[T],
    shape: AttnShape,
    dim: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let AttnShape { batch, seq, heads, .. } = shape;
    let dh = dim / heads;
    let scale = T::f(1.0 / (dh as f64).sqrt());
    let mut dq = vec![T::zero(); q.len()];
    let mut dk = vec![T::zero(); k.len()];
    let mut dv = vec![T::zero(); v.len()];
    let mut dp = vec![T::zero(); seq * seq];
    for b in 0..batch {
        for h in 0..heads {
            let off = b * seq * dim + h * dh;
            let p = &probs[(b * heads + h) * seq * seq..][..seq * seq];
            gemm(
                T::one(),
                View::rm(dout, off, seq, dh, dim),
                View::tr(v, off, dh, seq, dim),
                T::zero(),
                &mut dp,
                0,
                seq,
            );
            gemm(
                T::one(),
                View::tr(p, 0, seq, seq, seq),
                View::rm(dout, off, seq, dh, dim),
                T::one(),
                &mut dv,
                off,
                dim,
            );
            for i in 0..seq {
                let pr = &p[i * seq..(i + 1) * seq];
                let dr = &mut dp[i * seq..(i + 1) * seq];
                let dot: T = pr.iter().zip(dr.iter()).map(|(&a, &b)| a * b).sum();
                for (d, &pv) in dr.iter_mut().zip(pr) {
                    *d = pv * (*d - dot);
                }
            }
            gemm(scale, View::rm(&dp, 0, seq, seq, seq), View::rm(k, off, seq, dh, dim), T::one(), &mut dq, off, dim);
            gemm(scale, View::tr(&dp, 0, seq, seq, seq), View::rm(q, off, seq, dh, dim), T::one(), &mut dk, off, dim);
        }
    }
    (dq, dk, dv)
}

/// Runs a stack of blocks, keeping every block's cache.
pub fn forward_stack<T: Real>(
    blocks: &[Block<T>],
    x: Vec<T>,
    shape: AttnShape,
    masks: Option<&[Vec<bool>]>,
) -> (Vec<T>, Vec<BlockCache<T>>) {
    let mut h = x;
    let mut caches = Vec::with_capacity(blocks.len());
    for (l, blk) in blocks.iter().enumerate() {
        let opts = BlockOptions {
            head_mask: masks.map(|m| m[l].as_slice()),
            skip_attention: false,
        };
        let (y, c) = blk.forward(&h, shape, opts);
        caches.push(c);
        h = y;
    }
    (h, caches)
}

pub fn backward_stack<T: Real>(
    blocks: &[Block<T>],
    caches: &[BlockCache<T>],
    dy: Vec<T>,
    shape: AttnShape,
    masks: Option<&[Vec<bool>]>,
    grads: &mut [Block<T>],
) -> Vec<T> {
    let mut d = dy;
    for l in (0..blocks.len()).rev() {
        let opts = BlockOptions {
            head_mask: masks.map(|m| m[l].as_slice()),
            skip_attention: false,
        };
        d = blocks[l].backward(&caches[l], &d, shape, opts, &mut grads[l]);
    }
    d
}
