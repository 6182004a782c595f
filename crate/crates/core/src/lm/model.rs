use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::LmConfig;
use crate::error::{Error, Result};
use crate::nn::init::trunc_normal;
use crate::nn::ops::{self, LnCache};
use crate::nn::{AttnShape, Block, BlockCache, BlockOptions, ParamSet, Real, Tensor};

/// Causal byte-level transformer with learned positions and an untied output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LmParams<T> {
    pub config: LmConfig,
    /// Optimizer steps taken; zero marks an untrained model.
    pub trained_steps: u64,
    pub tok_emb: Tensor<T>,
    pub pos_emb: Tensor<T>,
    pub blocks: Vec<Block<T>>,
    pub norm_g: Tensor<T>,
    pub norm_b: Tensor<T>,
    pub unembed: Tensor<T>,
}

impl<T: Real> ParamSet<T> for LmParams<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Tensor<T>)) {
        f("tok_emb", &self.tok_emb);
        f("pos_emb", &self.pos_emb);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&format!("block.{i}"), f);
        }
        f("norm_g", &self.norm_g);
        f("norm_b", &self.norm_b);
        f("unembed", &self.unembed);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f("tok_emb", &mut self.tok_emb);
        f("pos_emb", &mut self.pos_emb);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&format!("block.{i}"), f);
        }
        f("norm_g", &mut self.norm_g);
        f("norm_b", &mut self.norm_b);
        f("unembed", &mut self.unembed);
    }
}

/// How the attention sub-layers run during a forward pass.
#[derive(Debug, Clone, Copy, Default)]
pub enum AttentionMode<'a> {
    #[default]
    Full,
    /// Per-layer head masks; `true` zeroes the head's output slice.
    Masked(&'a [Vec<bool>]),
    /// Attention sub-layers removed entirely.
    Skipped,
}

pub(crate) struct LmForward<T> {
    caches: Vec<BlockCache<T>>,
    ln: LnCache<T>,
    normed: Vec<T>,
    /// `batch * seq * vocab`.
    pub logits: Vec<T>,
}

impl<T: Real> LmForward<T> {
    /// Post-softmax weights of one head: `seq * seq` row-major, upper triangle zero.
    pub fn attention(&self, layer: usize, sample: usize, head: usize, heads: usize, seq: usize) -> &[T] {
        let probs = &self.caches[layer].probs;
        let base = (sample * heads + head) * seq * seq;
        &probs[base..base + seq * seq]
    }
}

impl<T: Real> LmParams<T> {
    pub fn init(config: &LmConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (d, v) = (config.width, config.vocab_size);
        let std = config.init_std;
        let tok_emb = trunc_normal(&[v, d], std, &mut rng);
        let pos_emb = trunc_normal(&[config.context_len, d], std, &mut rng);
        let blocks = (0..config.layers)
            .map(|_| Block::new(d, config.mlp, std, &mut rng))
            .collect();
        let unembed = trunc_normal(&[d, v], std, &mut rng);
        Ok(LmParams {
            config: config.clone(),
            trained_steps: 0,
            tok_emb,
            pos_emb,
            blocks,
            norm_g: Tensor::filled(&[d], T::one()),
            norm_b: Tensor::zeros(&[d]),
            unembed,
        })
    }

    pub fn cast<U: Real>(&self) -> LmParams<U> {
        let c = |t: &Tensor<T>| t.cast::<U>();
        LmParams {
            config: self.config.clone(),
            trained_steps: self.trained_steps,
            tok_emb: c(&self.tok_emb),
            pos_emb: c(&self.pos_emb),
            blocks: self
                .blocks
                .iter()
                .map(|b| Block {
                    ln1_g: c(&b.ln1_g),
                    ln1_b: c(&b.ln1_b),
                    wq: c(&b.wq),
                    wk: c(&b.wk),
                    wv: c(&b.wv),
                    wo: c(&b.wo),
                    ln2_g: c(&b.ln2_g),
                    ln2_b: c(&b.ln2_b),
                    w1: c(&b.w1),
                    b1: c(&b.b1),
                    w2: c(&b.w2),
                    b2: c(&b.b2),
                })
                .collect(),
            norm_g: c(&self.norm_g),
            norm_b: c(&self.norm_b),
            unembed: c(&self.unembed),
        }
    }

    fn shape(&self, batch: usize) -> AttnShape {
        AttnShape {
            batch,
            seq: self.config.context_len,
            heads: self.config.heads,
            causal: true,
        }
    }

    pub(crate) fn check_streams(&self, streams: &[&[u32]]) -> Result<()> {
        let seq = self.config.context_len;
        for s in streams {
            if s.len() != seq {
                return Err(Error::Domain(format!(
                    "stream of {} tokens does not match context length {seq}",
                    s.len()
                )));
            }
            if let Some(&bad) = s.iter().find(|&&t| t as usize >= self.config.vocab_size) {
                return Err(Error::Domain(format!("token id {bad} outside vocabulary")));
            }
        }
        Ok(())
    }

    /// Full forward pass over equal-length streams.
    pub(crate) fn forward(&self, streams: &[&[u32]], mode: AttentionMode) -> LmForward<T> {
        let (d, seq, v) = (self.config.width, self.config.context_len, self.config.vocab_size);
        let batch = streams.len();
        let mut x = vec![T::zero(); batch * seq * d];
        for (s, stream) in streams.iter().enumerate() {
            for (t, &id) in stream.iter().enumerate() {
                let row = &mut x[(s * seq + t) * d..(s * seq + t + 1) * d];
                let te = &self.tok_emb.data[id as usize * d..(id as usize + 1) * d];
                let pe = &self.pos_emb.data[t * d..(t + 1) * d];
                for c in 0..d {
                    row[c] = te[c] + pe[c];
                }
            }
        }
        let shape = self.shape(batch);
        let mut caches = Vec::with_capacity(self.blocks.len());
        for (l, blk) in self.blocks.iter().enumerate() {
            let opts = match mode {
                AttentionMode::Full => BlockOptions::default(),
                AttentionMode::Masked(m) => BlockOptions {
                    head_mask: Some(&m[l]),
                    skip_attention: false,
                },
                AttentionMode::Skipped => BlockOptions {
                    head_mask: None,
                    skip_attention: true,
                },
            };
            let (y, c) = blk.forward(&x, shape, opts);
            caches.push(c);
            x = y;
        }
        let (normed, ln) = ops::layer_norm(&x, &self.norm_g.data, &self.norm_b.data, d);
        let logits = ops::linear(&normed, &self.unembed.data, None, batch * seq, d, v);
        LmForward {
            caches,
            ln,
            normed,
            logits,
        }
    }

    /// Weighted cross-entropy and `dL/dlogits`. `weights[s][t]` scales the
    /// loss of predicting `targets[s][t]` at position `t`; the loss is the
    /// weighted mean.
    pub(crate) fn loss(&self, fwd: &LmForward<T>, targets: &[Vec<u32>], weights: &[Vec<f64>]) -> (f64, Vec<T>) {
        let (seq, v) = (self.config.context_len, self.config.vocab_size);
        let total: f64 = weights.iter().flatten().sum();
        let mut dlogits = vec![T::zero(); fwd.logits.len()];
        if total == 0.0 {
            return (0.0, dlogits);
        }
        let mut loss = 0.0;
        for (s, (tg, w)) in targets.iter().zip(weights).enumerate() {
            for t in 0..seq {
                if w[t] == 0.0 {
                    continue;
                }
                let base = (s * seq + t) * v;
                let row = &fwd.logits[base..base + v];
                let max = row.iter().fold(f64::NEG_INFINITY, |m, x| m.max(x.as_f64()));
                let sum: f64 = row.iter().map(|x| (x.as_f64() - max).exp()).sum();
                let target = tg[t] as usize;
                loss += w[t] * (max + sum.ln() - row[target].as_f64());
                let scale = w[t] / total;
                let drow = &mut dlogits[base..base + v];
                for c in 0..v {
                    let p = (row[c].as_f64() - max).exp() / sum;
                    let onehot = if c == target { 1.0 } else { 0.0 };
                    drow[c] = T::f(scale * (p - onehot));
                }
            }
        }
        (loss / total, dlogits)
    }

    pub(crate) fn backward(&self, streams: &[&[u32]], fwd: &LmForward<T>, dlogits: &[T]) -> LmParams<T> {
        let (d, seq, v) = (self.config.width, self.config.context_len, self.config.vocab_size);
        let batch = streams.len();
        let mut g = self.zeros_like();
        let dnormed = ops::linear_backward(&fwd.normed, &self.unembed.data, dlogits, batch * seq, d, v, &mut g.unembed.data, None, true)
            .unwrap();
        let mut dx = ops::layer_norm_backward(&dnormed, &self.norm_g.data, &fwd.ln, d, &mut g.norm_g.data, &mut g.norm_b.data);
        let shape = self.shape(batch);
        for l in (0..self.blocks.len()).rev() {
            dx = self.blocks[l].backward(&fwd.caches[l], &dx, shape, BlockOptions::default(), &mut g.blocks[l]);
        }
        for (s, stream) in streams.iter().enumerate() {
            for (t, &id) in stream.iter().enumerate() {
                let src = &dx[(s * seq + t) * d..(s * seq + t + 1) * d];
                ops::add_in_place(&mut g.tok_emb.data[id as usize * d..(id as usize + 1) * d], src);
                ops::add_in_place(&mut g.pos_emb.data[t * d..(t + 1) * d], src);
            }
        }
        g
    }
}
