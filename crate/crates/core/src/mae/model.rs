use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::MaeConfig;
use crate::error::{Error, Result};
use crate::nn::init::{sincos_2d, trunc_normal};
use crate::nn::ops::{self, LnCache};
use crate::nn::{backward_stack, forward_stack, AttnShape, Block, BlockCache, ParamSet, Real, Tensor};
use crate::pattern::{MaskSelection, PatchGrid, PatchSet};

/// Encoder and decoder weights of the masked autoencoder.
///
/// The encoder sees `[CLS]` plus the visible patches; the decoder sees the
/// encoded patch tokens with a shared mask token at every masked position.
/// Positional encodings are fixed 2-D sinusoids and are not trained.
#[derive(Debug, Clone, PartialEq)]
pub struct MaeParams<T> {
    pub config: MaeConfig,
    pub patch_w: Tensor<T>,
    pub patch_b: Tensor<T>,
    pub cls: Tensor<T>,
    pub encoder: Vec<Block<T>>,
    pub enc_norm_g: Tensor<T>,
    pub enc_norm_b: Tensor<T>,
    pub dec_w: Tensor<T>,
    pub dec_b: Tensor<T>,
    pub mask_token: Tensor<T>,
    pub decoder: Vec<Block<T>>,
    pub dec_norm_g: Tensor<T>,
    pub dec_norm_b: Tensor<T>,
    pub head_w: Tensor<T>,
    pub head_b: Tensor<T>,
    pub enc_pos: Tensor<T>,
    pub dec_pos: Tensor<T>,
}

impl<T: Real> ParamSet<T> for MaeParams<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Tensor<T>)) {
        f("patch_w", &self.patch_w);
        f("patch_b", &self.patch_b);
        f("cls", &self.cls);
        for (i, b) in self.encoder.iter().enumerate() {
            b.visit(&format!("enc.{i}"), f);
        }
        f("enc_norm_g", &self.enc_norm_g);
        f("enc_norm_b", &self.enc_norm_b);
        f("dec_w", &self.dec_w);
        f("dec_b", &self.dec_b);
        f("mask_token", &self.mask_token);
        for (i, b) in self.decoder.iter().enumerate() {
            b.visit(&format!("dec.{i}"), f);
        }
        f("dec_norm_g", &self.dec_norm_g);
        f("dec_norm_b", &self.dec_norm_b);
        f("head_w", &self.head_w);
        f("head_b", &self.head_b);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f("patch_w", &mut self.patch_w);
        f("patch_b", &mut self.patch_b);
        f("cls", &mut self.cls);
        for (i, b) in self.encoder.iter_mut().enumerate() {
            b.visit_mut(&format!("enc.{i}"), f);
        }
        f("enc_norm_g", &mut self.enc_norm_g);
        f("enc_norm_b", &mut self.enc_norm_b);
        f("dec_w", &mut self.dec_w);
        f("dec_b", &mut self.dec_b);
        f("mask_token", &mut self.mask_token);
        for (i, b) in self.decoder.iter_mut().enumerate() {
            b.visit_mut(&format!("dec.{i}"), f);
        }
        f("dec_norm_g", &mut self.dec_norm_g);
        f("dec_norm_b", &mut self.dec_norm_b);
        f("head_w", &mut self.head_w);
        f("head_b", &mut self.head_b);
    }
}

/// Patch tensors of one batch split into visible inputs and masked targets.
pub(crate) struct Batch<T> {
    pub size: usize,
    pub visible: Vec<Vec<usize>>,
    pub masked: Vec<Vec<usize>>,
    /// `size * visible * cells` encoder inputs.
    pub x_vis: Vec<T>,
    /// `size * masked * cells` reconstruction targets.
    pub targets: Vec<T>,
}

impl<T: Real> Batch<T> {
    pub fn assemble(config: &MaeConfig, sets: &[PatchSet], masks: &[MaskSelection]) -> Result<Self> {
        let grid = config.grid()?;
        if sets.len() != masks.len() {
            return Err(Error::Contract(format!(
                "{} patch sets but {} masks",
                sets.len(),
                masks.len()
            )));
        }
        let k = grid.num_patches();
        let cells = grid.cells();
        let expect_scaled = config.scaling.is_log();
        let n_masked = masks.first().map(|m| m.masked.len()).unwrap_or(0);
        let mut batch = Batch {
            size: sets.len(),
            visible: Vec::with_capacity(sets.len()),
            masked: Vec::with_capacity(sets.len()),
            x_vis: Vec::with_capacity(sets.len() * (k - n_masked) * cells),
            targets: Vec::with_capacity(sets.len() * n_masked * cells),
        };
        for (ps, mask) in sets.iter().zip(masks) {
            if ps.grid != grid {
                return Err(Error::Contract(format!(
                    "patch grid {:?} does not match model grid {:?}",
                    ps.grid, grid
                )));
            }
            if ps.scaled != expect_scaled {
                return Err(Error::Contract(if expect_scaled {
                    "model expects log-scaled patterns but received raw values".into()
                } else {
                    "model was configured for raw patterns but received scaled values".into()
                }));
            }
            if mask.masked.len() != n_masked || mask.masked.len() + mask.visible.len() != k {
                return Err(Error::Contract("all masks in a batch must hide the same number of patches".into()));
            }
            for &v in &mask.visible {
                batch.x_vis.extend(ps.patch(v).iter().map(|&x| T::f(x as f64)));
            }
            for &m in &mask.masked {
                batch.targets.extend(ps.patch(m).iter().map(|&x| T::f(x as f64)));
            }
            batch.visible.push(mask.visible.clone());
            batch.masked.push(mask.masked.clone());
        }
        Ok(batch)
    }

    fn n_visible(&self) -> usize {
        self.visible.first().map(Vec::len).unwrap_or(0)
    }
}

pub(crate) struct Forward<T> {
    enc_caches: Vec<BlockCache<T>>,
    enc_ln: LnCache<T>,
    z_patch: Vec<T>,
    dec_caches: Vec<BlockCache<T>>,
    dec_ln: LnCache<T>,
    dec_out: Vec<T>,
    /// `size * patches * cells` predictions for every patch position.
    pub pred: Vec<T>,
}

impl<T: Real> MaeParams<T> {
    pub fn init(config: &MaeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let grid = config.grid()?;
        let (de, dd, cells) = (config.encoder.width, config.decoder.width, grid.cells());
        let std = config.init_std;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = (0..config.encoder.layers)
            .map(|_| Block::new(de, config.encoder.mlp, std, &mut rng))
            .collect();
        let patch_w = trunc_normal(&[cells, de], std, &mut rng);
        let cls = trunc_normal(&[de], std, &mut rng);
        let dec_w = trunc_normal(&[de, dd], std, &mut rng);
        let mask_token = trunc_normal(&[dd], std, &mut rng);
        let decoder = (0..config.decoder.layers)
            .map(|_| Block::new(dd, config.decoder.mlp, std, &mut rng))
            .collect();
        let head_w = trunc_normal(&[dd, cells], std, &mut rng);
        let positions = grid.positions();
        Ok(MaeParams {
            config: config.clone(),
            patch_w,
            patch_b: Tensor::zeros(&[de]),
            cls,
            encoder,
            enc_norm_g: Tensor::filled(&[de], T::one()),
            enc_norm_b: Tensor::zeros(&[de]),
            dec_w,
            dec_b: Tensor::zeros(&[dd]),
            mask_token,
            decoder,
            dec_norm_g: Tensor::filled(&[dd], T::one()),
            dec_norm_b: Tensor::zeros(&[dd]),
            head_w,
            head_b: Tensor::zeros(&[cells]),
            enc_pos: sincos_2d(de, &positions),
            dec_pos: sincos_2d(dd, &positions),
        })
    }

    pub fn grid(&self) -> PatchGrid {
        self.config.grid().expect("validated at construction")
    }

    pub fn embed_dim(&self) -> usize {
        self.config.encoder.width
    }

    pub fn cast<U: Real>(&self) -> MaeParams<U> {
        let c = |t: &Tensor<T>| t.cast::<U>();
        let cb = |b: &Block<T>| Block {
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
        };
        MaeParams {
            config: self.config.clone(),
            patch_w: c(&self.patch_w),
            patch_b: c(&self.patch_b),
            cls: c(&self.cls),
            encoder: self.encoder.iter().map(cb).collect(),
            enc_norm_g: c(&self.enc_norm_g),
            enc_norm_b: c(&self.enc_norm_b),
            dec_w: c(&self.dec_w),
            dec_b: c(&self.dec_b),
            mask_token: c(&self.mask_token),
            decoder: self.decoder.iter().map(cb).collect(),
            dec_norm_g: c(&self.dec_norm_g),
            dec_norm_b: c(&self.dec_norm_b),
            head_w: c(&self.head_w),
            head_b: c(&self.head_b),
            enc_pos: c(&self.enc_pos),
            dec_pos: c(&self.dec_pos),
        }
    }

    fn enc_shape(&self, batch: usize, seq: usize) -> AttnShape {
        AttnShape {
            batch,
            seq,
            heads: self.config.encoder.heads,
            causal: false,
        }
    }

    /// Encoder over `[CLS]` plus the given patches; returns the normalized
    /// output rows (`size * (1 + per_sample) * width`) and caches.
    fn encode(&self, x_patches: &[T], positions: &[Vec<usize>]) -> (Vec<T>, Vec<BlockCache<T>>, LnCache<T>) {
        let de = self.config.encoder.width;
        let cells = self.grid().cells();
        let size = positions.len();
        let per = positions.first().map(Vec::len).unwrap_or(0);
        let seq = per + 1;
        let e = ops::linear(x_patches, &self.patch_w.data, Some(&self.patch_b.data), size * per, cells, de);
        let mut x = vec![T::zero(); size * seq * de];
        for (s, pos) in positions.iter().enumerate() {
            x[s * seq * de..s * seq * de + de].copy_from_slice(&self.cls.data);
            for (j, &k) in pos.iter().enumerate() {
                let row = (s * seq + 1 + j) * de;
                let src = &e[(s * per + j) * de..(s * per + j + 1) * de];
                let pe = &self.enc_pos.data[k * de..(k + 1) * de];
                for c in 0..de {
                    x[row + c] = src[c] + pe[c];
                }
            }
        }
        let (h, caches) = forward_stack(&self.encoder, x, self.enc_shape(size, seq), None);
        let (z, ln) = ops::layer_norm(&h, &self.enc_norm_g.data, &self.enc_norm_b.data, de);
        (z, caches, ln)
    }

    pub(crate) fn forward(&self, batch: &Batch<T>) -> Forward<T> {
        let (de, dd) = (self.config.encoder.width, self.config.decoder.width);
        let grid = self.grid();
        let (k, cells) = (grid.num_patches(), grid.cells());
        let size = batch.size;
        let v = batch.n_visible();
        let seq = v + 1;

        let (z, enc_caches, enc_ln) = self.encode(&batch.x_vis, &batch.visible);
        let mut z_patch = Vec::with_capacity(size * v * de);
        for s in 0..size {
            z_patch.extend_from_slice(&z[(s * seq + 1) * de..(s + 1) * seq * de]);
        }
        let emb = ops::linear(&z_patch, &self.dec_w.data, Some(&self.dec_b.data), size * v, de, dd);
        let mut y = vec![T::zero(); size * k * dd];
        for s in 0..size {
            let mut slot = vec![None; k];
            for (j, &p) in batch.visible[s].iter().enumerate() {
                slot[p] = Some(j);
            }
            for (p, sl) in slot.iter().enumerate() {
                let row = (s * k + p) * dd;
                let src = match sl {
                    Some(j) => &emb[(s * v + j) * dd..(s * v + j + 1) * dd],
                    None => &self.mask_token.data[..],
                };
                let pe = &self.dec_pos.data[p * dd..(p + 1) * dd];
                for c in 0..dd {
                    y[row + c] = src[c] + pe[c];
                }
            }
        }
        let shape = AttnShape {
            batch: size,
            seq: k,
            heads: self.config.decoder.heads,
            causal: false,
        };
        let (hd, dec_caches) = forward_stack(&self.decoder, y, shape, None);
        let (dec_out, dec_ln) = ops::layer_norm(&hd, &self.dec_norm_g.data, &self.dec_norm_b.data, dd);
        let pred = ops::linear(&dec_out, &self.head_w.data, Some(&self.head_b.data), size * k, dd, cells);
        Forward {
            enc_caches,
            enc_ln,
            z_patch,
            dec_caches,
            dec_ln,
            dec_out,
            pred,
        }
    }

    pub(crate) fn backward(&self, batch: &Batch<T>, fwd: &Forward<T>, dpred: &[T]) -> MaeParams<T> {
        let (de, dd) = (self.config.encoder.width, self.config.decoder.width);
        let grid = self.grid();
        let (k, cells) = (grid.num_patches(), grid.cells());
        let size = batch.size;
        let v = batch.n_visible();
        let seq = v + 1;
        let mut g = self.zeros_like();

        let d_out = ops::linear_backward(
            &fwd.dec_out,
            &self.head_w.data,
            dpred,
            size * k,
            dd,
            cells,
            &mut g.head_w.data,
            Some(&mut g.head_b.data),
            true,
        )
        .unwrap();
        let d_hd = ops::layer_norm_backward(&d_out, &self.dec_norm_g.data, &fwd.dec_ln, dd, &mut g.dec_norm_g.data, &mut g.dec_norm_b.data);
        let shape = AttnShape {
            batch: size,
            seq: k,
            heads: self.config.decoder.heads,
            causal: false,
        };
        let dy = backward_stack(&self.decoder, &fwd.dec_caches, d_hd, shape, None, &mut g.decoder);

        let mut d_emb = vec![T::zero(); size * v * dd];
        for s in 0..size {
            let mut slot = vec![None; k];
            for (j, &p) in batch.visible[s].iter().enumerate() {
                slot[p] = Some(j);
            }
            for (p, sl) in slot.iter().enumerate() {
                let src = &dy[(s * k + p) * dd..(s * k + p + 1) * dd];
                match sl {
                    Some(j) => d_emb[(s * v + j) * dd..(s * v + j + 1) * dd].copy_from_slice(src),
                    None => ops::add_in_place(&mut g.mask_token.data, src),
                }
            }
        }
        let dzp = ops::linear_backward(
            &fwd.z_patch,
            &self.dec_w.data,
            &d_emb,
            size * v,
            de,
            dd,
            &mut g.dec_w.data,
            Some(&mut g.dec_b.data),
            true,
        )
        .unwrap();
        let mut dz = vec![T::zero(); size * seq * de];
        for s in 0..size {
            dz[(s * seq + 1) * de..(s + 1) * seq * de].copy_from_slice(&dzp[s * v * de..(s + 1) * v * de]);
        }
        let dh = ops::layer_norm_backward(&dz, &self.enc_norm_g.data, &fwd.enc_ln, de, &mut g.enc_norm_g.data, &mut g.enc_norm_b.data);
        let dx = backward_stack(&self.encoder, &fwd.enc_caches, dh, self.enc_shape(size, seq), None, &mut g.encoder);

        let mut de_in = vec![T::zero(); size * v * de];
        for s in 0..size {
            ops::add_in_place(&mut g.cls.data, &dx[s * seq * de..(s * seq + 1) * de]);
            de_in[s * v * de..(s + 1) * v * de].copy_from_slice(&dx[(s * seq + 1) * de..(s + 1) * seq * de]);
        }
        ops::linear_backward(
            &batch.x_vis,
            &self.patch_w.data,
            &de_in,
            size * v,
            cells,
            de,
            &mut g.patch_w.data,
            Some(&mut g.patch_b.data),
            false,
        );
        g
    }

    /// Masked-patch reconstruction loss and `dL/dpred` for a forward pass.
    pub(crate) fn loss(&self, batch: &Batch<T>, pred: &[T]) -> (f64, Vec<T>) {
        let grid = self.grid();
        let (k, cells) = (grid.num_patches(), grid.cells());
        let validity = grid.validity();
        let mut count = 0usize;
        for masked in &batch.masked {
            for &p in masked {
                count += validity[p * cells..(p + 1) * cells].iter().filter(|&&v| v).count();
            }
        }
        let mut dpred = vec![T::zero(); pred.len()];
        if count == 0 {
            return (0.0, dpred);
        }
        let scale = T::f(2.0 / count as f64);
        let mut sum = 0.0f64;
        let m = batch.masked.first().map(Vec::len).unwrap_or(0);
        for (s, masked) in batch.masked.iter().enumerate() {
            for (j, &p) in masked.iter().enumerate() {
                let valid = &validity[p * cells..(p + 1) * cells];
                let target = &batch.targets[(s * m + j) * cells..(s * m + j + 1) * cells];
                let base = (s * k + p) * cells;
                for c in 0..cells {
                    if valid[c] {
                        let diff = pred[base + c] - target[c];
                        sum += diff.as_f64() * diff.as_f64();
                        dpred[base + c] = scale * diff;
                    }
                }
            }
        }
        (sum / count as f64, dpred)
    }

    /// Loss and parameter gradients for one batch.
    pub(crate) fn loss_and_grad(&self, batch: &Batch<T>) -> (f64, MaeParams<T>) {
        let fwd = self.forward(batch);
        let (loss, dpred) = self.loss(batch, &fwd.pred);
        let grads = self.backward(batch, &fwd, &dpred);
        (loss, grads)
    }

    /// [CLS] embeddings of unmasked patch sets.
    pub fn embed_batch(&self, sets: &[PatchSet]) -> Result<Vec<Vec<f32>>> {
        if sets.is_empty() {
            return Ok(Vec::new());
        }
        let k = self.grid().num_patches();
        let masks: Vec<_> = sets.iter().map(|_| MaskSelection::none(k)).collect();
        let batch = Batch::<T>::assemble(&self.config, sets, &masks)?;
        let (z, _, _) = self.encode(&batch.x_vis, &batch.visible);
        let de = self.config.encoder.width;
        let seq = k + 1;
        Ok((0..sets.len())
            .map(|s| z[s * seq * de..(s * seq + 1) * de].iter().map(|x| x.as_f64() as f32).collect())
            .collect())
    }
}

/// Mean squared error over `valid` cells.
pub fn masked_mse(pred: &[f32], target: &[f32], valid: &[bool]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((&p, &t), &ok) in pred.iter().zip(target).zip(valid) {
        if ok {
            sum += ((p - t) as f64).powi(2);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}
