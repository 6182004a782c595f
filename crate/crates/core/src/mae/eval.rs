use std::collections::BTreeMap;
use std::fmt::Write;

use super::model::{Batch, MaeParams};
use super::{composite, prepare};
use crate::error::{Error, Result};
use crate::pattern::{depatchify, select_mask, AttentionPattern, MaskSelection};

/// Mean and population standard deviation of per-pattern masked loss.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalReport {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl EvalReport {
    pub fn from_losses(losses: &[f64]) -> Self {
        let n = losses.len();
        if n == 0 {
            return EvalReport {
                mean: 0.0,
                std: 0.0,
                count: 0,
            };
        }
        let mean = losses.iter().sum::<f64>() / n as f64;
        let var = losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n as f64;
        EvalReport {
            mean,
            std: var.sqrt(),
            count: n,
        }
    }

    /// `mean (std)` in units of 1e-3.
    pub fn milli(&self) -> String {
        format!("{:.2} ({:.2})", self.mean * 1e3, self.std * 1e3)
    }
}

fn eval_mask_seed(eval_seed: u64, index: usize) -> u64 {
    eval_seed ^ (index as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Per-pattern masked losses under the fixed evaluation masks.
pub fn pattern_losses(params: &MaeParams<f32>, dataset: &[AttentionPattern]) -> Result<Vec<f64>> {
    let c = &params.config;
    let grid = params.grid();
    let (k, cells) = (grid.num_patches(), grid.cells());
    let validity = grid.validity();
    let mut out = Vec::with_capacity(dataset.len());
    for (chunk_idx, chunk) in dataset.chunks(64).enumerate() {
        let sets = prepare(params, chunk)?;
        let masks = (0..chunk.len())
            .map(|i| select_mask(k, c.mask_ratio, eval_mask_seed(c.eval_seed, chunk_idx * 64 + i)))
            .collect::<Result<Vec<_>>>()?;
        let batch = Batch::<f32>::assemble(c, &sets, &masks)?;
        let pred = params.forward(&batch).pred;
        for (s, mask) in masks.iter().enumerate() {
            let (mut sum, mut n) = (0.0f64, 0usize);
            for &p in &mask.masked {
                let target = sets[s].patch(p);
                let valid = &validity[p * cells..(p + 1) * cells];
                let pr = &pred[(s * k + p) * cells..(s * k + p + 1) * cells];
                for cell in 0..cells {
                    if valid[cell] {
                        sum += ((pr[cell] - target[cell]) as f64).powi(2);
                        n += 1;
                    }
                }
            }
            out.push(if n == 0 { 0.0 } else { sum / n as f64 });
        }
    }
    Ok(out)
}

pub fn evaluate(params: &MaeParams<f32>, dataset: &[AttentionPattern]) -> Result<EvalReport> {
    Ok(EvalReport::from_losses(&pattern_losses(params, dataset)?))
}

/// Loss matrix keyed by (trained-on, evaluated-on) model id.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossEval {
    pub trained: Vec<String>,
    pub evaluated: Vec<String>,
    /// `cells[i][j]` is model `trained[i]` on dataset `evaluated[j]`.
    pub cells: Vec<Vec<EvalReport>>,
}

impl CrossEval {
    pub fn get(&self, trained: &str, evaluated: &str) -> Option<EvalReport> {
        let i = self.trained.iter().position(|t| t == trained)?;
        let j = self.evaluated.iter().position(|e| e == evaluated)?;
        Some(self.cells[i][j])
    }

    /// Plain-text table with losses in units of 1e-3 and std in parentheses.
    pub fn render(&self) -> String {
        let mut header = vec!["Trained \\ Evaluated".to_string()];
        header.extend(self.evaluated.iter().map(|e| format!("{e} Loss (x10^-3)")));
        let mut rows = vec![header];
        for (i, t) in self.trained.iter().enumerate() {
            let mut row = vec![t.clone()];
            row.extend(self.cells[i].iter().map(EvalReport::milli));
            rows.push(row);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (ri, row) in rows.iter().enumerate() {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(cell, &w)| format!("{cell:<w$}"))
                .collect();
            let _ = writeln!(out, "{}", line.join(" | ").trim_end());
            if ri == 0 {
                let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
                let _ = writeln!(out, "{}", rule.join("-+-"));
            }
        }
        out
    }

    /// CSV with one row per (trained, evaluated) pair.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("trained,evaluated,mean,std,count\n");
        for (i, t) in self.trained.iter().enumerate() {
            for (j, e) in self.evaluated.iter().enumerate() {
                let r = self.cells[i][j];
                let _ = writeln!(out, "{t},{e},{},{},{}", r.mean, r.std, r.count);
            }
        }
        out
    }
}

/// Evaluates every model on every dataset. Each model id must also name a dataset.
pub fn cross_evaluate(
    models: &BTreeMap<String, MaeParams<f32>>,
    datasets: &BTreeMap<String, Vec<AttentionPattern>>,
) -> Result<CrossEval> {
    for id in models.keys() {
        if !datasets.contains_key(id) {
            return Err(Error::Data(format!("no evaluation dataset for model '{id}'")));
        }
    }
    let sizes: Vec<usize> = models.values().map(|m| m.config.pattern_size).collect();
    if sizes.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::Config("cross-evaluated models must share pattern_size".into()));
    }
    let mut cells = Vec::with_capacity(models.len());
    for params in models.values() {
        cells.push(
            datasets
                .values()
                .map(|d| evaluate(params, d))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    Ok(CrossEval {
        trained: models.keys().cloned().collect(),
        evaluated: datasets.keys().cloned().collect(),
        cells,
    })
}

/// One masked reconstruction; grids are packed lower triangles in model space.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub n: usize,
    pub mask: MaskSelection,
    pub original: Vec<f32>,
    /// Cells hidden from the encoder.
    pub hidden: Vec<bool>,
    /// Visible cells from `original`, masked cells from the model.
    pub composite: Vec<f32>,
    pub loss: f64,
}

pub fn reconstruct(params: &MaeParams<f32>, pattern: &AttentionPattern, mask_seed: u64) -> Result<Reconstruction> {
    let sets = prepare(params, std::slice::from_ref(pattern))?;
    let grid = params.grid();
    let mask = select_mask(grid.num_patches(), params.config.mask_ratio, mask_seed)?;
    let fwd = super::forward_train(params, &sets, std::slice::from_ref(&mask))?;
    let comp = composite(&sets[0], &mask, &fwd.reconstructions[0]);
    let mut hidden_set = sets[0].clone();
    let cells = grid.cells();
    for p in 0..grid.num_patches() {
        let v = if mask.is_masked(p) { 1.0 } else { 0.0 };
        hidden_set.values[p * cells..(p + 1) * cells].iter_mut().for_each(|x| *x = v);
    }
    let n = params.config.pattern_size;
    let hidden = depatchify(&hidden_set).iter().map(|&v| v > 0.5).collect();
    Ok(Reconstruction {
        n,
        original: depatchify(&sets[0]),
        hidden,
        composite: depatchify(&comp),
        loss: fwd.loss,
        mask,
    })
}
