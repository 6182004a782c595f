use serde::{Deserialize, Serialize};

use super::{ParamSet, Real};

/// Linear warmup followed by cosine annealing to `floor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineSchedule {
    pub peak: f64,
    pub floor: f64,
    pub total: usize,
    pub warmup: usize,
}

impl CosineSchedule {
    pub fn new(peak: f64, total: usize, warmup_frac: f64) -> Self {
        let warmup = ((total as f64 * warmup_frac).round() as usize).min(total.saturating_sub(1));
        CosineSchedule {
            peak,
            floor: 0.0,
            total,
            warmup,
        }
    }

    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup {
            return self.peak * (step + 1) as f64 / self.warmup as f64;
        }
        let span = self.total.saturating_sub(1).saturating_sub(self.warmup);
        if span == 0 {
            return self.floor;
        }
        let progress = ((step - self.warmup) as f64 / span as f64).min(1.0);
        self.floor + 0.5 * (self.peak - self.floor) * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// Adam with decoupled weight decay, applied to tensors of rank >= 2.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub clip_norm: Option<f64>,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: u64,
}

impl<T: Real> AdamW<T> {
    pub fn new(weight_decay: f64) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay,
            clip_norm: Some(1.0),
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update and returns the pre-clip gradient norm.
    pub fn step<P: ParamSet<T>>(&mut self, params: &mut P, grads: &P, lr: f64) -> f64 {
        let mut gs: Vec<&[T]> = Vec::new();
        grads.visit(&mut |_, t| gs.push(&t.data));
        if self.m.is_empty() {
            self.m = gs.iter().map(|g| vec![T::zero(); g.len()]).collect();
            self.v = self.m.clone();
        }
        let norm = grads.sq_norm().sqrt();
        let clip = match self.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        let step = T::f(lr / bc1);
        let (tb1, tb2) = (T::f(b1), T::f(b2));
        let (ob1, ob2) = (T::f(1.0 - b1), T::f(1.0 - b2));
        let tclip = T::f(clip);
        let inv_bc2 = T::f(1.0 / bc2);
        let eps = T::f(self.eps);
        let decay = T::f(1.0 - lr * self.weight_decay);
        let mut idx = 0;
        let (ms, vs) = (&mut self.m, &mut self.v);
        params.visit_mut(&mut |_, p| {
            let g = gs[idx];
            let (m, v) = (&mut ms[idx], &mut vs[idx]);
            let decayed = p.shape.len() >= 2;
            for i in 0..p.data.len() {
                let gi = g[i] * tclip;
                m[i] = tb1 * m[i] + ob1 * gi;
                v[i] = tb2 * v[i] + ob2 * gi * gi;
                if decayed {
                    p.data[i] *= decay;
                }
                p.data[i] -= step * m[i] / ((v[i] * inv_bc2).sqrt() + eps);
            }
            idx += 1;
        });
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_warms_up_then_anneals_to_floor() {
        let s = CosineSchedule::new(1e-3, 1000, 0.05);
        assert_eq!(s.warmup, 50);
        assert!(s.lr(0) < s.lr(10));
        assert!((s.lr(49) - 1e-3).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for t in 50..1000 {
            let lr = s.lr(t);
            assert!(lr <= prev + 1e-18);
            prev = lr;
        }
        assert!(s.lr(999).abs() < 1e-6);
    }
}
