use super::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::f(x.as_f64())).collect(),
        }
    }
}

/// A named collection of parameter tensors with a fixed visiting order.
pub trait ParamSet<T: Real>: Clone {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Tensor<T>));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>));

    fn zero(&mut self) {
        self.visit_mut(&mut |_, t| t.data.iter_mut().for_each(|x| *x = T::zero()));
    }

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.zero();
        z
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.len());
        n
    }

    fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit(&mut |name, _| out.push(name.to_string()));
        out
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |_, t| ok &= t.data.iter().all(|x| x.is_finite()));
        ok
    }

    /// Flat copies of all tensors in visiting order.
    fn flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit(&mut |_, t| out.extend_from_slice(&t.data));
        out
    }

    /// Sum of squares over all entries.
    fn sq_norm(&self) -> f64 {
        let mut s = 0.0;
        self.visit(&mut |_, t| s += t.data.iter().map(|x| x.as_f64().powi(2)).sum::<f64>());
        s
    }

    /// Mutable access to the scalar at flat index `idx`.
    fn with_scalar_mut<R>(&mut self, idx: usize, f: impl FnOnce(&mut T) -> R) -> Option<R> {
        let mut base = 0usize;
        let mut f = Some(f);
        let mut out = None;
        self.visit_mut(&mut |_, t| {
            if out.is_none() && idx >= base && idx < base + t.len() {
                if let Some(f) = f.take() {
                    out = Some(f(&mut t.data[idx - base]));
                }
            }
            base += t.len();
        });
        out
    }

    /// Name and local offset of the scalar at flat index `idx`.
    fn locate(&self, idx: usize) -> Option<(String, usize)> {
        let mut base = 0usize;
        let mut out = None;
        self.visit(&mut |name, t| {
            if out.is_none() && idx >= base && idx < base + t.len() {
                out = Some((name.to_string(), idx - base));
            }
            base += t.len();
        });
        out
    }
}
