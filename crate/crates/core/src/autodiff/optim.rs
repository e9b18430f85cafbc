use rand::Rng;

use super::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Named trainable tensor with its gradient accumulator and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub m: Tensor,
    pub v: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let (r, c) = value.shape();
        Self { name: name.into(), value, grad: Tensor::zeros(r, c), m: Tensor::zeros(r, c), v: Tensor::zeros(r, c) }
    }
}

/// Ordered parameter collection plus the optimizer step counter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    pub params: Vec<Parameter>,
    /// Adam steps taken so far.
    pub step: u64,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a parameter and returns its index.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        self.params.push(Parameter::new(name, value));
        self.params.len() - 1
    }

    /// Dense layer `i → o`: weight `i×o` with uniform fan-in scaling
    /// `U(−√(6/i), √(6/i))`, zero bias. Returns `(w, b)` indices.
    pub fn add_linear<R: Rng>(&mut self, name: &str, i: usize, o: usize, rng: &mut R) -> (usize, usize) {
        let bound = (6.0 / i as f64).sqrt();
        let w = Tensor::from_fn(i, o, |_, _| rng.random_range(-bound..bound));
        (self.add(format!("{name}.w"), w), self.add(format!("{name}.b"), Tensor::zeros(1, o)))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Puts every parameter on the tape as a leaf, in order.
    pub fn bind(&self, tape: &Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf(p.value.clone())).collect()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            let (r, c) = p.value.shape();
            p.grad = Tensor::zeros(r, c);
        }
    }

    /// Adds the adjoints of `vars` (from [`Self::bind`]) into the gradients.
    pub fn accumulate(&mut self, grads: &Gradients, vars: &[Var]) {
        for (p, &v) in self.params.iter_mut().zip(vars) {
            if let Some(g) = grads.get(v) {
                p.grad.add_assign(g);
            }
        }
    }

    /// Flat copy of every value, in order.
    pub fn flat_values(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.value.data().iter().copied()).collect()
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.grad.data().iter().copied()).collect()
    }

    pub fn set_flat_values(&mut self, values: &[f64]) {
        let mut k = 0;
        for p in &mut self.params {
            let n = p.value.len();
            p.value.data_mut().copy_from_slice(&values[k..k + n]);
            k += n;
        }
    }

    /// Name of the first parameter holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.params.iter().find(|p| !p.value.is_finite()).map(|p| p.name.as_str())
    }

    /// Replaces values (and optimizer moments when present) from named
    /// tensors; every parameter must be found with a matching shape and
    /// finite values.
    pub fn load_named(&mut self, tensors: &[(String, Tensor)]) -> Result<()> {
        let find = |name: &str| tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t);
        for p in &mut self.params {
            let t = find(&p.name).ok_or_else(|| Error::Checkpoint(format!("missing tensor `{}`", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` has shape {:?}, expected {:?}",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )));
            }
            if !t.is_finite() {
                return Err(Error::NonFinite { term: format!("parameter `{}`", p.name) });
            }
            p.value = t.clone();
            if let (Some(m), Some(v)) = (find(&format!("{}#m", p.name)), find(&format!("{}#v", p.name))) {
                p.m = m.clone();
                p.v = v.clone();
            }
        }
        Ok(())
    }

    /// Values plus optimizer moments as named tensors.
    pub fn to_named(&self, with_moments: bool) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for p in &self.params {
            out.push((p.name.clone(), p.value.clone()));
            if with_moments {
                out.push((format!("{}#m", p.name), p.m.clone()));
                out.push((format!("{}#v", p.name), p.v.clone()));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 0.002, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update from the accumulated gradients.
pub fn adam_step(params: &mut ParamSet, lr: f64, betas: (f64, f64), eps: f64) {
    params.step += 1;
    let t = params.step as i32;
    let (b1, b2) = betas;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for p in &mut params.params {
        let g = p.grad.data();
        let m = p.m.data_mut();
        for (mi, gi) in m.iter_mut().zip(g) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
        }
        let v = p.v.data_mut();
        for (vi, gi) in v.iter_mut().zip(g) {
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
        }
        let (m, v) = (p.m.data(), p.v.data());
        let w = p.value.data_mut();
        for k in 0..w.len() {
            let mh = m[k] / c1;
            let vh = v[k] / c2;
            w[k] -= lr * mh / (vh.sqrt() + eps);
        }
    }
}

impl AdamConfig {
    pub fn step(&self, params: &mut ParamSet) {
        adam_step(params, self.lr, (self.beta1, self.beta2), self.eps);
    }
}
