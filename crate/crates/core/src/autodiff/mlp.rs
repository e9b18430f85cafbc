use rand::Rng;

use super::{ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Fully connected stack with ReLU between layers and a linear output.
/// Weights live in a [`ParamSet`]; the layer records their indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    layers: Vec<(usize, usize)>,
}

impl Mlp {
    pub fn new<R: Rng>(params: &mut ParamSet, name: &str, sizes: &[usize], rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!("`{name}` needs at least two positive layer sizes, got {sizes:?}")));
        }
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(k, w)| params.add_linear(&format!("{name}.{k}"), w[0], w[1], rng))
            .collect();
        Ok(Self { sizes: sizes.to_vec(), layers })
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    /// Zeroes the output layer so the network initially emits 0.
    pub fn zero_output(&self, params: &mut ParamSet) {
        let (w, b) = *self.layers.last().unwrap();
        for i in [w, b] {
            let (r, c) = params.params[i].value.shape();
            params.params[i].value = Tensor::zeros(r, c);
        }
    }

    /// `x: n×input → n×output`, with `vars` from [`ParamSet::bind`].
    pub fn forward(&self, tape: &Tape, vars: &[Var], x: Var) -> Result<Var> {
        let mut h = x;
        for (k, &(w, b)) in self.layers.iter().enumerate() {
            h = tape.linear(h, vars[w], vars[b])?;
            if k + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }
}
