use rand::Rng;

use super::params::{glorot_uniform, ParamStore};
use super::tape::{Tape, Var};
use crate::error::Result;

/// Fully connected network with ReLU between layers and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    prefix: String,
    sizes: Vec<usize>,
}

impl Mlp {
    /// `sizes` lists the input width, every hidden width, then the output width.
    pub fn new(prefix: &str, sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs an input and an output width");
        Self {
            prefix: prefix.to_string(),
            sizes: sizes.to_vec(),
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    fn names(&self, layer: usize) -> (String, String) {
        (format!("{}.{layer}.w", self.prefix), format!("{}.{layer}.b", self.prefix))
    }

    /// Registers Glorot-uniform weights and zero biases.
    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        for (layer, pair) in self.sizes.windows(2).enumerate() {
            let (w, b) = self.names(layer);
            store.insert(&w, glorot_uniform(rng, pair[1], pair[0]))?;
            store.insert(&b, ndarray::Array2::zeros((1, pair[1])))?;
        }
        Ok(())
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let layers = self.sizes.len() - 1;
        let mut h = x;
        for layer in 0..layers {
            let (w, b) = self.names(layer);
            let (w, b) = (tape.param(&w)?, tape.param(&b)?);
            h = tape.affine(h, w, b)?;
            if layer + 1 < layers {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }
}
