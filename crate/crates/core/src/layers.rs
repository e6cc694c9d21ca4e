use rand::Rng;

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Affine map `x·W + b` with `W` stored as `[in×out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Glorot-uniform weights, zero bias.
    pub fn init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Linear {
            weight: Tensor::uniform(&[fan_in, fan_out], bound, rng),
            bias: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Linear {
            weight: Tensor::zeros(&[fan_in, fan_out]),
            bias: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn apply(tape: &mut Tape, weight: Var, bias: Var, x: Var) -> Result<Var> {
        let xw = tape.matmul(x, weight)?;
        tape.add_row(xw, bias)
    }
}

/// A model whose trainable state is an ordered list of tensors.
pub trait Parameterized {
    fn params(&self) -> Vec<&Tensor>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    /// `true` for tensors subject to weight decay (weights, not biases).
    fn decay_mask(&self) -> Vec<bool>;

    /// Registers every parameter on `tape`, in [`Parameterized::params`] order.
    fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params().into_iter().map(|p| tape.param(p.clone())).collect()
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }
}

pub(crate) fn linear_params<'a>(layers: &[&'a Linear]) -> Vec<&'a Tensor> {
    layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
}
