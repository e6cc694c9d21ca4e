//! The ANN teacher: a ReLU MLP producing one logits vector per sample.

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{linear_params, Linear, Parameterized};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TeacherModel {
    pub layers: Vec<Linear>,
}

impl TeacherModel {
    /// `sizes` is `[input, hidden..., classes]`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Contract(format!("bad teacher layer sizes {sizes:?}")));
        }
        Ok(TeacherModel {
            layers: sizes.windows(2).map(|w| Linear::init(w[0], w[1], rng)).collect(),
        })
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Contract(format!("bad teacher layer sizes {sizes:?}")));
        }
        Ok(TeacherModel {
            layers: sizes.windows(2).map(|w| Linear::zeros(w[0], w[1])).collect(),
        })
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].fan_in()];
        s.extend(self.layers.iter().map(Linear::fan_out));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn classes(&self) -> usize {
        self.layers.last().unwrap().fan_out()
    }

    pub fn forward_on(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var> {
        let last = self.layers.len() - 1;
        let mut h = x;
        for k in 0..=last {
            h = Linear::apply(tape, params[2 * k], params[2 * k + 1], h)?;
            if k < last {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    /// Logits `z^A` for a `[batch×input]` matrix.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        if x.shape().len() != 2 || x.cols() != self.input_dim() {
            return Err(Error::shape("teacher", x.shape(), &[self.input_dim()]));
        }
        let mut tape = Tape::new();
        let p = self.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let z = self.forward_on(&mut tape, &p, xv)?;
        Ok(tape.value(z).clone())
    }
}

impl Parameterized for TeacherModel {
    fn params(&self) -> Vec<&Tensor> {
        linear_params(&self.layers.iter().collect::<Vec<_>>())
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    fn decay_mask(&self) -> Vec<bool> {
        self.layers.iter().flat_map(|_| [true, false]).collect()
    }
}
