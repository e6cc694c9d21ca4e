//! SGD with momentum and a cosine-annealed learning rate.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `lr0 · ½ · (1 + cos(π·epoch/total))`.
pub fn cosine_lr(epoch: usize, total: usize, lr0: f64) -> Result<f64> {
    if epoch > total || total == 0 {
        return Err(Error::Contract(format!("epoch {epoch} outside 0..={total}")));
    }
    Ok(lr0 * 0.5 * (1.0 + (PI * epoch as f64 / total as f64).cos()))
}

/// One momentum step on a single tensor:
/// `v ← μ·v + (g + wd·w)`, then `w ← w - lr·v`.
pub fn sgd_step(
    param: &mut Tensor,
    grad: &Tensor,
    velocity: &mut Tensor,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != velocity.shape() {
        return Err(Error::shape("sgd_step", param.shape(), grad.shape()));
    }
    for ((w, &g), v) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(velocity.data_mut())
    {
        *v = momentum * *v + (g + weight_decay * *w);
        *w -= lr * *v;
    }
    Ok(())
}

/// Momentum buffers for a fixed list of parameters.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(params: &[&Tensor], momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    /// Updates every parameter; decay only applies where `decay_mask` is set.
    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor], decay_mask: &[bool], lr: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.velocity.len() {
            return Err(Error::Contract(format!(
                "{} params, {} grads, {} velocity buffers",
                params.len(),
                grads.len(),
                self.velocity.len()
            )));
        }
        for (k, p) in params.into_iter().enumerate() {
            let wd = if decay_mask[k] { self.weight_decay } else { 0.0 };
            sgd_step(p, &grads[k], &mut self.velocity[k], lr, self.momentum, wd)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0, 10, 0.1).unwrap(), 0.1);
        assert!((cosine_lr(5, 10, 0.1).unwrap() - 0.05).abs() < 1e-17);
        assert!(cosine_lr(10, 10, 0.1).unwrap().abs() < 1e-17);
        assert!(cosine_lr(11, 10, 0.1).is_err());
    }

    #[test]
    fn plain_descent_without_momentum() {
        let mut w = Tensor::new(&[2], vec![1.0, -2.0]).unwrap();
        let g = Tensor::new(&[2], vec![0.5, 0.25]).unwrap();
        let mut v = Tensor::zeros(&[2]);
        sgd_step(&mut w, &g, &mut v, 0.1, 0.0, 0.0).unwrap();
        assert_eq!(w.data(), &[1.0 - 0.05, -2.0 - 0.025]);
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut w = Tensor::new(&[2], vec![1.0, -2.0]).unwrap();
        let mut v = Tensor::zeros(&[2]);
        sgd_step(&mut w, &Tensor::zeros(&[2]), &mut v, 0.1, 0.9, 0.0).unwrap();
        assert_eq!(w.data(), &[1.0, -2.0]);
    }

    #[test]
    fn two_momentum_steps() {
        // hand recurrence: v1 = 0.5, w1 = 0.95; v2 = 0.9*0.5 + 0.5 = 0.95, w2 = 0.95 - 0.095
        let mut w = Tensor::scalar(1.0);
        let g = Tensor::scalar(0.5);
        let mut v = Tensor::scalar(0.0);
        sgd_step(&mut w, &g, &mut v, 0.1, 0.9, 0.0).unwrap();
        assert!((w.data()[0] - 0.95).abs() < 1e-15);
        sgd_step(&mut w, &g, &mut v, 0.1, 0.9, 0.0).unwrap();
        assert!((v.data()[0] - 0.95).abs() < 1e-15);
        assert!((w.data()[0] - 0.855).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch() {
        let mut w = Tensor::zeros(&[2]);
        let mut v = Tensor::zeros(&[2]);
        assert!(sgd_step(&mut w, &Tensor::zeros(&[3]), &mut v, 0.1, 0.9, 0.0).is_err());
    }
}
