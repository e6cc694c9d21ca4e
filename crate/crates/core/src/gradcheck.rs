//! Finite-difference verification of the unrolled network's gradients.
//!
//! Binary spikes make the forward pass piecewise constant, so the check
//! switches the network to smooth spikes `σ(a_s·(v-θ))` and keeps the reset
//! path differentiable. The surrogate derivative is then the exact
//! derivative, and the tape's BPTT gradient must agree with central
//! differences. A detached TWSD target is held at its unperturbed value on
//! the finite-difference side.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::layers::Parameterized;
use crate::losses::{one_hot, EnsembleTarget, LossGraph, LossMode, LossWeights};
use crate::snn::{LifConfig, SnnNetwork};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Entries whose gradients are both below this are compared absolutely.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckConfig {
    pub sizes: Vec<usize>,
    pub timesteps: usize,
    pub batch: usize,
    pub step: f64,
    pub seed: u64,
    pub weights: LossWeights,
    pub detach_ensemble_target: bool,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            sizes: vec![2, 8, 8, 4],
            timesteps: 3,
            batch: 4,
            step: 1e-5,
            seed: 0,
            weights: LossWeights::default(),
            detach_ensemble_target: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckResult {
    pub mode: LossMode,
    pub params: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

/// `|a - n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

struct Problem {
    net: SnnNetwork,
    x: Tensor,
    teacher: Tensor,
    y: Tensor,
}

impl Problem {
    fn new(cfg: &GradcheckConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let lif = LifConfig {
            smooth_spikes: true,
            detach_reset: false,
            ..LifConfig::default()
        };
        let net = SnnNetwork::new(&cfg.sizes, lif, &mut rng)?;
        let classes = *cfg.sizes.last().unwrap();
        let x = Tensor::uniform(&[cfg.batch, cfg.sizes[0]], 2.0, &mut rng);
        let teacher = Tensor::uniform(&[cfg.batch, classes], 2.0, &mut rng);
        let labels: Vec<usize> = (0..cfg.batch).map(|_| rng.random_range(0..classes)).collect();
        Ok(Problem {
            net,
            x,
            teacher,
            y: one_hot(&labels, classes)?,
        })
    }

    /// Objective value, its gradients, and the ensemble logits.
    fn evaluate(
        &self,
        net: &SnnNetwork,
        cfg: &GradcheckConfig,
        mode: LossMode,
        target: EnsembleTarget<'_>,
        with_grads: bool,
    ) -> Result<(f64, Vec<Tensor>, Tensor)> {
        let mut tape = Tape::new();
        let params = net.bind(&mut tape);
        let x = tape.constant(self.x.clone());
        let u = net.unroll(&mut tape, &params, x, cfg.timesteps)?;
        let g = LossGraph::build(&mut tape, &u.logits, &self.teacher, &self.y, &cfg.weights, target)?;
        let root = g.objective(&mut tape, mode, &cfg.weights)?;
        let grads = if with_grads {
            let gr = tape.backward(root)?;
            params.iter().map(|&p| gr.wrt(p, tape.value(p))).collect()
        } else {
            Vec::new()
        };
        Ok((tape.value(root).data()[0], grads, tape.value(g.ensemble).clone()))
    }
}

/// Compares analytic and central-difference gradients for every parameter.
pub fn gradcheck(cfg: &GradcheckConfig, mode: LossMode) -> Result<GradcheckResult> {
    let problem = Problem::new(cfg)?;
    let target = if cfg.detach_ensemble_target {
        EnsembleTarget::Detached
    } else {
        EnsembleTarget::Tracked
    };
    let (_, analytic, ens) = problem.evaluate(&problem.net, cfg, mode, target, true)?;
    let fd_target = if cfg.detach_ensemble_target {
        EnsembleTarget::Fixed(&ens)
    } else {
        EnsembleTarget::Tracked
    };

    let mut net = problem.net.clone();
    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    for (k, grad) in analytic.iter().enumerate() {
        for i in 0..grad.numel() {
            let orig = net.params()[k].data()[i];
            net.params_mut()[k].data_mut()[i] = orig + cfg.step;
            let (plus, _, _) = problem.evaluate(&net, cfg, mode, fd_target, false)?;
            net.params_mut()[k].data_mut()[i] = orig - cfg.step;
            let (minus, _, _) = problem.evaluate(&net, cfg, mode, fd_target, false)?;
            net.params_mut()[k].data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = grad.data()[i];
            max_rel = max_rel.max(relative_error(a, numeric));
            max_abs = max_abs.max((a - numeric).abs());
        }
    }
    Ok(GradcheckResult {
        mode,
        params: problem.net.num_params(),
        max_rel_error: max_rel,
        max_abs_error: max_abs,
    })
}
