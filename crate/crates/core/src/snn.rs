//! Leaky integrate-and-fire layers unrolled over discrete timesteps.
//!
//! Membrane update, per neuron and timestep:
//!
//! ```text
//! v[t] = λ · v[t-1] · (1 - s[t-1]) + I[t]
//! s[t] = H(v[t] - θ)
//! ```
//!
//! `H` is the Heaviside step in the forward pass; backward uses the
//! derivative of `σ(a_s · x)`. The last hidden layer's spikes feed a
//! non-spiking linear readout that emits one logits vector per timestep.

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{linear_params, Linear, Parameterized};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LifConfig {
    /// Membrane decay λ in (0, 1).
    pub decay: f64,
    /// Firing threshold θ > 0.
    pub threshold: f64,
    /// Surrogate slope a_s > 0.
    pub surrogate_slope: f64,
    /// Treat the `(1 - s)` reset factor as a constant in backward.
    pub detach_reset: bool,
    /// Emit `σ(a_s·(v-θ))` instead of binary spikes. Only meant for
    /// gradient checking, where the forward must be differentiable.
    pub smooth_spikes: bool,
}

impl Default for LifConfig {
    fn default() -> Self {
        LifConfig {
            decay: 0.5,
            threshold: 1.0,
            surrogate_slope: 4.0,
            detach_reset: true,
            smooth_spikes: false,
        }
    }
}

impl LifConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::Contract(format!("decay {} not in (0,1)", self.decay)));
        }
        if !(self.threshold > 0.0) {
            return Err(Error::Contract(format!("threshold {} must be > 0", self.threshold)));
        }
        if !(self.surrogate_slope > 0.0) {
            return Err(Error::Contract(format!(
                "surrogate slope {} must be > 0",
                self.surrogate_slope
            )));
        }
        Ok(())
    }
}

/// Spike step with the sigmoid surrogate derivative.
pub fn surrogate_heaviside(tape: &mut Tape, x: Var, slope: f64) -> Var {
    tape.spike(x, slope, false)
}

/// Membrane potentials and spikes of one layer, recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct TapeLifState {
    pub v: Var,
    pub s: Var,
}

impl TapeLifState {
    pub fn zeros(tape: &mut Tape, shape: &[usize]) -> Self {
        TapeLifState {
            v: tape.constant(Tensor::zeros(shape)),
            s: tape.constant(Tensor::zeros(shape)),
        }
    }
}

/// One LIF update on the tape.
pub fn lif_step(tape: &mut Tape, state: TapeLifState, input: Var, cfg: &LifConfig) -> Result<TapeLifState> {
    let (vs, ss, is) = (
        tape.value(state.v).shape(),
        tape.value(state.s).shape(),
        tape.value(input).shape(),
    );
    if vs != ss || vs != is {
        return Err(Error::shape("lif_step", vs, is));
    }
    let keep = if cfg.detach_reset {
        let mask = tape.value(state.s).map(|s| 1.0 - s);
        tape.constant(mask)
    } else {
        tape.affine(state.s, -1.0, 1.0)
    };
    let kept = tape.mul(state.v, keep)?;
    let leaked = tape.scale(kept, cfg.decay);
    let v = tape.add(leaked, input)?;
    let centered = tape.affine(v, 1.0, -cfg.threshold);
    let s = tape.spike(centered, cfg.surrogate_slope, cfg.smooth_spikes);
    Ok(TapeLifState { v, s })
}

/// Value-level LIF state.
#[derive(Clone, Debug, PartialEq)]
pub struct LifState {
    pub v: Tensor,
    pub s: Tensor,
}

impl LifState {
    pub fn zeros(shape: &[usize]) -> Self {
        LifState {
            v: Tensor::zeros(shape),
            s: Tensor::zeros(shape),
        }
    }

    pub fn step(&self, input: &Tensor, cfg: &LifConfig) -> Result<LifState> {
        let mut tape = Tape::new();
        let state = TapeLifState {
            v: tape.constant(self.v.clone()),
            s: tape.constant(self.s.clone()),
        };
        let i = tape.constant(input.clone());
        let next = lif_step(&mut tape, state, i, cfg)?;
        Ok(LifState {
            v: tape.value(next.v).clone(),
            s: tape.value(next.s).clone(),
        })
    }
}

/// Feedforward spiking MLP with a linear readout.
#[derive(Clone, Debug, PartialEq)]
pub struct SnnNetwork {
    pub hidden: Vec<Linear>,
    pub lif: Vec<LifConfig>,
    pub readout: Linear,
}

/// Tape handles produced by [`SnnNetwork::unroll`].
#[derive(Clone, Debug)]
pub struct Unroll {
    /// `z(t)` for `t = 1..=T`, each `[batch×classes]`.
    pub logits: Vec<Var>,
    /// `spikes[t][layer]`, each `[batch×width]`.
    pub spikes: Vec<Vec<Var>>,
}

/// Concrete values of a forward unroll.
#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub logits: Vec<Tensor>,
    pub spikes: Vec<Vec<Tensor>>,
}

impl SnnNetwork {
    /// `sizes` is `[input, hidden..., classes]` and needs at least one hidden layer.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], lif: LifConfig, rng: &mut R) -> Result<Self> {
        Self::check_sizes(sizes)?;
        lif.validate()?;
        let n = sizes.len();
        let hidden = sizes[..n - 1]
            .windows(2)
            .map(|w| Linear::init(w[0], w[1], rng))
            .collect::<Vec<_>>();
        let readout = Linear::init(sizes[n - 2], sizes[n - 1], rng);
        Ok(SnnNetwork {
            lif: vec![lif; hidden.len()],
            hidden,
            readout,
        })
    }

    pub fn zeros(sizes: &[usize], lif: LifConfig) -> Result<Self> {
        Self::check_sizes(sizes)?;
        lif.validate()?;
        let n = sizes.len();
        let hidden = sizes[..n - 1]
            .windows(2)
            .map(|w| Linear::zeros(w[0], w[1]))
            .collect::<Vec<_>>();
        Ok(SnnNetwork {
            lif: vec![lif; hidden.len()],
            hidden,
            readout: Linear::zeros(sizes[n - 2], sizes[n - 1]),
        })
    }

    fn check_sizes(sizes: &[usize]) -> Result<()> {
        if sizes.len() < 3 || sizes.contains(&0) {
            return Err(Error::Contract(format!(
                "layer sizes need input, >=1 hidden and classes, all positive; got {sizes:?}"
            )));
        }
        Ok(())
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.hidden[0].fan_in()];
        sizes.extend(self.hidden.iter().map(Linear::fan_out));
        sizes.push(self.readout.fan_out());
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.hidden[0].fan_in()
    }

    pub fn classes(&self) -> usize {
        self.readout.fan_out()
    }

    /// Checks that weight shapes chain from input to readout.
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.len() != self.lif.len() {
            return Err(Error::Contract("hidden layers and LIF configs disagree".into()));
        }
        let mut width = self.input_dim();
        for l in self.hidden.iter().chain(std::iter::once(&self.readout)) {
            if l.fan_in() != width || l.bias.shape() != [l.fan_out()] {
                return Err(Error::shape("network", l.weight.shape(), &[width]));
            }
            width = l.fan_out();
        }
        for cfg in &self.lif {
            cfg.validate()?;
        }
        Ok(())
    }

    /// Records a `timesteps`-long unroll on `tape`, using parameters already
    /// bound with [`Parameterized::bind`]. The same input is injected at
    /// every step and all membrane state starts at zero.
    pub fn unroll(&self, tape: &mut Tape, params: &[Var], x: Var, timesteps: usize) -> Result<Unroll> {
        if timesteps < 1 {
            return Err(Error::Contract("timesteps must be >= 1".into()));
        }
        let xs = tape.value(x).shape().to_vec();
        if xs.len() != 2 || xs[1] != self.input_dim() {
            return Err(Error::shape("forward_unroll", &xs, &[self.input_dim()]));
        }
        let batch = xs[0];
        let layers = self.hidden.len();
        let (rw, rb) = (params[2 * layers], params[2 * layers + 1]);

        // direct encoding: the first layer's input current is constant in time
        let first_current = Linear::apply(tape, params[0], params[1], x)?;

        let mut states: Vec<TapeLifState> = self
            .hidden
            .iter()
            .map(|l| TapeLifState::zeros(tape, &[batch, l.fan_out()]))
            .collect();
        let mut logits = Vec::with_capacity(timesteps);
        let mut spikes = Vec::with_capacity(timesteps);

        for _ in 0..timesteps {
            let mut step_spikes = Vec::with_capacity(layers);
            let mut current = first_current;
            for (k, cfg) in self.lif.iter().enumerate() {
                if k > 0 {
                    current = Linear::apply(tape, params[2 * k], params[2 * k + 1], step_spikes[k - 1])?;
                }
                states[k] = lif_step(tape, states[k], current, cfg)?;
                step_spikes.push(states[k].s);
            }
            logits.push(Linear::apply(tape, rw, rb, step_spikes[layers - 1])?);
            spikes.push(step_spikes);
        }
        Ok(Unroll { logits, spikes })
    }

    /// Forward pass without gradients.
    pub fn forward_unroll(&self, x: &Tensor, timesteps: usize) -> Result<Trace> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let u = self.unroll(&mut tape, &params, xv, timesteps)?;
        Ok(Trace {
            logits: u.logits.iter().map(|&v| tape.value(v).clone()).collect(),
            spikes: u
                .spikes
                .iter()
                .map(|layer| layer.iter().map(|&v| tape.value(v).clone()).collect())
                .collect(),
        })
    }
}

impl Parameterized for SnnNetwork {
    fn params(&self) -> Vec<&Tensor> {
        let layers: Vec<&Linear> = self.hidden.iter().chain(std::iter::once(&self.readout)).collect();
        linear_params(&layers)
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.hidden
            .iter_mut()
            .chain(std::iter::once(&mut self.readout))
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    fn decay_mask(&self) -> Vec<bool> {
        (0..=self.hidden.len()).flat_map(|_| [true, false]).collect()
    }
}
