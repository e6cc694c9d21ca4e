//! Spiking-network training with temporal-wise logit distillation.
//!
//! A student SNN of leaky integrate-and-fire layers is unrolled for `T`
//! timesteps and emits logits at each step. Training supervises every
//! timestep with the hard labels, a teacher's soft labels and the
//! student's own time-averaged ensemble, and the [`bounds`] module
//! certifies numerically that these per-timestep losses upper-bound the
//! usual ensemble losses.
//!
//! Module map:
//! - [`tensor`], [`tape`]: f64 tensors and reverse-mode differentiation
//! - [`snn`]: LIF dynamics, surrogate spikes, temporal unrolling
//! - [`losses`]: cross-entropy, temperature KL, the temporal-wise family
//! - [`bounds`]: randomized and on-model certification of the bounds
//! - [`trainer`], [`optim`], [`teacher`]: teacher and student training
//! - [`eval`]: timestep sweeps, early exit, firing rates, logits dumps
//! - [`data`], [`checkpoint`], [`config`]: datasets and persistence

pub mod bounds;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod layers;
pub mod losses;
pub mod optim;
pub mod snn;
pub mod tape;
pub mod teacher;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use layers::{Linear, Parameterized};
pub use losses::{LossBreakdown, LossMode, LossWeights};
pub use snn::{LifConfig, SnnNetwork};
pub use tape::{Tape, Var};
pub use teacher::TeacherModel;
pub use tensor::Tensor;
pub use trainer::{TeacherConfig, TrainConfig};
