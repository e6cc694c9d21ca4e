//! Teacher training and temporal-wise distillation of the spiking student.
//!
//! Per student batch:
//! 1. unroll the SNN for `T` steps to get `z(1..T)`;
//! 2. get teacher logits `z_A`;
//! 3. average `z(t)` into the ensemble logits;
//! 4. build TWCE, TWKL and TWSD (plus SCE/SKL for logging);
//! 5. back-propagate the objective chosen by [`LossMode`] and take an SGD step.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::eval_at;
use crate::layers::Parameterized;
use crate::losses::{ce_on, one_hot, EnsembleTarget, LossBreakdown, LossGraph, LossMode, LossWeights};
use crate::optim::{cosine_lr, Sgd};
use crate::snn::{LifConfig, SnnNetwork};
use crate::tape::Tape;
use crate::teacher::TeacherModel;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub timesteps: usize,
    pub weights: LossWeights,
    pub seed: u64,
    pub loss_mode: LossMode,
    pub hidden: Vec<usize>,
    pub lif: LifConfig,
    pub detach_ensemble_target: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 32,
            lr0: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            timesteps: 6,
            weights: LossWeights::default(),
            seed: 0,
            loss_mode: LossMode::TemporalKdFull,
            hidden: vec![64, 64],
            lif: LifConfig::default(),
            detach_ensemble_target: true,
        }
    }
}

fn check_common(epochs_ok: bool, batch: usize, lr0: f64, momentum: f64, wd: f64) -> Result<()> {
    if !epochs_ok || batch == 0 || !(lr0 > 0.0) || !(0.0..1.0).contains(&momentum) || !(wd >= 0.0) {
        return Err(Error::Contract(format!(
            "invalid optimiser settings: batch_size={batch} lr0={lr0} momentum={momentum} weight_decay={wd}"
        )));
    }
    Ok(())
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_common(self.epochs > 0, self.batch_size, self.lr0, self.momentum, self.weight_decay)?;
        if self.timesteps == 0 {
            return Err(Error::Contract("T must be >= 1".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Contract(format!("bad hidden sizes {:?}", self.hidden)));
        }
        self.weights.validate()?;
        self.lif.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TeacherConfig {
    /// Zero epochs returns the random initialisation.
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig {
            epochs: 50,
            batch_size: 32,
            lr0: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            hidden: vec![64, 64],
            seed: 0,
        }
    }
}

impl TeacherConfig {
    pub fn validate(&self) -> Result<()> {
        check_common(true, self.batch_size, self.lr0, self.momentum, self.weight_decay)
    }
}

/// Fraction of rows whose argmax matches the label.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = logits
        .argmax_rows()
        .iter()
        .zip(labels)
        .filter(|(p, y)| p == y)
        .count();
    hits as f64 / labels.len() as f64
}

fn epoch_batches(rng: &mut ChaCha8Rng, n: usize, batch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch).map(<[usize]>::to_vec).collect()
}

fn require_data(train: &Dataset, test: &Dataset) -> Result<()> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if train.dim() != test.dim() || train.classes != test.classes {
        return Err(Error::shape("train/test", &[train.dim(), train.classes], &[test.dim(), test.classes]));
    }
    Ok(())
}

/// Trains the ReLU teacher with cross-entropy and SGD. Returns the model
/// and its test accuracy.
pub fn train_teacher(train: &Dataset, test: &Dataset, cfg: &TeacherConfig) -> Result<(TeacherModel, f64)> {
    cfg.validate()?;
    require_data(train, test)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sizes = vec![train.dim()];
    sizes.extend(&cfg.hidden);
    sizes.push(train.classes);
    let mut model = TeacherModel::new(&sizes, &mut rng)?;
    let mut opt = Sgd::new(&model.params(), cfg.momentum, cfg.weight_decay);
    let mask = model.decay_mask();

    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg.epochs, cfg.lr0)?;
        for (b, idx) in epoch_batches(&mut rng, train.len(), cfg.batch_size).into_iter().enumerate() {
            let (x, labels) = train.batch(&idx)?;
            let y = one_hot(&labels, train.classes)?;
            let mut tape = Tape::new();
            let params = model.bind(&mut tape);
            let xv = tape.constant(x);
            let z = model.forward_on(&mut tape, &params, xv)?;
            let loss = ce_on(&mut tape, z, &y)?;
            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    batch: b,
                    term: "teacher_ce",
                    value,
                });
            }
            let g = tape.backward(loss)?;
            let grads: Vec<Tensor> = params.iter().map(|&p| g.wrt(p, tape.value(p))).collect();
            opt.step(model.params_mut(), &grads, &mask, lr)?;
        }
    }
    let acc = accuracy(&model.logits(&test.features()?)?, &test.labels);
    Ok((model, acc))
}

/// Where the student's soft labels come from.
#[derive(Clone, Copy, Debug)]
pub enum TeacherSource<'a> {
    /// Evaluate the teacher on every batch.
    Model(&'a TeacherModel),
    /// Precomputed `[train_len×classes]` logits, row = sample id.
    Logits(&'a Tensor),
}

impl TeacherSource<'_> {
    fn batch_logits(&self, x: &Tensor, idx: &[usize]) -> Result<Tensor> {
        match self {
            TeacherSource::Model(m) => m.logits(x),
            TeacherSource::Logits(t) => t.gather_rows(idx),
        }
    }

    fn check(&self, train: &Dataset) -> Result<()> {
        let (rows, cols) = match self {
            TeacherSource::Model(m) => {
                if m.input_dim() != train.dim() {
                    return Err(Error::shape("teacher input", &[m.input_dim()], &[train.dim()]));
                }
                (train.len(), m.classes())
            }
            TeacherSource::Logits(t) => (t.rows(), t.cols()),
        };
        if cols != train.classes || rows != train.len() {
            return Err(Error::shape("teacher output", &[rows, cols], &[train.len(), train.classes]));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    /// Sample-weighted means over the epoch's batches.
    pub losses: LossBreakdown,
    pub train_acc: f64,
    pub test_acc: f64,
}

pub const LOSS_CSV_HEADER: &str = "epoch,lr,sce,skl,skd,twce,twkl,twsd,twkd,final,train_acc,test_acc";

pub fn losses_csv(log: &[EpochLog]) -> String {
    let mut out = format!("{LOSS_CSV_HEADER}\n");
    for e in log {
        let _ = write!(out, "{},{:?}", e.epoch, e.lr);
        for (_, v) in e.losses.named() {
            let _ = write!(out, ",{v:?}");
        }
        let _ = writeln!(out, ",{:?},{:?}", e.train_acc, e.test_acc);
    }
    out
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub network: SnnNetwork,
    pub log: Vec<EpochLog>,
}

/// Runs temporal-wise distillation for `cfg.epochs` epochs.
pub fn train_student(train: &Dataset, test: &Dataset, teacher: TeacherSource<'_>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_student_with(train, test, teacher, cfg, |_| {})
}

/// [`train_student`] with a callback after every epoch.
pub fn train_student_with(
    train: &Dataset,
    test: &Dataset,
    teacher: TeacherSource<'_>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    require_data(train, test)?;
    teacher.check(train)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sizes = vec![train.dim()];
    sizes.extend(&cfg.hidden);
    sizes.push(train.classes);
    let mut net = SnnNetwork::new(&sizes, cfg.lif, &mut rng)?;
    let mut opt = Sgd::new(&net.params(), cfg.momentum, cfg.weight_decay);
    let mask = net.decay_mask();
    let target = if cfg.detach_ensemble_target {
        EnsembleTarget::Detached
    } else {
        EnsembleTarget::Tracked
    };
    let n = train.len() as f64;
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg.epochs, cfg.lr0)?;
        let mut sums = LossBreakdown::default();
        let mut hits = 0.0;
        for (b, idx) in epoch_batches(&mut rng, train.len(), cfg.batch_size).into_iter().enumerate() {
            let (x, labels) = train.batch(&idx)?;
            let zt = teacher.batch_logits(&x, &idx)?;
            let y = one_hot(&labels, train.classes)?;

            let mut tape = Tape::new();
            let params = net.bind(&mut tape);
            let xv = tape.constant(x);
            let unroll = net.unroll(&mut tape, &params, xv, cfg.timesteps)?;
            let graph = LossGraph::build(&mut tape, &unroll.logits, &zt, &y, &cfg.weights, target)?;
            let root = graph.objective(&mut tape, cfg.loss_mode, &cfg.weights)?;

            let parts = graph.breakdown(&tape, &cfg.weights);
            let objective = tape.value(root).data()[0];
            let bad = std::iter::once(("objective", objective))
                .chain(parts.named())
                .find(|(_, v)| !v.is_finite());
            if let Some((term, value)) = bad {
                return Err(Error::NonFinite {
                    epoch,
                    batch: b,
                    term,
                    value,
                });
            }

            let g = tape.backward(root)?;
            let grads: Vec<Tensor> = params.iter().map(|&p| g.wrt(p, tape.value(p))).collect();
            opt.step(net.params_mut(), &grads, &mask, lr)?;

            sums.accumulate(&parts, idx.len() as f64 / n);
            hits += accuracy(tape.value(graph.ensemble), &labels) * idx.len() as f64;
        }
        let entry = EpochLog {
            epoch: epoch + 1,
            lr,
            losses: sums,
            train_acc: hits / n,
            test_acc: eval_at(&net, test, cfg.timesteps)?,
        };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(TrainOutcome { network: net, log })
}
