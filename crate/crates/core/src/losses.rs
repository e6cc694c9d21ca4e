//! Logit-distillation losses for temporally unrolled students.
//!
//! Standard distillation scores the time-averaged ("ensemble") logits:
//!
//! ```text
//! SCE = CE(z_ens, y)
//! SKL = -τ² Σ_i S_i(z_A/τ) log S_i(z_ens/τ)
//! SKD = SCE + α·SKL
//! ```
//!
//! The temporal-wise family scores every timestep and averages:
//!
//! ```text
//! TWCE  = (1/T) Σ_t CE(z(t), y)
//! TWKL  = (1/T) Σ_t -τ² Σ_i S_i(z_A/τ)   log S_i(z(t)/τ)
//! TWSD  = (1/T) Σ_t -τ² Σ_i S_i(z_ens/τ) log S_i(z(t)/τ)
//! TWKD  = TWCE + α·TWKL
//! final = TWCE + α·TWKL + β·TWSD
//! ```
//!
//! The teacher-entropy term of the KL divergence is constant in the student
//! and is dropped, so the "KL" terms here are soft cross-entropies.
//! Every term is averaged over the batch.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    /// Weight of the teacher KL term.
    pub alpha: f64,
    /// Weight of the ensemble self-distillation term.
    pub beta: f64,
    /// Softmax temperature.
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.2,
            beta: 0.5,
            tau: 4.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Contract(format!(
                "loss weights must be >= 0 (alpha={}, beta={})",
                self.alpha, self.beta
            )));
        }
        check_tau(self.tau)
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Domain {
            op: "kl_soft_loss",
            msg: format!("temperature {tau} must be > 0"),
        });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub sce: f64,
    pub skl: f64,
    pub skd: f64,
    pub twce: f64,
    pub twkl: f64,
    pub twsd: f64,
    pub twkd: f64,
    pub final_loss: f64,
}

impl LossBreakdown {
    fn from_parts(sce: f64, skl: f64, twce: f64, twkl: f64, twsd: f64, w: &LossWeights) -> Self {
        LossBreakdown {
            sce,
            skl,
            skd: sce + w.alpha * skl,
            twce,
            twkl,
            twsd,
            twkd: twce + w.alpha * twkl,
            final_loss: twce + w.alpha * twkl + w.beta * twsd,
        }
    }

    /// Named terms in a stable order, for logging.
    pub fn named(&self) -> [(&'static str, f64); 8] {
        [
            ("sce", self.sce),
            ("skl", self.skl),
            ("skd", self.skd),
            ("twce", self.twce),
            ("twkl", self.twkl),
            ("twsd", self.twsd),
            ("twkd", self.twkd),
            ("final", self.final_loss),
        ]
    }

    /// Weighted accumulation, used for epoch means over batches.
    pub fn accumulate(&mut self, other: &LossBreakdown, weight: f64) {
        self.sce += weight * other.sce;
        self.skl += weight * other.skl;
        self.skd += weight * other.skd;
        self.twce += weight * other.twce;
        self.twkl += weight * other.twkl;
        self.twsd += weight * other.twsd;
        self.twkd += weight * other.twkd;
        self.final_loss += weight * other.final_loss;
    }
}

/// Which composite objective drives the parameter update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LossMode {
    /// `SCE + α·SKL` on the ensemble logits.
    StandardKd,
    /// `TWCE + α·TWKL + β·TWSD`.
    TemporalKdFull,
    TwceOnly,
    TwceTwsd,
    TwceTwkl,
}

impl LossMode {
    pub const ALL: [LossMode; 5] = [
        LossMode::StandardKd,
        LossMode::TemporalKdFull,
        LossMode::TwceOnly,
        LossMode::TwceTwsd,
        LossMode::TwceTwkl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LossMode::StandardKd => "standard_kd",
            LossMode::TemporalKdFull => "temporal_kd_full",
            LossMode::TwceOnly => "twce_only",
            LossMode::TwceTwsd => "twce_twsd",
            LossMode::TwceTwkl => "twce_twkl",
        }
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Contract(format!("unknown loss_mode '{s}'")))
    }
}

/// One-hot `[batch×classes]` matrix from integer labels.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    if labels.is_empty() || classes == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut t = Tensor::zeros(&[labels.len(), classes]);
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::Contract(format!("label {y} out of range for {classes} classes")));
        }
        t.data_mut()[i * classes + y] = 1.0;
    }
    Ok(t)
}

fn check_one_hot(y: &Tensor) -> Result<()> {
    let n = y.cols();
    for r in 0..y.rows() {
        let row = &y.data()[r * n..(r + 1) * n];
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        let zeros = row.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || zeros != n - 1 {
            return Err(Error::Contract(format!("label row {r} is not one-hot: {row:?}")));
        }
    }
    Ok(())
}

/// Mean over the batch of `-scale · Σ_i target_i · log S_i(z/temp)`.
fn soft_ce_on(tape: &mut Tape, z: Var, target: Var, temp: f64, scale: f64) -> Result<Var> {
    let zs = tape.value(z).shape().to_vec();
    let ts = tape.value(target).shape();
    if zs != ts {
        return Err(Error::shape("soft cross-entropy", &zs, ts));
    }
    let batch = tape.value(z).rows() as f64;
    let scaled = if temp == 1.0 { z } else { tape.scale(z, 1.0 / temp) };
    let logq = tape.log_softmax(scaled);
    let prod = tape.mul(target, logq)?;
    let total = tape.sum(prod);
    Ok(tape.scale(total, -scale / batch))
}

/// Softened target distribution `S(z/τ)`; a constant unless `track` is set.
fn soft_target(tape: &mut Tape, z: Var, tau: f64, track: bool) -> Var {
    if track {
        let scaled = tape.scale(z, 1.0 / tau);
        let lp = tape.log_softmax(scaled);
        tape.exp(lp)
    } else {
        let p = tape.value(z).scale(1.0 / tau).softmax_rows();
        tape.constant(p)
    }
}

/// Batch-mean cross-entropy against one-hot labels.
pub fn ce_on(tape: &mut Tape, z: Var, y: &Tensor) -> Result<Var> {
    check_one_hot(y)?;
    let target = tape.constant(y.clone());
    soft_ce_on(tape, z, target, 1.0, 1.0)
}

/// τ²-scaled soft cross-entropy of the student against `S(z_teacher/τ)`.
/// The teacher side never receives a gradient.
pub fn kl_soft_on(tape: &mut Tape, student: Var, teacher: Var, tau: f64) -> Result<Var> {
    check_tau(tau)?;
    let target = soft_target(tape, teacher, tau, false);
    soft_ce_on(tape, student, target, tau, tau * tau)
}

/// Mean of the first `prefix` logits (all of them when `None`).
pub fn ensemble_on(tape: &mut Tape, logits: &[Var], prefix: Option<usize>) -> Result<Var> {
    let k = check_prefix(logits.len(), prefix)?;
    tape.mean_of(&logits[..k])
}

fn check_prefix(total: usize, prefix: Option<usize>) -> Result<usize> {
    let k = prefix.unwrap_or(total);
    if k < 1 || k > total {
        return Err(Error::Contract(format!("prefix length {k} not in 1..={total}")));
    }
    Ok(k)
}

/// Source of the ensemble soft labels in TWSD.
#[derive(Clone, Copy, Debug)]
pub enum EnsembleTarget<'a> {
    /// `S(z_ens/τ)` as a constant: no gradient through the target.
    Detached,
    /// `S(z_ens/τ)` differentiated like any other node.
    Tracked,
    /// Externally supplied ensemble logits, held constant.
    Fixed(&'a Tensor),
}

/// All loss terms of one batch, recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LossGraph {
    pub ensemble: Var,
    pub sce: Var,
    pub skl: Var,
    pub twce: Var,
    pub twkl: Var,
    pub twsd: Var,
}

impl LossGraph {
    pub fn build(
        tape: &mut Tape,
        logits: &[Var],
        teacher: &Tensor,
        y: &Tensor,
        w: &LossWeights,
        target: EnsembleTarget<'_>,
    ) -> Result<Self> {
        w.validate()?;
        if logits.is_empty() {
            return Err(Error::Contract("need at least one timestep".into()));
        }
        check_one_hot(y)?;
        let zs = tape.value(logits[0]).shape().to_vec();
        if teacher.shape() != zs.as_slice() {
            return Err(Error::shape("teacher logits", teacher.shape(), &zs));
        }
        let tau = w.tau;
        let ensemble = ensemble_on(tape, logits, None)?;
        let zt = tape.constant(teacher.clone());
        let hard = tape.constant(y.clone());
        let teacher_p = soft_target(tape, zt, tau, false);
        let ens_p = match target {
            EnsembleTarget::Detached => soft_target(tape, ensemble, tau, false),
            EnsembleTarget::Tracked => soft_target(tape, ensemble, tau, true),
            EnsembleTarget::Fixed(z) => {
                if z.shape() != zs.as_slice() {
                    return Err(Error::shape("ensemble target", z.shape(), &zs));
                }
                let zc = tape.constant(z.clone());
                soft_target(tape, zc, tau, false)
            }
        };

        let sce = soft_ce_on(tape, ensemble, hard, 1.0, 1.0)?;
        let skl = soft_ce_on(tape, ensemble, teacher_p, tau, tau * tau)?;

        let mut ce_t = Vec::with_capacity(logits.len());
        let mut kl_t = Vec::with_capacity(logits.len());
        let mut sd_t = Vec::with_capacity(logits.len());
        for &z in logits {
            ce_t.push(soft_ce_on(tape, z, hard, 1.0, 1.0)?);
            kl_t.push(soft_ce_on(tape, z, teacher_p, tau, tau * tau)?);
            sd_t.push(soft_ce_on(tape, z, ens_p, tau, tau * tau)?);
        }
        Ok(LossGraph {
            ensemble,
            sce,
            skl,
            twce: tape.mean_of(&ce_t)?,
            twkl: tape.mean_of(&kl_t)?,
            twsd: tape.mean_of(&sd_t)?,
        })
    }

    /// Scalar node for the selected objective.
    pub fn objective(&self, tape: &mut Tape, mode: LossMode, w: &LossWeights) -> Result<Var> {
        let weighted = |tape: &mut Tape, base: Var, term: Var, c: f64| -> Result<Var> {
            let t = tape.scale(term, c);
            tape.add(base, t)
        };
        match mode {
            LossMode::StandardKd => weighted(tape, self.sce, self.skl, w.alpha),
            LossMode::TwceOnly => Ok(self.twce),
            LossMode::TwceTwkl => weighted(tape, self.twce, self.twkl, w.alpha),
            LossMode::TwceTwsd => weighted(tape, self.twce, self.twsd, w.beta),
            LossMode::TemporalKdFull => {
                let kd = weighted(tape, self.twce, self.twkl, w.alpha)?;
                weighted(tape, kd, self.twsd, w.beta)
            }
        }
    }

    pub fn breakdown(&self, tape: &Tape, w: &LossWeights) -> LossBreakdown {
        let v = |x: Var| tape.value(x).data()[0];
        LossBreakdown::from_parts(v(self.sce), v(self.skl), v(self.twce), v(self.twkl), v(self.twsd), w)
    }
}

/// Row-wise softmax.
pub fn softmax(z: &Tensor) -> Tensor {
    z.softmax_rows()
}

/// Elementwise mean of the first `prefix` logits tensors.
pub fn ensemble_logits(z_list: &[Tensor], prefix: Option<usize>) -> Result<Tensor> {
    let k = check_prefix(z_list.len(), prefix)?;
    let mut tape = Tape::new();
    let vars: Vec<Var> = z_list[..k].iter().map(|z| tape.constant(z.clone())).collect();
    let e = tape.mean_of(&vars)?;
    Ok(tape.value(e).clone())
}

pub fn ce_loss(z: &Tensor, y: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let zv = tape.constant(z.clone());
    let l = ce_on(&mut tape, zv, y)?;
    Ok(tape.value(l).data()[0])
}

pub fn kl_soft_loss(student: &Tensor, teacher: &Tensor, tau: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let s = tape.constant(student.clone());
    let t = tape.constant(teacher.clone());
    let l = kl_soft_on(&mut tape, s, t, tau)?;
    Ok(tape.value(l).data()[0])
}

/// Every loss term for one batch of per-timestep logits.
pub fn compute_all(z_list: &[Tensor], teacher: &Tensor, y: &Tensor, w: &LossWeights) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = z_list.iter().map(|z| tape.constant(z.clone())).collect();
    let g = LossGraph::build(&mut tape, &vars, teacher, y, w, EnsembleTarget::Detached)?;
    Ok(g.breakdown(&tape, w))
}

/// `τ²·H(S(z/τ))`, batch-averaged.
pub fn scaled_entropy(z: &Tensor, tau: f64) -> f64 {
    let lp = z.scale(1.0 / tau).log_softmax_rows();
    let h: f64 = lp.data().iter().map(|&l| -l.exp() * l).sum();
    tau * tau * h / z.rows() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn ce_uniform_two_classes() {
        let l = ce_loss(&t(&[&[0.0, 0.0]]), &t(&[&[1.0, 0.0]])).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn ce_large_margin_vanishes() {
        let l = ce_loss(&t(&[&[40.0, 0.0, 0.0]]), &t(&[&[1.0, 0.0, 0.0]])).unwrap();
        assert!(l < 1e-6);
    }

    #[test]
    fn ce_rejects_malformed_labels() {
        let z = t(&[&[0.0, 0.0]]);
        assert!(ce_loss(&z, &t(&[&[1.0, 1.0]])).is_err());
        assert!(ce_loss(&z, &t(&[&[0.5, 0.5]])).is_err());
    }

    #[test]
    fn kl_uniform_scales_with_tau_squared() {
        let z = t(&[&[0.0, 0.0]]);
        let l1 = kl_soft_loss(&z, &z, 1.0).unwrap();
        let l2 = kl_soft_loss(&z, &z, 2.0).unwrap();
        assert!((l1 - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((l2 - 4.0 * std::f64::consts::LN_2).abs() < 1e-14);
    }

    #[test]
    fn kl_rejects_bad_tau() {
        let z = t(&[&[0.0, 0.0]]);
        assert!(kl_soft_loss(&z, &z, 0.0).is_err());
        assert!(kl_soft_loss(&z, &z, -1.0).is_err());
    }

    #[test]
    fn ensemble_basics() {
        let z1 = t(&[&[1.0, 3.0]]);
        let z2 = t(&[&[3.0, 1.0]]);
        let e = ensemble_logits(&[z1.clone(), z2.clone()], None).unwrap();
        assert_eq!(e.data(), &[2.0, 2.0]);
        assert_eq!(ensemble_logits(&[z1.clone(), z2.clone()], Some(1)).unwrap(), z1);
        assert!(ensemble_logits(&[z1.clone(), z2.clone()], Some(0)).is_err());
        assert!(ensemble_logits(&[z1, z2], Some(3)).is_err());
    }

    #[test]
    fn single_timestep_collapse() {
        let z = t(&[&[0.3, -1.2, 2.0], &[1.0, 0.0, -0.5]]);
        let zt = t(&[&[1.0, 0.5, 0.0], &[-1.0, 2.0, 0.1]]);
        let y = one_hot(&[2, 0], 3).unwrap();
        let w = LossWeights::default();
        let b = compute_all(&[z.clone()], &zt, &y, &w).unwrap();
        assert_eq!(b.twce, b.sce);
        assert_eq!(b.twkl, b.skl);
        assert!((b.twsd - scaled_entropy(&z, w.tau)).abs() < 1e-12);
    }

    #[test]
    fn loss_mode_parsing() {
        for m in LossMode::ALL {
            assert_eq!(m.as_str().parse::<LossMode>().unwrap(), m);
        }
        assert!("twkd".parse::<LossMode>().is_err());
    }

    #[test]
    fn one_hot_range() {
        assert!(one_hot(&[0, 3], 3).is_err());
        assert_eq!(one_hot(&[1], 2).unwrap().data(), &[0.0, 1.0]);
    }
}
