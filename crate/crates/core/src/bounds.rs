//! Numerical certification of the upper-bound relations between the
//! temporal-wise losses and their ensemble counterparts.
//!
//! Every check returns a *slack*: the upper side minus the lower side. A
//! relation holds numerically when its slack is at least `-tolerance`.
//!
//! | check           | slack                                          |
//! |-----------------|------------------------------------------------|
//! | `lemma1`        | `TWCE - SCE`                                   |
//! | `prop2`         | `TWKD - SKD`                                   |
//! | `prop3`         | `(T/T_k)·TWKD(T) - SKD(T_k)`                   |
//! | `jensen_split`  | the two steps of the prefix/tail split of SKL  |

use std::fmt::Write as _;
use std::ops::RangeInclusive;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::{compute_all, ensemble_logits, kl_soft_loss, one_hot, LossWeights};
use crate::snn::SnnNetwork;
use crate::tensor::Tensor;

pub const BOUND_TOLERANCE: f64 = 1e-9;
pub const EQUALITY_TOLERANCE: f64 = 1e-10;

/// `TWCE - SCE`.
pub fn check_lemma1(z_list: &[Tensor], y: &Tensor) -> Result<f64> {
    // α = 0 leaves the teacher out of every composite
    let w = LossWeights {
        alpha: 0.0,
        beta: 0.0,
        tau: 1.0,
    };
    let b = compute_all(z_list, &Tensor::zeros(y.shape()), y, &w)?;
    Ok(b.twce - b.sce)
}

/// `TWKD - SKD`.
pub fn check_prop2(z_list: &[Tensor], teacher: &Tensor, y: &Tensor, w: &LossWeights) -> Result<f64> {
    let b = compute_all(z_list, teacher, y, w)?;
    Ok(b.twkd - b.skd)
}

/// `(T/T_k)·TWKD(T) - SKD(T_k)`, where `SKD(T_k)` scores the ensemble of
/// the first `T_k` timesteps.
pub fn check_prop3(z_list: &[Tensor], teacher: &Tensor, y: &Tensor, w: &LossWeights, prefix: usize) -> Result<f64> {
    let t = z_list.len();
    check_prefix(prefix, t, false)?;
    let full = compute_all(z_list, teacher, y, w)?;
    let inner = compute_all(&z_list[..prefix], teacher, y, w)?;
    Ok((t as f64 / prefix as f64) * full.twkd - inner.skd)
}

fn check_prefix(prefix: usize, t: usize, strict: bool) -> Result<()> {
    let upper = if strict { t.saturating_sub(1) } else { t };
    if prefix < 1 || prefix > upper {
        return Err(Error::Contract(format!(
            "T_k = {prefix} out of range 1..={upper} for T = {t}"
        )));
    }
    Ok(())
}

/// Slacks of the prefix/tail split of `SKL(T)`.
///
/// With `P = SKL(T_k)` on the prefix ensemble and `K_t` the per-timestep
/// soft losses, the chain under test is
///
/// ```text
/// SKL(T) <= (T_k/T)·P + ((T-T_k)/T²)·Σ_{t>T_k} K_t <= TWKL(T)     (first, second)
/// SKL(T) <= (T_k/T)·P + (1/T)·Σ_{t>T_k} K_t        <= TWKL(T)     (segment, segment_second)
/// ```
///
/// The segment form is Jensen's inequality with the exact convex weights of
/// `z_ens = (T_k/T)·mean(z(1..T_k)) + Σ_{t>T_k} z(t)/T`. The first form
/// uses a smaller tail coefficient and does not hold in general.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JensenSplit {
    pub first: f64,
    pub second: f64,
    pub segment: f64,
    pub segment_second: f64,
}

pub fn check_jensen_split(z_list: &[Tensor], teacher: &Tensor, tau: f64, prefix: usize) -> Result<JensenSplit> {
    let t = z_list.len();
    check_prefix(prefix, t, true)?;
    let tf = t as f64;
    let kf = prefix as f64;
    let skl_full = kl_soft_loss(&ensemble_logits(z_list, None)?, teacher, tau)?;
    let skl_prefix = kl_soft_loss(&ensemble_logits(z_list, Some(prefix))?, teacher, tau)?;
    let per_step = z_list
        .iter()
        .map(|z| kl_soft_loss(z, teacher, tau))
        .collect::<Result<Vec<_>>>()?;
    let tail: f64 = per_step[prefix..].iter().sum();
    let twkl = per_step.iter().sum::<f64>() / tf;

    let written = kf / tf * skl_prefix + (tf - kf) / (tf * tf) * tail;
    let segment = kf / tf * skl_prefix + tail / tf;
    Ok(JensenSplit {
        first: written - skl_full,
        second: twkl - written,
        segment: segment - skl_full,
        segment_second: twkl - segment,
    })
}

/// Aggregate statistics of one inequality over many checks.
#[derive(Clone, Debug, PartialEq)]
pub struct InequalityStats {
    pub name: &'static str,
    pub checks: usize,
    pub min_slack: f64,
    pub max_violation: f64,
    /// Checks with slack below `-tolerance`.
    pub violations: usize,
}

impl InequalityStats {
    fn new(name: &'static str) -> Self {
        InequalityStats {
            name,
            checks: 0,
            min_slack: f64::INFINITY,
            max_violation: 0.0,
            violations: 0,
        }
    }

    fn record(&mut self, slack: f64, tol: f64) {
        self.checks += 1;
        self.min_slack = self.min_slack.min(slack);
        self.max_violation = self.max_violation.max(-slack);
        if slack < -tol || slack.is_nan() {
            self.violations += 1;
        }
    }
}

/// Worst absolute residual of an equality that should hold exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct EqualityStats {
    pub name: &'static str,
    pub checks: usize,
    pub max_residual: f64,
}

impl EqualityStats {
    fn new(name: &'static str) -> Self {
        EqualityStats {
            name,
            checks: 0,
            max_residual: 0.0,
        }
    }

    fn record(&mut self, residual: f64) {
        self.checks += 1;
        self.max_residual = self.max_residual.max(residual.abs());
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundReport {
    pub trials: usize,
    pub tolerance: f64,
    pub inequalities: Vec<InequalityStats>,
    pub equalities: Vec<EqualityStats>,
}

const LEMMA1: usize = 0;
const PROP2: usize = 1;
const PROP3: usize = 2;
const SPLIT_FIRST: usize = 3;
const SPLIT_SECOND: usize = 4;
const SPLIT_SEGMENT: usize = 5;
const SPLIT_SEGMENT_SECOND: usize = 6;

impl BoundReport {
    fn empty(tolerance: f64) -> Self {
        BoundReport {
            trials: 0,
            tolerance,
            inequalities: vec![
                InequalityStats::new("lemma1"),
                InequalityStats::new("prop2"),
                InequalityStats::new("prop3"),
                InequalityStats::new("jensen_split_first"),
                InequalityStats::new("jensen_split_second"),
                InequalityStats::new("jensen_split_segment"),
                InequalityStats::new("jensen_split_segment_second"),
            ],
            equalities: vec![
                EqualityStats::new("lemma1_constant_logits"),
                EqualityStats::new("prop2_constant_logits"),
                EqualityStats::new("prop3_constant_logits"),
            ],
        }
    }

    pub fn get(&self, name: &str) -> Option<&InequalityStats> {
        self.inequalities.iter().find(|s| s.name == name)
    }

    pub fn passed(&self) -> bool {
        self.inequalities.iter().all(|s| s.violations == 0)
            && self.equalities.iter().all(|e| e.max_residual <= EQUALITY_TOLERANCE)
    }

    /// Runs every check on one set of per-timestep logits.
    fn observe(&mut self, z_list: &[Tensor], teacher: &Tensor, y: &Tensor, w: &LossWeights) -> Result<()> {
        let tol = self.tolerance;
        let t = z_list.len();
        self.trials += 1;
        self.inequalities[LEMMA1].record(check_lemma1(z_list, y)?, tol);
        self.inequalities[PROP2].record(check_prop2(z_list, teacher, y, w)?, tol);
        for k in 1..=t {
            self.inequalities[PROP3].record(check_prop3(z_list, teacher, y, w, k)?, tol);
        }
        for k in 1..t {
            let s = check_jensen_split(z_list, teacher, w.tau, k)?;
            self.inequalities[SPLIT_FIRST].record(s.first, tol);
            self.inequalities[SPLIT_SECOND].record(s.second, tol);
            self.inequalities[SPLIT_SEGMENT].record(s.segment, tol);
            self.inequalities[SPLIT_SEGMENT_SECOND].record(s.segment_second, tol);
        }
        Ok(())
    }

    /// Equality cases on constant-in-time logits built from `z`.
    fn observe_constant(&mut self, z: &Tensor, t: usize, teacher: &Tensor, y: &Tensor, w: &LossWeights) -> Result<()> {
        let z_list = vec![z.clone(); t];
        self.equalities[0].record(check_lemma1(&z_list, y)?);
        self.equalities[1].record(check_prop2(&z_list, teacher, y, w)?);
        let twkd = compute_all(&z_list, teacher, y, w)?.twkd;
        for k in 1..=t {
            let expected = (t as f64 / k as f64 - 1.0) * twkd;
            self.equalities[2].record(check_prop3(&z_list, teacher, y, w, k)? - expected);
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("inequality,trials,checks,min_slack,max_violation,violations\n");
        for s in &self.inequalities {
            let _ = writeln!(
                out,
                "{},{},{},{:e},{:e},{}",
                s.name, self.trials, s.checks, s.min_slack, s.max_violation, s.violations
            );
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("trials: {}  tolerance: {:e}\n", self.trials, self.tolerance);
        for s in &self.inequalities {
            let _ = writeln!(
                out,
                "{:<28} checks={:<6} min_slack={:+.3e} max_violation={:.3e} violations={} {}",
                s.name,
                s.checks,
                s.min_slack,
                s.max_violation,
                s.violations,
                if s.violations == 0 { "ok" } else { "VIOLATED" }
            );
        }
        for e in &self.equalities {
            let _ = writeln!(
                out,
                "{:<28} checks={:<6} max_residual={:.3e} {}",
                e.name,
                e.checks,
                e.max_residual,
                if e.max_residual <= EQUALITY_TOLERANCE { "ok" } else { "VIOLATED" }
            );
        }
        out
    }

    pub fn write(&self, csv_path: &Path, text_path: &Path) -> Result<()> {
        std::fs::write(csv_path, self.to_csv()).map_err(|e| Error::io(csv_path, e))?;
        std::fs::write(text_path, self.to_text()).map_err(|e| Error::io(text_path, e))
    }
}

/// Parameters of a randomized certification run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialConfig {
    pub trials: usize,
    pub seed: u64,
    pub classes: RangeInclusive<usize>,
    pub timesteps: RangeInclusive<usize>,
    pub batch: RangeInclusive<usize>,
    /// Logits are uniform in `[-logit_bound, logit_bound]`.
    pub logit_bound: f64,
    pub alpha: f64,
    pub beta: f64,
    pub taus: Vec<f64>,
    pub tolerance: f64,
}

impl Default for TrialConfig {
    fn default() -> Self {
        TrialConfig {
            trials: 1000,
            seed: 0,
            classes: 2..=10,
            timesteps: 2..=8,
            batch: 1..=3,
            logit_bound: 5.0,
            alpha: 0.2,
            beta: 0.5,
            taus: vec![1.0, 2.0, 4.0],
            tolerance: BOUND_TOLERANCE,
        }
    }
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(&[rows, cols], data).expect("positive dims")
}

/// Certifies every relation on independently drawn random logits.
/// Trial `i` draws from its own stream of the master seed.
pub fn verify_random(cfg: &TrialConfig) -> Result<BoundReport> {
    if cfg.taus.is_empty() {
        return Err(Error::Contract("at least one temperature required".into()));
    }
    let mut report = BoundReport::empty(cfg.tolerance);
    for trial in 0..cfg.trials {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(trial as u64);
        let n = rng.random_range(cfg.classes.clone());
        let t = rng.random_range(cfg.timesteps.clone());
        let b = rng.random_range(cfg.batch.clone());
        let tau = cfg.taus[rng.random_range(0..cfg.taus.len())];
        let w = LossWeights {
            alpha: cfg.alpha,
            beta: cfg.beta,
            tau,
        };
        let z_list: Vec<Tensor> = (0..t)
            .map(|_| uniform_matrix(&mut rng, b, n, cfg.logit_bound))
            .collect();
        let teacher = uniform_matrix(&mut rng, b, n, cfg.logit_bound);
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..n)).collect();
        let y = one_hot(&labels, n)?;
        report.observe(&z_list, &teacher, &y, &w)?;
        report.observe_constant(&z_list[0], t, &teacher, &y, &w)?;
    }
    Ok(report)
}

/// Runs every check on live per-sample logits of `net`, one trial per
/// sample, over at most `max_samples` samples.
pub fn verify_on_model(
    net: &SnnNetwork,
    data: &Dataset,
    teacher_logits: &Tensor,
    w: &LossWeights,
    timesteps: usize,
    max_samples: Option<usize>,
) -> Result<BoundReport> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if teacher_logits.rows() != data.len() || teacher_logits.cols() != net.classes() {
        return Err(Error::shape(
            "verify_on_model teacher logits",
            teacher_logits.shape(),
            &[data.len(), net.classes()],
        ));
    }
    let count = max_samples.unwrap_or(data.len()).min(data.len());
    let trace = net.forward_unroll(&data.features()?, timesteps)?;
    let mut report = BoundReport::empty(BOUND_TOLERANCE);
    for i in 0..count {
        let z_list = trace
            .logits
            .iter()
            .map(|z| z.gather_rows(&[i]))
            .collect::<Result<Vec<_>>>()?;
        let zt = teacher_logits.gather_rows(&[i])?;
        let y = one_hot(&[data.labels[i]], net.classes())?;
        report.observe(&z_list, &zt, &y, w)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn lemma1_strict_on_opposed_logits() {
        let y = t(&[&[1.0, 0.0]]);
        let s = check_lemma1(&[t(&[&[2.0, 0.0]]), t(&[&[0.0, 2.0]])], &y).unwrap();
        assert!(s > 0.0);
    }

    #[test]
    fn prop2_with_zero_alpha_is_lemma1() {
        let z = vec![t(&[&[0.3, -1.0, 2.0]]), t(&[&[1.5, 0.2, -0.7]])];
        let y = t(&[&[0.0, 1.0, 0.0]]);
        let zt = t(&[&[2.0, 0.0, 1.0]]);
        let w = LossWeights {
            alpha: 0.0,
            ..LossWeights::default()
        };
        assert_eq!(check_prop2(&z, &zt, &y, &w).unwrap(), check_lemma1(&z, &y).unwrap());
    }

    #[test]
    fn prop3_at_full_prefix_matches_prop2() {
        let z = vec![t(&[&[0.3, -1.0]]), t(&[&[1.5, 0.2]]), t(&[&[-2.0, 0.9]])];
        let y = t(&[&[0.0, 1.0]]);
        let zt = t(&[&[2.0, 0.0]]);
        let w = LossWeights::default();
        assert_eq!(
            check_prop3(&z, &zt, &y, &w, 3).unwrap(),
            check_prop2(&z, &zt, &y, &w).unwrap()
        );
        assert!(check_prop3(&z, &zt, &y, &w, 0).is_err());
        assert!(check_prop3(&z, &zt, &y, &w, 4).is_err());
    }

    #[test]
    fn jensen_split_range() {
        let z = vec![t(&[&[0.3, -1.0]]), t(&[&[1.5, 0.2]])];
        let zt = t(&[&[2.0, 0.0]]);
        assert!(check_jensen_split(&z, &zt, 2.0, 2).is_err());
        assert!(check_jensen_split(&z, &zt, 2.0, 0).is_err());
        let s = check_jensen_split(&z, &zt, 2.0, 1).unwrap();
        assert!(s.second >= -BOUND_TOLERANCE);
        assert!(s.segment >= -BOUND_TOLERANCE);
        assert!(s.segment_second >= -BOUND_TOLERANCE);
    }

    #[test]
    fn constant_logits_make_segment_split_tight() {
        let z = vec![t(&[&[0.3, -1.0, 0.4]]); 4];
        let zt = t(&[&[2.0, 0.0, -1.0]]);
        for k in 1..4 {
            let s = check_jensen_split(&z, &zt, 4.0, k).unwrap();
            assert!(s.segment.abs() < 1e-10, "{s:?}");
            // the (T-T_k)/T² tail coefficient undershoots even here
            assert!(s.first < -1e-3, "{s:?}");
        }
    }

    #[test]
    fn csv_has_one_row_per_inequality() {
        let cfg = TrialConfig {
            trials: 3,
            ..TrialConfig::default()
        };
        let r = verify_random(&cfg).unwrap();
        assert_eq!(r.trials, 3);
        assert_eq!(r.to_csv().lines().count(), 1 + r.inequalities.len());
    }
}
