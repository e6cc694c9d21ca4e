//! Inference-time evaluation: prefix-timestep sweeps, confidence-based early
//! exit, firing rates, and per-timestep logits dumps.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::ensemble_logits;
use crate::snn::{SnnNetwork, Trace};
use crate::tensor::{softmax, Tensor};

fn accuracy_of(logits: &Tensor, labels: &[usize]) -> f64 {
    let hits = logits
        .argmax_rows()
        .iter()
        .zip(labels)
        .filter(|(p, y)| p == y)
        .count();
    hits as f64 / labels.len() as f64
}

fn trace(net: &SnnNetwork, data: &Dataset, timesteps: usize) -> Result<Trace> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    net.forward_unroll(&data.features()?, timesteps)
}

/// Accuracy of the ensemble of the first `prefix` timesteps.
pub fn eval_at(net: &SnnNetwork, data: &Dataset, prefix: usize) -> Result<f64> {
    if prefix < 1 {
        return Err(Error::Contract("T_k must be >= 1".into()));
    }
    let tr = trace(net, data, prefix)?;
    Ok(accuracy_of(&ensemble_logits(&tr.logits, None)?, &data.labels))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub trained_t: usize,
    /// `accuracy[k - 1]` is the accuracy at inference `T_k = k`.
    pub accuracy: Vec<f64>,
}

/// Accuracy at every `T_k = 1..=trained_t` from a single unroll.
pub fn full_range_sweep(net: &SnnNetwork, data: &Dataset, trained_t: usize) -> Result<SweepResult> {
    if trained_t < 1 {
        return Err(Error::Contract("trained T must be >= 1".into()));
    }
    let tr = trace(net, data, trained_t)?;
    let accuracy = (1..=trained_t)
        .map(|k| Ok(accuracy_of(&ensemble_logits(&tr.logits[..k], None)?, &data.labels)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult { trained_t, accuracy })
}

/// Rows = trained T, columns = inference T_k; blank where `T_k > trained T`.
pub fn sweep_csv(rows: &[SweepResult]) -> String {
    let width = rows.iter().map(|r| r.trained_t).max().unwrap_or(0);
    let mut out = String::from("trained_T");
    for k in 1..=width {
        let _ = write!(out, ",T{k}");
    }
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{}", r.trained_t);
        for k in 0..width {
            match r.accuracy.get(k) {
                Some(a) => {
                    let _ = write!(out, ",{a:?}");
                }
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EarlyExitResult {
    pub cs_threshold: f64,
    pub accuracy: f64,
    pub avg_timesteps: f64,
}

/// Confidence of a running ensemble; the maximum softmax probability.
pub fn max_probability(z: &[f64]) -> f64 {
    softmax(z).into_iter().fold(0.0, f64::max)
}

/// Per sample, accumulate timesteps until the running ensemble's
/// confidence reaches `cs` (or `T` is reached) and predict there.
pub fn early_exit_eval(net: &SnnNetwork, data: &Dataset, timesteps: usize, cs: f64) -> Result<EarlyExitResult> {
    if !(cs > 0.0 && cs <= 1.0) {
        return Err(Error::Contract(format!("confidence threshold {cs} not in (0, 1]")));
    }
    let tr = trace(net, data, timesteps)?;
    let prefixes = (1..=timesteps)
        .map(|k| ensemble_logits(&tr.logits[..k], None))
        .collect::<Result<Vec<_>>>()?;
    let mut hits = 0usize;
    let mut steps = 0usize;
    for (i, &label) in data.labels.iter().enumerate() {
        let exit = (1..=timesteps)
            .find(|&k| max_probability(prefixes[k - 1].row(i)) >= cs)
            .unwrap_or(timesteps);
        steps += exit;
        let pred = prefixes[exit - 1].gather_rows(&[i])?.argmax_rows()[0];
        hits += usize::from(pred == label);
    }
    let n = data.len() as f64;
    Ok(EarlyExitResult {
        cs_threshold: cs,
        accuracy: hits as f64 / n,
        avg_timesteps: steps as f64 / n,
    })
}

pub fn early_exit_csv(rows: &[EarlyExitResult]) -> String {
    let mut out = String::from("cs,acc,T_avg\n");
    for r in rows {
        let _ = writeln!(out, "{:?},{:?},{:?}", r.cs_threshold, r.accuracy, r.avg_timesteps);
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct FiringRates {
    /// Mean spike value over all hidden neurons and samples at each step.
    pub per_step: Vec<f64>,
    pub overall: f64,
}

pub fn firing_rate_stats(net: &SnnNetwork, data: &Dataset, timesteps: usize) -> Result<FiringRates> {
    let tr = trace(net, data, timesteps)?;
    let per_step: Vec<f64> = tr
        .spikes
        .iter()
        .map(|layers| {
            let (sum, count) = layers
                .iter()
                .fold((0.0, 0usize), |(s, c), t| (s + t.sum(), c + t.numel()));
            sum / count as f64
        })
        .collect();
    let overall = per_step.iter().sum::<f64>() / per_step.len() as f64;
    Ok(FiringRates { per_step, overall })
}

pub fn firing_rates_csv(r: &FiringRates) -> String {
    let mut out = String::from("t,rate\n");
    for (k, v) in r.per_step.iter().enumerate() {
        let _ = writeln!(out, "{},{v:?}", k + 1);
    }
    let _ = writeln!(out, "all,{:?}", r.overall);
    out
}

/// Per-timestep logits plus one `t = ens` row (the full-horizon ensemble)
/// per sample. Columns: `sample_id,label,t,z_1..z_n`.
pub fn logits_csv(net: &SnnNetwork, data: &Dataset, timesteps: usize) -> Result<String> {
    let mut out = String::from("sample_id,label,t");
    for j in 1..=net.classes() {
        let _ = write!(out, ",z_{j}");
    }
    out.push('\n');
    if data.is_empty() {
        return Ok(out);
    }
    let tr = trace(net, data, timesteps)?;
    let ens = ensemble_logits(&tr.logits, None)?;
    for (i, label) in data.labels.iter().enumerate() {
        let rows = tr
            .logits
            .iter()
            .enumerate()
            .map(|(k, z)| ((k + 1).to_string(), z.row(i)))
            .chain(std::iter::once(("ens".to_string(), ens.row(i))));
        for (t, z) in rows {
            let _ = write!(out, "{i},{label},{t}");
            for v in z {
                let _ = write!(out, ",{v:?}");
            }
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn dump_logits(net: &SnnNetwork, data: &Dataset, timesteps: usize, path: &Path) -> Result<()> {
    let csv = logits_csv(net, data, timesteps)?;
    std::fs::write(path, csv).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use crate::snn::LifConfig;

    fn tiny() -> (SnnNetwork, Dataset) {
        let mut net = SnnNetwork::zeros(&[2, 3, 2], LifConfig::default()).unwrap();
        net.readout.bias = Tensor::new(&[2], vec![0.5, -0.5]).unwrap();
        let d = Dataset::new(vec![0.1, 0.2, -0.3, 0.4], 2, vec![0, 1], 2, Split::Test).unwrap();
        (net, d)
    }

    #[test]
    fn dump_row_count() {
        let (net, d) = tiny();
        let csv = logits_csv(&net, &d, 2).unwrap();
        assert_eq!(csv.lines().count(), 1 + 6);
        let empty = Dataset::new(vec![], 2, vec![], 2, Split::Test).unwrap();
        assert_eq!(logits_csv(&net, &empty, 2).unwrap().lines().count(), 1);
    }

    #[test]
    fn early_exit_range() {
        let (net, d) = tiny();
        assert!(early_exit_eval(&net, &d, 2, 0.0).is_err());
        assert!(early_exit_eval(&net, &d, 2, 1.0 + 1e-12).is_err());
        let r = early_exit_eval(&net, &d, 3, 1e-9).unwrap();
        assert_eq!(r.avg_timesteps, 1.0);
    }

    #[test]
    fn silent_network_fires_nothing() {
        let (net, d) = tiny();
        let r = firing_rate_stats(&net, &d, 4).unwrap();
        assert!(r.per_step.iter().all(|&x| x == 0.0));
    }
}
