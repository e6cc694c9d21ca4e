//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! errors. Keys mirror [`TrainConfig`] fields (`T` is the timestep count);
//! `teacher_*` keys configure the teacher and `classes`, `train_per_class`,
//! `test_per_class`, `noise` the generated spiral data.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::trainer::{TeacherConfig, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub noise: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            classes: 3,
            train_per_class: 200,
            test_per_class: 100,
            noise: 0.2,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub teacher: TeacherConfig,
    pub data: DataConfig,
}

pub const KEYS: &[&str] = &[
    "epochs",
    "batch_size",
    "lr0",
    "momentum",
    "weight_decay",
    "T",
    "alpha",
    "beta",
    "tau",
    "seed",
    "loss_mode",
    "hidden",
    "decay",
    "threshold",
    "surrogate_slope",
    "detach_reset",
    "detach_ensemble_target",
    "teacher_epochs",
    "teacher_batch_size",
    "teacher_lr0",
    "teacher_momentum",
    "teacher_weight_decay",
    "teacher_hidden",
    "classes",
    "train_per_class",
    "test_per_class",
    "noise",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Contract(format!("bad value '{value}' for '{key}'")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|s| parse(key, s.trim())).collect()
}

fn list(xs: &[usize]) -> String {
    xs.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Sets one key; shared by config files and command-line overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (tr, te, d) = (&mut self.train, &mut self.teacher, &mut self.data);
        match key {
            "epochs" => tr.epochs = parse(key, value)?,
            "batch_size" => tr.batch_size = parse(key, value)?,
            "lr0" => tr.lr0 = parse(key, value)?,
            "momentum" => tr.momentum = parse(key, value)?,
            "weight_decay" => tr.weight_decay = parse(key, value)?,
            "T" => tr.timesteps = parse(key, value)?,
            "alpha" => tr.weights.alpha = parse(key, value)?,
            "beta" => tr.weights.beta = parse(key, value)?,
            "tau" => tr.weights.tau = parse(key, value)?,
            "seed" => {
                tr.seed = parse(key, value)?;
                te.seed = tr.seed;
            }
            "loss_mode" => tr.loss_mode = value.parse()?,
            "hidden" => tr.hidden = parse_list(key, value)?,
            "decay" => tr.lif.decay = parse(key, value)?,
            "threshold" => tr.lif.threshold = parse(key, value)?,
            "surrogate_slope" => tr.lif.surrogate_slope = parse(key, value)?,
            "detach_reset" => tr.lif.detach_reset = parse(key, value)?,
            "detach_ensemble_target" => tr.detach_ensemble_target = parse(key, value)?,
            "teacher_epochs" => te.epochs = parse(key, value)?,
            "teacher_batch_size" => te.batch_size = parse(key, value)?,
            "teacher_lr0" => te.lr0 = parse(key, value)?,
            "teacher_momentum" => te.momentum = parse(key, value)?,
            "teacher_weight_decay" => te.weight_decay = parse(key, value)?,
            "teacher_hidden" => te.hidden = parse_list(key, value)?,
            "classes" => d.classes = parse(key, value)?,
            "train_per_class" => d.train_per_class = parse(key, value)?,
            "test_per_class" => d.test_per_class = parse(key, value)?,
            "noise" => d.noise = parse(key, value)?,
            _ => return Err(Error::Contract(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    pub fn parse_text(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected 'key = value', got '{line}'")))?;
            cfg.set(k.trim(), v.trim()).map_err(|e| err(e.to_string()))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_text(&text, path)
    }

    /// Every key with its current value, in [`KEYS`] order.
    pub fn to_text(&self) -> String {
        let (tr, te, d) = (&self.train, &self.teacher, &self.data);
        let values: Vec<String> = vec![
            tr.epochs.to_string(),
            tr.batch_size.to_string(),
            format!("{:?}", tr.lr0),
            format!("{:?}", tr.momentum),
            format!("{:?}", tr.weight_decay),
            tr.timesteps.to_string(),
            format!("{:?}", tr.weights.alpha),
            format!("{:?}", tr.weights.beta),
            format!("{:?}", tr.weights.tau),
            tr.seed.to_string(),
            tr.loss_mode.to_string(),
            list(&tr.hidden),
            format!("{:?}", tr.lif.decay),
            format!("{:?}", tr.lif.threshold),
            format!("{:?}", tr.lif.surrogate_slope),
            tr.lif.detach_reset.to_string(),
            tr.detach_ensemble_target.to_string(),
            te.epochs.to_string(),
            te.batch_size.to_string(),
            format!("{:?}", te.lr0),
            format!("{:?}", te.momentum),
            format!("{:?}", te.weight_decay),
            list(&te.hidden),
            d.classes.to_string(),
            d.train_per_class.to_string(),
            d.test_per_class.to_string(),
            format!("{:?}", d.noise),
        ];
        let mut out = String::new();
        for (k, v) in KEYS.iter().zip(values) {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossMode;

    #[test]
    fn parses_and_rejects_unknown() {
        let p = Path::new("x.cfg");
        let c = RunConfig::parse_text("# comment\nT = 4\nloss_mode = twce_only\nhidden = 16, 8\n", p).unwrap();
        assert_eq!(c.train.timesteps, 4);
        assert_eq!(c.train.loss_mode, LossMode::TwceOnly);
        assert_eq!(c.train.hidden, vec![16, 8]);
        let e = RunConfig::parse_text("\nepochz = 3\n", p).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }), "{e}");
    }

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.set("tau", "2.5").unwrap();
        c.set("seed", "11").unwrap();
        let back = RunConfig::parse_text(&c.to_text(), Path::new("x")).unwrap();
        assert_eq!(back, c);
    }
}
