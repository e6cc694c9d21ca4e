//! Text checkpoints: a key/value header followed by named flat arrays.
//!
//! ```text
//! tdsnn-checkpoint
//! format_version 1
//! kind snn
//! layer_sizes 2 64 64 3
//! ...
//! tensor hidden.0.weight 2 64
//! 0.12 -0.03 ...
//! end
//! ```
//!
//! Every number is written in Rust's shortest round-trip form, so loading
//! restores bit-identical values.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::layers::Parameterized;
use crate::losses::{LossMode, LossWeights};
use crate::snn::{LifConfig, SnnNetwork};
use crate::teacher::TeacherModel;
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "tdsnn-checkpoint";

/// Training metadata stored alongside a student network.
#[derive(Clone, Debug, PartialEq)]
pub struct StudentMeta {
    pub trained_t: usize,
    pub weights: LossWeights,
    pub seed: u64,
    pub loss_mode: LossMode,
}

/// Parsed checkpoint document.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub format_version: u32,
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor)>,
}

fn join<T: std::fmt::Debug>(xs: &[T]) -> String {
    xs.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ")
}

impl Checkpoint {
    fn new() -> Self {
        Checkpoint {
            format_version: FORMAT_VERSION,
            meta: Vec::new(),
            tensors: Vec::new(),
        }
    }

    fn set(&mut self, key: &str, value: impl ToString) {
        self.meta.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn require<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .get(key)
            .ok_or_else(|| Error::Contract(format!("checkpoint missing '{key}'")))?;
        raw.parse()
            .map_err(|_| Error::Contract(format!("checkpoint '{key}' has bad value '{raw}'")))
    }

    fn sizes(&self) -> Result<Vec<usize>> {
        let raw = self
            .get("layer_sizes")
            .ok_or_else(|| Error::Contract("checkpoint missing 'layer_sizes'".into()))?;
        raw.split_whitespace()
            .map(|s| s.parse().map_err(|_| Error::Contract(format!("bad layer size '{s}'"))))
            .collect()
    }

    fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Contract(format!("checkpoint missing tensor '{name}'")))
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{MAGIC}\nformat_version {}\n", self.format_version);
        for (k, v) in &self.meta {
            let _ = writeln!(out, "{k} {v}");
        }
        for (name, t) in &self.tensors {
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            let _ = writeln!(out, "tensor {name} {}", dims.join(" "));
            let _ = writeln!(out, "{}", join(t.data()));
        }
        out.push_str("end\n");
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, MAGIC)) => {}
            _ => return Err(err(1, format!("missing '{MAGIC}' header"))),
        }
        let version = match lines.next() {
            Some((n, l)) => {
                let v = l
                    .strip_prefix("format_version ")
                    .and_then(|v| v.trim().parse::<u32>().ok())
                    .ok_or_else(|| err(n, "expected 'format_version <int>'".into()))?;
                v
            }
            None => return Err(err(2, "truncated before format_version".into())),
        };
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                supported: FORMAT_VERSION,
            });
        }

        let mut ck = Checkpoint::new();
        let mut ended = false;
        while let Some((n, line)) = lines.next() {
            if line == "end" {
                ended = true;
                break;
            }
            if let Some(rest) = line.strip_prefix("tensor ") {
                let mut parts = rest.split_whitespace();
                let name = parts.next().ok_or_else(|| err(n, "tensor without a name".into()))?;
                let shape = parts
                    .map(|s| s.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| err(n, "bad tensor shape".into()))?;
                let (m, values) = lines
                    .next()
                    .ok_or_else(|| err(n + 1, format!("truncated inside tensor '{name}'")))?;
                let data = values
                    .split_whitespace()
                    .map(|s| s.parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| err(m, format!("bad number in tensor '{name}'")))?;
                let t = Tensor::new(&shape, data).map_err(|e| err(m, format!("tensor '{name}': {e}")))?;
                ck.tensors.push((name.to_string(), t));
            } else {
                let (k, v) = line.split_once(' ').ok_or_else(|| err(n, format!("expected 'key value', got '{line}'")))?;
                ck.meta.push((k.to_string(), v.to_string()));
            }
        }
        if !ended {
            return Err(err(text.lines().count() + 1, "truncated: no 'end' marker".into()));
        }
        Ok(ck)
    }

    pub fn from_student(net: &SnnNetwork, meta: &StudentMeta) -> Self {
        let mut ck = Checkpoint::new();
        ck.set("kind", "snn");
        ck.set("layer_sizes", join(&net.layer_sizes()));
        for (k, cfg) in net.lif.iter().enumerate() {
            ck.set(&format!("lif.{k}.decay"), format!("{:?}", cfg.decay));
            ck.set(&format!("lif.{k}.threshold"), format!("{:?}", cfg.threshold));
            ck.set(&format!("lif.{k}.surrogate_slope"), format!("{:?}", cfg.surrogate_slope));
            ck.set(&format!("lif.{k}.detach_reset"), cfg.detach_reset);
        }
        ck.set("trained_T", meta.trained_t);
        ck.set("alpha", format!("{:?}", meta.weights.alpha));
        ck.set("beta", format!("{:?}", meta.weights.beta));
        ck.set("tau", format!("{:?}", meta.weights.tau));
        ck.set("seed", meta.seed);
        ck.set("loss_mode", meta.loss_mode);
        let names = (0..net.hidden.len())
            .map(|k| format!("hidden.{k}"))
            .chain(std::iter::once("readout".to_string()));
        for (name, pair) in names.zip(net.params().chunks(2)) {
            ck.tensors.push((format!("{name}.weight"), pair[0].clone()));
            ck.tensors.push((format!("{name}.bias"), pair[1].clone()));
        }
        ck
    }

    pub fn to_student(&self) -> Result<(SnnNetwork, StudentMeta)> {
        if self.get("kind") != Some("snn") {
            return Err(Error::Contract("checkpoint is not a spiking network".into()));
        }
        let sizes = self.sizes()?;
        let mut net = SnnNetwork::zeros(&sizes, LifConfig::default())?;
        for k in 0..net.hidden.len() {
            net.lif[k] = LifConfig {
                decay: self.require(&format!("lif.{k}.decay"))?,
                threshold: self.require(&format!("lif.{k}.threshold"))?,
                surrogate_slope: self.require(&format!("lif.{k}.surrogate_slope"))?,
                detach_reset: self.require(&format!("lif.{k}.detach_reset"))?,
                smooth_spikes: false,
            };
            net.hidden[k].weight = self.tensor(&format!("hidden.{k}.weight"))?.clone();
            net.hidden[k].bias = self.tensor(&format!("hidden.{k}.bias"))?.clone();
        }
        net.readout.weight = self.tensor("readout.weight")?.clone();
        net.readout.bias = self.tensor("readout.bias")?.clone();
        net.validate()?;
        let meta = StudentMeta {
            trained_t: self.require("trained_T")?,
            weights: LossWeights {
                alpha: self.require("alpha")?,
                beta: self.require("beta")?,
                tau: self.require("tau")?,
            },
            seed: self.require("seed")?,
            loss_mode: self.require("loss_mode")?,
        };
        Ok((net, meta))
    }

    pub fn from_teacher(model: &TeacherModel, seed: u64) -> Self {
        let mut ck = Checkpoint::new();
        ck.set("kind", "mlp");
        ck.set("layer_sizes", join(&model.layer_sizes()));
        ck.set("seed", seed);
        for (k, l) in model.layers.iter().enumerate() {
            ck.tensors.push((format!("layer.{k}.weight"), l.weight.clone()));
            ck.tensors.push((format!("layer.{k}.bias"), l.bias.clone()));
        }
        ck
    }

    pub fn to_teacher(&self) -> Result<TeacherModel> {
        if self.get("kind") != Some("mlp") {
            return Err(Error::Contract("checkpoint is not a teacher MLP".into()));
        }
        let sizes = self.sizes()?;
        let mut model = TeacherModel::zeros(&sizes)?;
        for (k, l) in model.layers.iter_mut().enumerate() {
            let w = self.tensor(&format!("layer.{k}.weight"))?;
            let b = self.tensor(&format!("layer.{k}.bias"))?;
            if w.shape() != l.weight.shape() || b.shape() != l.bias.shape() {
                return Err(Error::shape("teacher checkpoint", w.shape(), l.weight.shape()));
            }
            l.weight = w.clone();
            l.bias = b.clone();
        }
        Ok(model)
    }
}

fn write_text(path: &Path, text: String) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::parse(&text, path)
}

pub fn save_checkpoint(net: &SnnNetwork, meta: &StudentMeta, path: &Path) -> Result<()> {
    write_text(path, Checkpoint::from_student(net, meta).to_text())
}

pub fn load_checkpoint(path: &Path) -> Result<(SnnNetwork, StudentMeta)> {
    read_checkpoint(path)?.to_student()
}

pub fn save_teacher(model: &TeacherModel, seed: u64, path: &Path) -> Result<()> {
    write_text(path, Checkpoint::from_teacher(model, seed).to_text())
}

pub fn load_teacher(path: &Path) -> Result<TeacherModel> {
    read_checkpoint(path)?.to_teacher()
}
