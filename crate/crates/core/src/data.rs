//! Datasets: synthetic spirals, CSV ingestion and teacher-logit tables.
//!
//! Dataset CSV: header `label,f1,...,fd`, one sample per row.
//! Teacher-logits CSV: header `sample_id,z1,...,zn`, where `sample_id` is
//! the 0-based row index of the sample in its dataset.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// Row-major `[len×dim]` features.
    x: Vec<f64>,
    dim: usize,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(x: Vec<f64>, dim: usize, labels: Vec<usize>, classes: usize, split: Split) -> Result<Self> {
        if dim == 0 || x.len() != dim * labels.len() {
            return Err(Error::Contract(format!(
                "{} features do not fit {} samples of dimension {dim}",
                x.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Contract(format!("label {bad} out of range for {classes} classes")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("features must be finite".into()));
        }
        Ok(Dataset {
            x,
            dim,
            labels,
            classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    /// All features as a `[len×dim]` matrix.
    pub fn features(&self) -> Result<Tensor> {
        if self.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Tensor::new(&[self.len(), self.dim], self.x.clone())
    }

    /// Features and labels of the samples at `idx`.
    pub fn batch(&self, idx: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        if idx.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut x = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            x.extend_from_slice(self.row(i));
        }
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        Ok((Tensor::new(&[idx.len(), self.dim], x)?, labels))
    }

    /// Per-feature mean and population standard deviation.
    pub fn feature_stats(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.len().max(1) as f64;
        let mut mean = vec![0.0; self.dim];
        for i in 0..self.len() {
            for (m, v) in mean.iter_mut().zip(self.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; self.dim];
        for i in 0..self.len() {
            for ((s, v), m) in var.iter_mut().zip(self.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
        (mean, std)
    }

    /// Applies `(x - mean) / std` per feature; constant features are only centred.
    pub fn standardize_with(&mut self, mean: &[f64], std: &[f64]) {
        let dim = self.dim;
        for row in self.x.chunks_mut(dim) {
            for ((v, m), s) in row.iter_mut().zip(mean).zip(std) {
                *v -= m;
                if *s > 0.0 {
                    *v /= s;
                }
            }
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("label");
        for j in 1..=self.dim {
            let _ = write!(out, ",f{j}");
        }
        out.push('\n');
        for i in 0..self.len() {
            let _ = write!(out, "{}", self.labels[i]);
            for v in self.row(i) {
                let _ = write!(out, ",{v:?}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn spiral_raw(classes: usize, per_class: usize, noise: f64, rng: &mut ChaCha8Rng, split: Split) -> Result<Dataset> {
    let mut x = Vec::with_capacity(2 * classes * per_class);
    let mut labels = Vec::with_capacity(classes * per_class);
    for j in 0..classes {
        let offset = 2.0 * PI * j as f64 / classes as f64;
        for _ in 0..per_class {
            let r = 0.1 + 0.9 * rng.random::<f64>();
            let eps: f64 = rng.sample(StandardNormal);
            let theta = offset + 4.0 * r + noise * eps;
            x.push(r * theta.sin());
            x.push(r * theta.cos());
            labels.push(j);
        }
    }
    Dataset::new(x, 2, labels, classes, split)
}

fn check_spiral_args(classes: usize, per_class: usize, noise: f64) -> Result<()> {
    if classes < 2 || per_class < 1 || !(noise >= 0.0) || !noise.is_finite() {
        return Err(Error::Contract(format!(
            "spiral needs classes >= 2, per_class >= 1, noise >= 0 (got {classes}, {per_class}, {noise})"
        )));
    }
    Ok(())
}

/// Interleaved 2-D spirals, standardised to zero mean and unit variance.
///
/// Class `j` follows `θ = 2πj/classes + 4r` for radius `r ∈ [0.1, 1)`,
/// with Gaussian angular noise of standard deviation `noise` radians.
pub fn gen_spiral(classes: usize, per_class: usize, noise: f64, seed: u64) -> Result<Dataset> {
    check_spiral_args(classes, per_class, noise)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d = spiral_raw(classes, per_class, noise, &mut rng, Split::Train)?;
    let (m, s) = d.feature_stats();
    d.standardize_with(&m, &s);
    Ok(d)
}

/// Independent train and test spirals, both standardised with the
/// training statistics.
pub fn gen_spiral_split(
    classes: usize,
    train_per_class: usize,
    test_per_class: usize,
    noise: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    check_spiral_args(classes, train_per_class, noise)?;
    check_spiral_args(classes, test_per_class, noise)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = spiral_raw(classes, train_per_class, noise, &mut rng, Split::Train)?;
    rng.set_stream(1);
    let mut test = spiral_raw(classes, test_per_class, noise, &mut rng, Split::Test)?;
    let (m, s) = train.feature_stats();
    train.standardize_with(&m, &s);
    test.standardize_with(&m, &s);
    Ok((train, test))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn csv_record_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    parse_err(path, line, e.to_string())
}

/// Reads a dataset CSV. `classes` defaults to `max(label) + 1`.
///
/// Line numbers in errors count the header as line 1.
pub fn load_csv_dataset(path: &Path, label_column: &str, classes: Option<usize>, split: Split) -> Result<Dataset> {
    let mut rdr = csv_reader(path)?;
    let header = rdr.headers().map_err(|e| csv_record_err(path, e))?.clone();
    let label_idx = header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| parse_err(path, 1, format!("no '{label_column}' column in header")))?;
    let dim = header.len() - 1;
    if dim == 0 {
        return Err(parse_err(path, 1, "header has no feature columns"));
    }

    let mut x = Vec::new();
    let mut labels = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| csv_record_err(path, e))?;
        if rec.len() != header.len() {
            return Err(parse_err(path, line, format!("expected {} cells, got {}", header.len(), rec.len())));
        }
        for (j, cell) in rec.iter().enumerate() {
            if j == label_idx {
                let y = cell
                    .parse::<usize>()
                    .map_err(|_| parse_err(path, line, format!("label '{cell}' is not a non-negative integer")))?;
                labels.push(y);
            } else {
                let v = cell
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(path, line, format!("non-numeric cell '{cell}'")))?;
                x.push(v);
            }
        }
        if let Some(c) = classes {
            let y = *labels.last().unwrap();
            if y >= c {
                return Err(parse_err(path, line, format!("label {y} out of range for {c} classes")));
            }
        }
    }
    let classes = classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    Dataset::new(x, dim, labels, classes, split)
}

/// Per-sample teacher logits keyed by sample id.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitsTable {
    pub ids: Vec<usize>,
    /// `[rows×classes]`, row `k` belongs to `ids[k]`.
    pub logits: Tensor,
}

impl LogitsTable {
    pub fn classes(&self) -> usize {
        self.logits.cols()
    }

    /// Logits for samples `0..len`, in id order.
    pub fn aligned(&self, len: usize) -> Result<Tensor> {
        let mut pos = vec![None; len];
        for (k, &id) in self.ids.iter().enumerate() {
            if id < len {
                pos[id] = Some(k);
            }
        }
        let rows = pos
            .iter()
            .enumerate()
            .map(|(id, p)| p.ok_or_else(|| Error::Contract(format!("teacher logits missing sample id {id}"))))
            .collect::<Result<Vec<_>>>()?;
        self.logits.gather_rows(&rows)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample_id");
        for j in 1..=self.classes() {
            let _ = write!(out, ",z{j}");
        }
        out.push('\n');
        for (k, id) in self.ids.iter().enumerate() {
            let _ = write!(out, "{id}");
            for v in self.logits.row(k) {
                let _ = write!(out, ",{v:?}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Reads a teacher-logits CSV whose width must match `classes`.
pub fn load_teacher_logits(path: &Path, classes: usize) -> Result<LogitsTable> {
    let mut rdr = csv_reader(path)?;
    let header = rdr.headers().map_err(|e| csv_record_err(path, e))?.clone();
    if header.get(0) != Some("sample_id") {
        return Err(parse_err(path, 1, "first column must be 'sample_id'"));
    }
    if header.len() - 1 != classes {
        return Err(Error::shape("teacher logits columns", &[header.len() - 1], &[classes]));
    }
    let mut ids = Vec::new();
    let mut data = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| csv_record_err(path, e))?;
        if rec.len() != header.len() {
            return Err(Error::shape("teacher logits row", &[rec.len() - 1], &[classes]));
        }
        let id = rec[0]
            .parse::<usize>()
            .map_err(|_| parse_err(path, line, format!("bad sample_id '{}'", &rec[0])))?;
        ids.push(id);
        for cell in rec.iter().skip(1) {
            data.push(
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(path, line, format!("non-numeric cell '{cell}'")))?,
            );
        }
    }
    if ids.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(LogitsTable {
        logits: Tensor::new(&[ids.len(), classes], data)?,
        ids,
    })
}
