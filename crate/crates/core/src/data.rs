//! Datasets: 2-D toy densities, delimited-text ingestion, splitting and
//! standardization.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Rng, Vector};

/// Per-coordinate affine map `x ↦ (x − mean) / std` fitted on a training
/// split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    pub fn identity(dim: usize) -> Self {
        Standardization {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vector {
        Vector::from_vec_unchecked(
            x.iter()
                .zip(self.mean.iter().zip(&self.std))
                .map(|(v, (m, s))| (v - m) / s)
                .collect(),
        )
    }

    pub fn invert(&self, z: &[f64]) -> Vector {
        Vector::from_vec_unchecked(
            z.iter()
                .zip(self.mean.iter().zip(&self.std))
                .map(|(v, (m, s))| v * s + m)
                .collect(),
        )
    }

    /// `Σ log σ_i`. Raw-space log-density = standardized log-density minus
    /// this; raw-space NLL = standardized NLL plus this.
    pub fn log_scale(&self) -> f64 {
        self.std.iter().map(|s| s.ln()).sum()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub train: Vec<Vector>,
    pub validation: Vec<Vector>,
    pub test: Vec<Vector>,
    pub standardization: Option<Standardization>,
}

impl Dataset {
    pub fn from_splits(
        train: Vec<Vector>,
        validation: Vec<Vector>,
        test: Vec<Vector>,
    ) -> Result<Self> {
        let dim = train
            .iter()
            .chain(&validation)
            .chain(&test)
            .next()
            .map(|v| v.len())
            .ok_or_else(|| Error::InvalidArgument("dataset is empty".into()))?;
        for v in train.iter().chain(&validation).chain(&test) {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: v.len(),
                });
            }
        }
        Ok(Dataset {
            dim,
            train,
            validation,
            test,
            standardization: None,
        })
    }

    pub fn split(&self, which: Split) -> &[Vector] {
        match which {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Correction added to a standardized-space NLL to obtain the raw-space
    /// NLL.
    pub fn nll_correction(&self) -> f64 {
        self.standardization.as_ref().map_or(0.0, |s| s.log_scale())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ToyKind {
    Mog,
    HalfMoons,
    Sine,
}

impl FromStr for ToyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mog" => Ok(ToyKind::Mog),
            "half-moons" | "moons" => Ok(ToyKind::HalfMoons),
            "sine" => Ok(ToyKind::Sine),
            other => Err(Error::InvalidArgument(format!(
                "unknown toy dataset '{other}' (expected mog, half-moons or sine)"
            ))),
        }
    }
}

impl fmt::Display for ToyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ToyKind::Mog => "mog",
            ToyKind::HalfMoons => "half-moons",
            ToyKind::Sine => "sine",
        })
    }
}

pub const MOG_MEANS: [[f64; 2]; 3] = [[-3.0, 0.0], [0.0, 0.0], [3.0, 0.0]];
/// Per-coordinate standard deviation of each mixture component.
pub const MOG_STD: f64 = 0.5;
pub const DEFAULT_NOISE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        SplitSizes {
            train: 5000,
            validation: 500,
            test: 500,
        }
    }
}

/// Equal-weight mixture of three isotropic Gaussians centred on the x-axis.
pub fn gen_mog_trimodal(rng: &mut Rng, n: usize) -> Vec<Vector> {
    (0..n)
        .map(|_| {
            let c = MOG_MEANS[rng.below(3)];
            Vector::from_vec_unchecked(vec![
                c[0] + MOG_STD * rng.normal(),
                c[1] + MOG_STD * rng.normal(),
            ])
        })
        .collect()
}

/// Two interleaved unit semicircles, the second shifted by `(1, 0.5)` and
/// flipped.
pub fn gen_half_moons(rng: &mut Rng, n: usize, noise: f64) -> Vec<Vector> {
    (0..n)
        .map(|_| {
            let t = std::f64::consts::PI * rng.uniform();
            let (x, y) = if rng.below(2) == 0 {
                (t.cos(), t.sin())
            } else {
                (1.0 - t.cos(), 0.5 - t.sin())
            };
            Vector::from_vec_unchecked(vec![x + noise * rng.normal(), y + noise * rng.normal()])
        })
        .collect()
}

/// `x ~ U[-3, 3]`, `y = sin(2x) + N(0, noise²)`.
pub fn gen_sine(rng: &mut Rng, n: usize, noise: f64) -> Vec<Vector> {
    (0..n)
        .map(|_| {
            let x = rng.uniform_range(-3.0, 3.0);
            Vector::from_vec_unchecked(vec![x, (2.0 * x).sin() + noise * rng.normal()])
        })
        .collect()
}

pub fn toy_samples(kind: ToyKind, rng: &mut Rng, n: usize) -> Vec<Vector> {
    match kind {
        ToyKind::Mog => gen_mog_trimodal(rng, n),
        ToyKind::HalfMoons => gen_half_moons(rng, n, DEFAULT_NOISE),
        ToyKind::Sine => gen_sine(rng, n, DEFAULT_NOISE),
    }
}

/// Independent draws for each split.
pub fn toy_dataset(kind: ToyKind, rng: &mut Rng, sizes: SplitSizes) -> Dataset {
    let train = toy_samples(kind, rng, sizes.train);
    let validation = toy_samples(kind, rng, sizes.validation);
    let test = toy_samples(kind, rng, sizes.test);
    Dataset {
        dim: 2,
        train,
        validation,
        test,
        standardization: None,
    }
}

/// Read a rectangular numeric table. All rows land in the training split;
/// use [`split`] to partition them.
pub fn load_delimited(path: impl AsRef<Path>, delimiter: u8, has_header: bool) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_delimited(file, delimiter, has_header)
}

pub fn read_delimited(
    reader: impl std::io::Read,
    delimiter: u8,
    has_header: bool,
) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows = Vec::new();
    let mut width = None;
    let first_row = if has_header { 2 } else { 1 };
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let row = r + first_row;
        if record.iter().all(|c| c.is_empty()) {
            continue;
        }
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            return Err(Error::Parse {
                row,
                col: record.len().min(w) + 1,
                msg: format!("expected {w} columns, found {}", record.len()),
            });
        }
        let values = record
            .iter()
            .enumerate()
            .map(|(c, cell)| match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Parse {
                    row,
                    col: c + 1,
                    msg: format!("not a finite number: '{cell}'"),
                }),
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(Vector::from_vec_unchecked(values));
    }
    Dataset::from_splits(rows, Vec::new(), Vec::new())
}

/// Pool all rows, shuffle, and re-split by `fractions` (train, validation,
/// test), rounding the first two and giving the remainder to test.
pub fn split(ds: &Dataset, fractions: (f64, f64, f64), rng: &mut Rng) -> Result<Dataset> {
    let (a, b, c) = fractions;
    if a <= 0.0 || b < 0.0 || c < 0.0 || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split fractions must be non-negative and sum to 1, got ({a}, {b}, {c})"
        )));
    }
    let mut all: Vec<Vector> = ds
        .train
        .iter()
        .chain(&ds.validation)
        .chain(&ds.test)
        .cloned()
        .collect();
    rng.shuffle(&mut all);
    let n = all.len();
    let n_train = ((a * n as f64).round() as usize).min(n);
    let n_val = ((b * n as f64).round() as usize).min(n - n_train);
    let test = all.split_off(n_train + n_val);
    let validation = all.split_off(n_train);
    Ok(Dataset {
        dim: ds.dim,
        train: all,
        validation,
        test,
        standardization: ds.standardization.clone(),
    })
}

/// Fit mean and (population) standard deviation on the training split and
/// apply them to every split.
pub fn standardize(ds: &Dataset) -> Result<Dataset> {
    if ds.train.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot standardize an empty training split".into(),
        ));
    }
    let n = ds.train.len() as f64;
    let mut mean = vec![0.0; ds.dim];
    for x in &ds.train {
        crate::linalg::axpy(1.0 / n, x, &mut mean);
    }
    let mut var = vec![0.0; ds.dim];
    for x in &ds.train {
        for ((v, xi), m) in var.iter_mut().zip(x.iter()).zip(&mean) {
            *v += (xi - m) * (xi - m) / n;
        }
    }
    if let Some(col) = var.iter().position(|v| v.is_nan() || *v <= 0.0) {
        return Err(Error::ZeroVariance { col: col + 1 });
    }
    let st = Standardization {
        mean,
        std: var.iter().map(|v| v.sqrt()).collect(),
    };
    let map = |xs: &[Vector]| xs.iter().map(|x| st.apply(x)).collect();
    Ok(Dataset {
        dim: ds.dim,
        train: map(&ds.train),
        validation: map(&ds.validation),
        test: map(&ds.test),
        standardization: Some(st),
    })
}
