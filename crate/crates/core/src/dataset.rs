//! Regression data: CSV ingestion, seeded train/test split and standardisation.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{FlowError, Result};
use crate::rng;
use crate::scalar::Scalar;

/// Smallest dataset accepted.
pub const MIN_ROWS: usize = 10;

/// Features and targets standardised with statistics of the training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionDataset<T> {
    /// Standardised features, one row per example.
    pub features: Vec<Vec<T>>,
    /// Standardised targets.
    pub targets: Vec<T>,
    pub feature_mean: Vec<T>,
    pub feature_std: Vec<T>,
    pub target_mean: T,
    pub target_std: T,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn mean_std<T: Scalar>(values: impl Iterator<Item = T> + Clone) -> (T, T) {
    let n = T::lit(values.clone().count() as f64);
    let mean = values.clone().fold(T::zero(), |a, v| a + v) / n;
    let var = values.fold(T::zero(), |a, v| a + (v - mean) * (v - mean)) / n;
    let sd = var.sqrt();
    // constant columns are centred but left unscaled
    (mean, if sd > T::zero() { sd } else { T::one() })
}

impl<T: Scalar> RegressionDataset<T> {
    /// Shuffles rows with `seed`, keeps `round(ratio * N)` for training and
    /// standardises everything with training statistics.
    pub fn from_rows(x: Vec<Vec<T>>, y: Vec<T>, split_ratio: f64, seed: u64) -> Result<Self> {
        let n = y.len();
        if x.len() != n {
            return Err(FlowError::DimensionMismatch {
                expected: n,
                got: x.len(),
            });
        }
        if n < MIN_ROWS {
            return Err(FlowError::InvalidInput(format!(
                "dataset has {n} rows, need at least {MIN_ROWS}"
            )));
        }
        if !(split_ratio > 0.0 && split_ratio < 1.0) {
            return Err(FlowError::InvalidInput(format!(
                "split ratio {split_ratio} not in (0, 1)"
            )));
        }
        let d = x[0].len();
        if let Some(bad) = x.iter().position(|r| r.len() != d) {
            return Err(FlowError::DimensionMismatch {
                expected: d,
                got: x[bad].len(),
            });
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream(seed, "split"));
        let n_train = ((split_ratio * n as f64).round() as usize).clamp(1, n - 1);
        let mut train = order[..n_train].to_vec();
        let mut test = order[n_train..].to_vec();
        train.sort_unstable();
        test.sort_unstable();

        let (feature_mean, feature_std): (Vec<T>, Vec<T>) =
            (0..d).map(|c| mean_std(train.iter().map(|&i| x[i][c]))).unzip();
        let (target_mean, target_std) = mean_std(train.iter().map(|&i| y[i]));
        let features = x
            .iter()
            .map(|row| {
                row.iter()
                    .zip(&feature_mean)
                    .zip(&feature_std)
                    .map(|((&v, &m), &s)| (v - m) / s)
                    .collect()
            })
            .collect();
        let targets = y.iter().map(|&v| (v - target_mean) / target_std).collect();
        Ok(Self {
            features,
            targets,
            feature_mean,
            feature_std,
            target_mean,
            target_std,
            train,
            test,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_mean.len()
    }

    pub fn standardize_features(&self, raw: &[T]) -> Vec<T> {
        raw.iter()
            .zip(&self.feature_mean)
            .zip(&self.feature_std)
            .map(|((&v, &m), &s)| (v - m) / s)
            .collect()
    }

    pub fn destandardize_target(&self, v: T) -> T {
        v * self.target_std + self.target_mean
    }

    /// Target of row `i` on its original scale.
    pub fn raw_target(&self, i: usize) -> T {
        self.destandardize_target(self.targets[i])
    }
}

/// Loads a headered numeric CSV; `target_column` names the response.
pub fn load_csv_dataset<T: Scalar>(
    path: &Path,
    target_column: &str,
    split_ratio: f64,
    seed: u64,
) -> Result<RegressionDataset<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| FlowError::Io(e.to_string()))?;
    let headers = reader.headers().map_err(|e| FlowError::Io(e.to_string()))?.clone();
    let target = headers
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| FlowError::InvalidInput(format!("no column named `{target_column}`")))?;
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (r, record) in reader.records().enumerate() {
        // row numbers count the header as row 1
        let row = r + 2;
        let record = record.map_err(|e| FlowError::Parse {
            row,
            column: 0,
            message: e.to_string(),
        })?;
        if record.len() != headers.len() {
            return Err(FlowError::Parse {
                row,
                column: record.len().min(headers.len()) + 1,
                message: format!("expected {} fields, got {}", headers.len(), record.len()),
            });
        }
        let mut feats = Vec::with_capacity(headers.len() - 1);
        for (c, cell) in record.iter().enumerate() {
            let v = T::from_str_radix(cell, 10)
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| FlowError::Parse {
                    row,
                    column: c + 1,
                    message: format!("not a finite number: `{cell}`"),
                })?;
            if c == target {
                y.push(v);
            } else {
                feats.push(v);
            }
        }
        x.push(feats);
    }
    RegressionDataset::from_rows(x, y, split_ratio, seed)
}

/// `n` points with `x ~ U(-3, 3)` and `y = sin(x) + noise_sd * N(0, 1)`.
pub fn synthetic_sine<T: Scalar>(n: usize, noise_sd: f64, seed: u64) -> (Vec<Vec<T>>, Vec<T>) {
    let mut rng = rng::stream(seed, "synthetic-sine");
    (0..n)
        .map(|_| {
            let x: f64 = rng.random_range(-3.0..3.0);
            let e: f64 = rng.sample(StandardNormal);
            (vec![T::lit(x)], T::lit(x.sin() + noise_sd * e))
        })
        .unzip()
}
