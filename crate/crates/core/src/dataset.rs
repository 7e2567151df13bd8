//! Dataset loading, standardization, and train/test/fold splitting.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Expected column order of the input file (target last).
pub const COLUMN_NAMES: [&str; 11] = [
    "age", "sex", "bmi", "bp", "s1", "s2", "s3", "s4", "s5", "s6", "target",
];

/// Number of feature columns.
pub const N_FEATURES: usize = 10;

/// Minimum number of samples so that quartiles are well defined.
pub const MIN_ROWS: usize = 8;

/// A loaded tabular dataset: feature matrix plus regression target.
#[derive(Debug, Clone)]
pub struct RawDataset {
    pub feature_names: Vec<String>,
    /// n_samples x N_FEATURES.
    pub features: Array2<f64>,
    pub target: Vec<f64>,
}

impl RawDataset {
    pub fn n_samples(&self) -> usize {
        self.features.nrows()
    }

    /// Row subset in the given index order.
    pub fn subset(&self, indices: &[usize]) -> RawDataset {
        let features = Array2::from_shape_fn((indices.len(), self.features.ncols()), |(i, j)| {
            self.features[[indices[i], j]]
        });
        let target = indices.iter().map(|&i| self.target[i]).collect();
        RawDataset {
            feature_names: self.feature_names.clone(),
            features,
            target,
        }
    }
}

/// Per-column mean and population standard deviation (features + target).
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct StandardizationStats {
    /// Length 11: one entry per feature column, target last.
    pub mean: Vec<f64>,
    /// Same layout as `mean`; all entries strictly positive.
    pub std: Vec<f64>,
}

/// Deterministic train/test split with 5 cross-validation folds.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    /// Disjoint index lists (into the original dataset) covering `train_indices`.
    pub folds: Vec<Vec<usize>>,
}

impl SplitSpec {
    /// Fold indices remapped to positions within `train_indices`.
    ///
    /// Fold k holds train positions k, k+5, k+10, ... because folds are
    /// assigned round-robin over the shuffled train order.
    pub fn train_local_folds(&self) -> Vec<Vec<usize>> {
        (0..self.folds.len())
            .map(|k| (k..self.train_indices.len()).step_by(self.folds.len()).collect())
            .collect()
    }
}

/// Load a dataset from a comma- or tab-separated file.
///
/// The header must name the 11 expected columns (case-insensitive, target
/// last); the delimiter is auto-detected from the header row.
pub fn load_dataset(path: &Path) -> Result<RawDataset> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut lines = text.lines().map(|l| l.trim_end_matches('\r'));

    let header = lines.next().unwrap_or("");
    let delim = if header.contains('\t') { '\t' } else { ',' };
    let names: Vec<&str> = header.split(delim).map(str::trim).collect();
    if names.len() != COLUMN_NAMES.len() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!(
                "header has {} columns, expected {}",
                names.len(),
                COLUMN_NAMES.len()
            ),
        });
    }
    for (got, want) in names.iter().zip(COLUMN_NAMES) {
        if !got.eq_ignore_ascii_case(want) {
            return Err(Error::Format {
                path: path.to_path_buf(),
                msg: format!("expected column {want:?}, found {got:?}"),
            });
        }
    }

    let mut rows: Vec<[f64; 11]> = Vec::new();
    for (line_no, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(delim).map(str::trim).collect();
        if cells.len() != COLUMN_NAMES.len() {
            return Err(Error::Format {
                path: path.to_path_buf(),
                msg: format!(
                    "row {} has {} columns, expected {}",
                    line_no + 1,
                    cells.len(),
                    COLUMN_NAMES.len()
                ),
            });
        }
        let mut row = [0.0f64; 11];
        for (j, cell) in cells.iter().enumerate() {
            let parsed = cell.parse::<f64>().ok().filter(|v| v.is_finite());
            row[j] = parsed.ok_or_else(|| Error::ParseCell {
                path: path.to_path_buf(),
                row: line_no + 1,
                column: j + 1,
                name: COLUMN_NAMES[j].to_string(),
                value: cell.to_string(),
            })?;
        }
        rows.push(row);
    }

    if rows.len() < MIN_ROWS {
        return Err(Error::TooFewRows {
            rows: rows.len(),
            min: MIN_ROWS,
        });
    }

    let n = rows.len();
    let features = Array2::from_shape_fn((n, N_FEATURES), |(i, j)| rows[i][j]);
    let target = rows.iter().map(|r| r[10]).collect();
    Ok(RawDataset {
        feature_names: COLUMN_NAMES[..N_FEATURES].iter().map(|s| s.to_string()).collect(),
        features,
        target,
    })
}

/// Standardize every column (features and target) to zero mean, unit
/// population standard deviation.
///
/// With `stats` absent, the statistics are computed from `data`; with
/// `stats` given (the test-set path), they are applied as-is.
pub fn standardize(
    data: &RawDataset,
    stats: Option<&StandardizationStats>,
) -> Result<(RawDataset, StandardizationStats)> {
    let stats = match stats {
        Some(s) => s.clone(),
        None => compute_stats(data)?,
    };

    let n = data.n_samples();
    let features = Array2::from_shape_fn((n, N_FEATURES), |(i, j)| {
        (data.features[[i, j]] - stats.mean[j]) / stats.std[j]
    });
    let target = data
        .target
        .iter()
        .map(|&y| (y - stats.mean[10]) / stats.std[10])
        .collect();

    Ok((
        RawDataset {
            feature_names: data.feature_names.clone(),
            features,
            target,
        },
        stats,
    ))
}

fn compute_stats(data: &RawDataset) -> Result<StandardizationStats> {
    let n = data.n_samples() as f64;
    let mut mean = Vec::with_capacity(11);
    let mut std = Vec::with_capacity(11);
    for j in 0..=N_FEATURES {
        let col: Vec<f64> = if j < N_FEATURES {
            data.features.column(j).to_vec()
        } else {
            data.target.clone()
        };
        let m = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
        let s = var.sqrt();
        if s == 0.0 {
            return Err(Error::ZeroVariance {
                column: j + 1,
                name: COLUMN_NAMES[j].to_string(),
            });
        }
        mean.push(m);
        std.push(s);
    }
    Ok(StandardizationStats { mean, std })
}

/// 3:1 train/test split plus 5 round-robin cross-validation folds,
/// fully determined by `seed`.
pub fn make_split(n: usize, seed: u64) -> SplitSpec {
    make_split_with_ratio(n, seed, 3, 1)
}

/// Generalized split: |train| = ceil(n * num / (num + den)).
pub fn make_split_with_ratio(n: usize, seed: u64, num: usize, den: usize) -> SplitSpec {
    assert!(n >= MIN_ROWS, "split requires at least {MIN_ROWS} samples");
    assert!(num > 0 && den > 0, "split ratio parts must be positive");

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);

    let n_train = (n * num).div_ceil(num + den);
    let train_indices = perm[..n_train].to_vec();
    let test_indices = perm[n_train..].to_vec();

    let mut folds = vec![Vec::new(); 5];
    for (pos, &idx) in train_indices.iter().enumerate() {
        folds[pos % 5].push(idx);
    }

    SplitSpec {
        seed,
        train_indices,
        test_indices,
        folds,
    }
}
