//! Field-aware factorization machine: prediction, SGD training, and
//! grid-search cross-validation for the learning-rate schedule.
//!
//! The model predicts `y = w0 + sum_l w_l x_l + sum_{l1<l2} w_{l1,l2} x_l1 x_l2`
//! where each pairwise weight is the inner product of field-aware latent
//! vectors: `w_{l1,l2} = <v[l1, field(l2)], v[l2, field(l1)]>`.

use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::encoding::EncodedDataset;
use crate::error::{Error, Result};
use crate::eval::r_squared;
use crate::seeds;

/// Latent dimension K of the reference pipeline.
pub const DEFAULT_LATENT_DIM: usize = 4;

/// Epoch budget of the reference pipeline.
pub const DEFAULT_EPOCHS: usize = 300;

/// Default standard deviation of the latent initialization draws.
pub const LATENT_INIT_STD: f64 = 0.01;

/// Model parameters: bias, linear weights, and the latent tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct FfmParams {
    pub w0: f64,
    /// One weight per one-hot feature.
    pub w: Vec<f64>,
    /// D x F x K: latent vector of feature `l` toward field `f`.
    pub v: Array3<f64>,
}

impl FfmParams {
    pub fn zeros(n_features: usize, n_fields: usize, latent_dim: usize) -> FfmParams {
        FfmParams {
            w0: 0.0,
            w: vec![0.0; n_features],
            v: Array3::zeros((n_features, n_fields, latent_dim)),
        }
    }

    pub fn n_features(&self) -> usize {
        self.v.shape()[0]
    }

    pub fn n_fields(&self) -> usize {
        self.v.shape()[1]
    }

    pub fn latent_dim(&self) -> usize {
        self.v.shape()[2]
    }

    /// Total parameter count (1 + D + D*F*K).
    pub fn n_parameters(&self) -> usize {
        1 + self.w.len() + self.v.len()
    }

    /// Pairwise cross weight `<v[l1, field(l2)], v[l2, field(l1)]>`.
    ///
    /// Symmetric in `(l1, l2)`. Panics if `l1 == l2`: a feature has no
    /// cross term with itself.
    pub fn cross_weight(&self, field_of: &[usize], l1: usize, l2: usize) -> f64 {
        assert_ne!(l1, l2, "cross_weight requires two distinct features");
        let f1 = field_of[l2];
        let f2 = field_of[l1];
        (0..self.latent_dim())
            .map(|m| self.v[[l1, f1, m]] * self.v[[l2, f2, m]])
            .sum()
    }

    /// Second-order prediction for a binary row.
    pub fn predict(&self, x_row: &[u8], field_of: &[usize]) -> f64 {
        let active = active_indices(x_row);
        self.predict_active(&active, field_of)
    }

    fn predict_active(&self, active: &[usize], field_of: &[usize]) -> f64 {
        let mut y = self.w0;
        for &l in active {
            y += self.w[l];
        }
        for (a, &l1) in active.iter().enumerate() {
            for &l2 in &active[a + 1..] {
                y += self.cross_weight(field_of, l1, l2);
            }
        }
        y
    }

    /// One stochastic gradient step on the squared residual of a sample.
    ///
    /// All latent updates use pre-step values. Returns an error when the
    /// prediction (and hence the update) is no longer finite.
    pub fn sgd_step(&mut self, x_row: &[u8], field_of: &[usize], y: f64, eta: f64) -> Result<()> {
        let active = active_indices(x_row);
        self.step_active(&active, field_of, y, eta)
    }

    fn step_active(&mut self, active: &[usize], field_of: &[usize], y: f64, eta: f64) -> Result<()> {
        let err = y - self.predict_active(active, field_of);
        if !err.is_finite() {
            return Err(Error::Diverged {
                epoch: 0,
                sample: 0,
            });
        }
        let g = 2.0 * eta * err;
        self.w0 += g;
        for &l in active {
            self.w[l] += g;
        }
        let k = self.latent_dim();
        for (a, &l1) in active.iter().enumerate() {
            for &l2 in &active[a + 1..] {
                let f1 = field_of[l2];
                let f2 = field_of[l1];
                for m in 0..k {
                    let v1 = self.v[[l1, f1, m]];
                    let v2 = self.v[[l2, f2, m]];
                    self.v[[l1, f1, m]] = v1 + g * v2;
                    self.v[[l2, f2, m]] = v2 + g * v1;
                }
            }
        }
        Ok(())
    }

    fn all_finite(&self) -> bool {
        self.w0.is_finite()
            && self.w.iter().all(|v| v.is_finite())
            && self.v.iter().all(|v| v.is_finite())
    }
}

fn active_indices(x_row: &[u8]) -> Vec<usize> {
    x_row
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0)
        .map(|(l, _)| l)
        .collect()
}

/// Exponentially decaying SGD learning rate: `eta(epoch) = a1 * exp(-a2 * epoch)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LrSchedule {
    pub a1: f64,
    pub a2: f64,
    pub total_epochs: usize,
}

impl LrSchedule {
    pub fn new(a1: f64, a2: f64, total_epochs: usize) -> LrSchedule {
        LrSchedule {
            a1,
            a2,
            total_epochs,
        }
    }

    pub fn eta(&self, epoch: usize) -> f64 {
        self.a1 * (-self.a2 * epoch as f64).exp()
    }
}

/// Candidate values for the (a1, a2) grid search.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CvGrid {
    pub a1_candidates: Vec<f64>,
    pub a2_candidates: Vec<f64>,
}

impl Default for CvGrid {
    /// Half-decade log grid 1e-4 .. 1e-1.
    fn default() -> CvGrid {
        let mut values = Vec::new();
        for exp in [-4i32, -3, -2] {
            let base = 10f64.powi(exp);
            values.push(base);
            values.push(base * 10f64.sqrt());
        }
        values.push(0.1);
        CvGrid {
            a1_candidates: values.clone(),
            a2_candidates: values,
        }
    }
}

/// Train an FFM with per-sample SGD.
///
/// Weights start at zero and latent entries are drawn i.i.d. from a
/// centered normal using a generator seeded with `seed`; the same
/// generator reshuffles the sample order every epoch, so the result is a
/// pure function of the inputs and the seed.
pub fn train(
    encoded: &EncodedDataset,
    y: &[f64],
    schedule: &LrSchedule,
    latent_dim: usize,
    init_std: f64,
    seed: u64,
) -> Result<FfmParams> {
    assert_eq!(encoded.n_samples(), y.len(), "rows of x and y must align");
    assert!(init_std > 0.0, "init_std must be positive");

    let d = encoded.n_features();
    let f = encoded.n_fields;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, init_std).expect("valid std");

    let mut params = FfmParams::zeros(d, f, latent_dim);
    for l in 0..d {
        for fld in 0..f {
            for m in 0..latent_dim {
                params.v[[l, fld, m]] = normal.sample(&mut rng);
            }
        }
    }

    let n = encoded.n_samples();
    let active: Vec<Vec<usize>> = (0..n)
        .map(|i| active_indices(encoded.x.row(i).as_slice().expect("contiguous row")))
        .collect();
    let field_of = &encoded.field_of;

    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..schedule.total_epochs {
        let eta = schedule.eta(epoch);
        order.shuffle(&mut rng);
        for &i in &order {
            params
                .step_active(&active[i], field_of, y[i], eta)
                .map_err(|_| Error::Diverged { epoch, sample: i })?;
        }
    }

    if !params.all_finite() {
        return Err(Error::Diverged {
            epoch: schedule.total_epochs.saturating_sub(1),
            sample: 0,
        });
    }
    Ok(params)
}

/// Pick the (a1, a2) pair with the best 5-fold mean validation R^2.
///
/// Candidate lists are sorted ascending, so score ties resolve to the
/// smaller a1 and then the smaller a2. A grid cell whose training
/// diverges on any fold never wins.
pub fn grid_search_cv(
    encoded: &EncodedDataset,
    y: &[f64],
    folds: &[Vec<usize>],
    grid: &CvGrid,
    epochs: usize,
    latent_dim: usize,
    init_std: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    assert!(!folds.is_empty(), "grid search requires at least one fold");
    let mut a1s = grid.a1_candidates.clone();
    let mut a2s = grid.a2_candidates.clone();
    a1s.sort_by(f64::total_cmp);
    a2s.sort_by(f64::total_cmp);

    let mut cells = Vec::with_capacity(a1s.len() * a2s.len());
    for &a1 in &a1s {
        for &a2 in &a2s {
            cells.push((a1, a2));
        }
    }

    let tasks: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|cell| (0..folds.len()).map(move |k| (cell, k)))
        .collect();

    let fold_scores: Vec<(usize, f64)> = tasks
        .par_iter()
        .map(|&(cell, k)| {
            let (a1, a2) = cells[cell];
            let score = cv_fold_score(
                encoded,
                y,
                folds,
                k,
                &LrSchedule::new(a1, a2, epochs),
                latent_dim,
                init_std,
                seeds::derive2(seed, cell as u64, k as u64),
            );
            (cell, score)
        })
        .collect();

    let mut cell_scores = vec![0.0f64; cells.len()];
    for &(cell, score) in &fold_scores {
        cell_scores[cell] += score / folds.len() as f64;
    }

    let mut best: Option<(f64, usize)> = None;
    for (cell, &score) in cell_scores.iter().enumerate() {
        if score.is_finite() && best.is_none_or(|(s, _)| score > s) {
            best = Some((score, cell));
        }
    }
    best.map(|(_, cell)| cells[cell]).ok_or_else(|| Error::Config {
        msg: "every grid cell diverged during cross-validation".to_string(),
    })
}

fn cv_fold_score(
    encoded: &EncodedDataset,
    y: &[f64],
    folds: &[Vec<usize>],
    held_out: usize,
    schedule: &LrSchedule,
    latent_dim: usize,
    init_std: f64,
    seed: u64,
) -> f64 {
    let mut train_rows: Vec<usize> = folds
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != held_out)
        .flat_map(|(_, fold)| fold.iter().copied())
        .collect();
    train_rows.sort_unstable();

    let sub = encoded.subset(&train_rows);
    let sub_y: Vec<f64> = train_rows.iter().map(|&i| y[i]).collect();
    let params = match train(&sub, &sub_y, schedule, latent_dim, init_std, seed) {
        Ok(p) => p,
        Err(_) => return f64::NEG_INFINITY,
    };

    let val_rows = &folds[held_out];
    let y_true: Vec<f64> = val_rows.iter().map(|&i| y[i]).collect();
    let y_pred: Vec<f64> = val_rows
        .iter()
        .map(|&i| {
            params.predict(
                encoded.x.row(i).as_slice().expect("contiguous row"),
                &encoded.field_of,
            )
        })
        .collect();
    r_squared(&y_true, &y_pred).unwrap_or(f64::NEG_INFINITY)
}
