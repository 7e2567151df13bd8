//! Field-aware factorization machine (FFM) regression on quartile-encoded
//! tabular data, with group-wise L0 feature selection performed by minimizing
//! a penalty-constrained QUBO.
//!
//! The pipeline: load a tabular dataset, standardize it against training-set
//! statistics, convert each quantitative column into quartile categories,
//! train an FFM on the one-hot encoding, freeze the learned weights into a
//! single vector over "expanded features" (first-order terms plus all pairwise
//! cross terms), and then pick, for every group of a focus field, the subset
//! of expanded features that minimizes the training residual under an exact
//! per-group cardinality constraint. The subset selection is a QUBO solved
//! with tabu search (simulated annealing and exhaustive enumeration are
//! provided as baseline and test oracle).

pub mod dataset;
pub mod encoding;
pub mod error;
pub mod eval;
pub mod expansion;
pub mod ffm;
pub mod pipeline;
pub mod qubo;
pub mod seeds;
pub mod solver;

pub use error::{Error, Result};
