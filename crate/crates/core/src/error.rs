//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("{path}: row {row}, column {column} ({name}): cannot parse {value:?} as a number")]
    ParseCell {
        path: PathBuf,
        /// 1-based data row (header excluded).
        row: usize,
        /// 1-based column.
        column: usize,
        name: String,
        value: String,
    },

    #[error("dataset has {rows} rows; at least {min} are required")]
    TooFewRows { rows: usize, min: usize },

    #[error("column {column} ({name}) has zero variance; cannot standardize")]
    ZeroVariance { column: usize, name: String },

    #[error("column {column} ({name}) is constant; cannot fit quartile bins")]
    ConstantColumn { column: usize, name: String },

    #[error("column {column} ({name}) has {distinct} distinct values; a binary column needs exactly 2")]
    NotBinary {
        column: usize,
        name: String,
        distinct: usize,
    },

    #[error("value {value} in column {column} ({name}) does not match either fitted binary level")]
    UnseenBinaryValue {
        column: usize,
        name: String,
        value: f64,
    },

    #[error("field index {field} out of range (dataset has {n_fields} fields)")]
    InvalidField { field: usize, n_fields: usize },

    #[error("training diverged at epoch {epoch}, sample {sample}: non-finite update")]
    Diverged { epoch: usize, sample: usize },

    #[error("dimension mismatch: {msg}")]
    Dimension { msg: String },

    #[error("quadratic coupling between group blocks at variables ({i}, {j}); the problem is not block-diagonal")]
    CrossBlockCoupling { i: usize, j: usize },

    #[error("exhaustive enumeration supports at most {max} variables, got {n_vars}")]
    TooManyVariables { n_vars: usize, max: usize },

    #[error("R^2 is undefined: {msg}")]
    UndefinedR2 { msg: String },

    #[error("invalid configuration: {msg}")]
    Config { msg: String },

    #[error("missing upstream artifact {path}: run `{produced_by}` first")]
    MissingArtifact { path: PathBuf, produced_by: String },

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
