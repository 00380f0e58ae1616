use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("vector norm {norm:e} is below eps {eps:e}")]
    ZeroNorm { norm: f64, eps: f64 },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("shape mismatch in {what}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        what: &'static str,
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("invalid label {label} for {n_classes} classes")]
    InvalidLabel { label: usize, n_classes: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("{0} requires a hard mask and collaborative margins")]
    ConfigMismatch(&'static str),
    #[error("need at least 2 mis-classified samples, found {found}")]
    InsufficientSamples { found: usize },
    #[error("correlation undefined: {0} series has zero variance")]
    DegenerateVariance(&'static str),
    #[error("{0} partition is empty")]
    EmptyPartition(&'static str),
    #[error("could not place a crowded center with cosine >= {target} in {attempts} attempts")]
    InfeasibleCrowding { target: f64, attempts: usize },
    #[error("forward cache does not match the model")]
    StaleCache,
    #[error("requested {requested} {kind} pairs but only {available} exist")]
    InfeasiblePairCount {
        kind: &'static str,
        requested: usize,
        available: usize,
    },
    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),
    #[error("probe {probe} has label {label} with no gallery mate")]
    MissingMate { probe: usize, label: usize },
    #[error("{pairs} pairs cannot be split into {folds} folds")]
    InsufficientPairs { pairs: usize, folds: usize },
}
