use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("matrix is not symmetric (max |A - A^T| = {residual:e})")]
    NotSymmetric { residual: f64 },

    #[error("power iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("operation requires K == 2 classes, network has K = {0}")]
    NotBinary(usize),

    #[error("sample is misclassified (slack {slack:.6} < 0); certificate undefined")]
    Misclassified { slack: f64 },

    #[error("degenerate certificate: {0}")]
    Degenerate(&'static str),

    #[error("regularizer '{kind}' is not available for K = {classes}")]
    UnsupportedRegularizer { kind: &'static str, classes: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("oracle failure: {0}")]
    Oracle(String),

    #[error("IDX parse error: {0}")]
    Idx(String),

    #[error("weight file error: {0}")]
    WeightFile(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
