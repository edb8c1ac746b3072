//! Robustness regularization for piecewise-linear classifiers.

pub mod analytic;
pub mod attack;
pub mod certify;
pub mod cli;
pub mod data;
pub mod error;
pub mod linalg;
pub mod network;
pub mod oracle;
pub mod plot;
pub mod regularize;
pub mod table;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
