//! Detection of false data injection attacks on AC power grids with a
//! Chebyshev graph convolutional network trained from scratch.
//!
//! The pipeline: parse a grid case ([`ingest`]), build the admittance matrix
//! and weighted topology graph ([`grid`]), solve AC power flow to synthesize
//! measurement scenarios ([`powerflow`], [`dataset`]), derive the scaled graph
//! Laplacian and Chebyshev filters ([`spectral`]), train a graph-convolutional
//! binary classifier ([`nn`]), and report detection metrics and inference
//! latency ([`eval`]).

pub mod dataset;
pub mod eval;
pub mod grid;
pub mod ingest;
pub mod nn;
pub mod powerflow;
pub mod sparse;
pub mod spectral;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Error, Debug)]
pub enum FdiaError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid grid: {0}")]
    Validation(String),
    #[error("degenerate branch {from}-{to}: r and x both zero while in service")]
    DegenerateBranch { from: usize, to: usize },
    #[error("graph is disconnected: {count} components, e.g. vertices {example:?} are isolated from vertex 0")]
    Disconnected { count: usize, example: Vec<usize> },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("power flow diverged after {iterations} iterations (max mismatch {max_mismatch:.3e} p.u.)")]
    Divergence {
        iterations: usize,
        max_mismatch: f64,
        trace: Vec<f64>,
    },
    #[error("singular Jacobian at iteration {0}")]
    SingularJacobian(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("scenario generation failed: {0}")]
    Generation(String),
    #[error("invalid data file: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, FdiaError>;
