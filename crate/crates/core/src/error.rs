//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes are incompatible for the attempted operation.
    #[error("dimension error in {op}: left shape {left:?}, right shape {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    /// A contract violation inside the compute graph (e.g. non-scalar loss).
    #[error("graph contract violation: {0}")]
    Contract(String),

    /// Invalid configuration value or combination.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed or out-of-contract input data.
    #[error("data error: {0}")]
    Data(String),

    /// Input data is degenerate for the requested computation
    /// (e.g. single-class labels handed to a probe).
    #[error("degenerate data: {0}")]
    DegenerateData(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at step {step}: l_pred={l_pred}, l_dec={l_dec}, l_dis1={l_dis1}, l_dis2={l_dis2}")]
    Diverged {
        step: u64,
        l_pred: f32,
        l_dec: f32,
        l_dis1: f32,
        l_dis2: f32,
    },

    /// Checkpoint file is truncated or structurally invalid.
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    /// Checkpoint was written by an unsupported format version.
    #[error("unsupported checkpoint version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
