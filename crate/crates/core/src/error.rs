use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the simulator, the gradient engine, the trainers and the
/// dataset loaders.
#[derive(Debug, Error)]
pub enum SnnError {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("time constant {tau} s is below the stability floor {floor} s")]
    TauBelowFloor { tau: f64, floor: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value in layer {layer} at step {step}: {what}")]
    NonFinite {
        layer: usize,
        step: usize,
        what: &'static str,
    },

    #[error("training diverged at epoch {epoch}, batch {batch} (loss = {loss})")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    #[error("degenerate schedule: {0}")]
    DegenerateSchedule(String),

    #[error("bad file format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("event {index}: {reason}")]
    Event { index: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[cfg(feature = "hdf5")]
    #[error(transparent)]
    Hdf5(#[from] hdf5::Error),
}

pub type Result<T, E = SnnError> = std::result::Result<T, E>;

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(SnnError::Shape {
            context,
            expected,
            actual,
        })
    }
}
