use serde::{Deserialize, Serialize};

use crate::error::{Result, SnnError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencyOptions {
    pub steps: usize,
    /// Emit no spike for a value of exactly zero.
    pub suppress_zero: bool,
}

impl Default for LatencyOptions {
    fn default() -> Self {
        Self {
            steps: 50,
            suppress_zero: false,
        }
    }
}

/// One spike per channel at step `round((1 - v) * (steps - 1))`: brighter
/// values fire earlier. Returns row-major `steps × values.len()`.
pub fn latency_encode(values: &[f64], options: LatencyOptions) -> Result<Vec<u8>> {
    if options.steps == 0 {
        return Err(SnnError::InvalidParameter("latency code needs at least one step".into()));
    }
    let channels = values.len();
    let mut out = vec![0u8; options.steps * channels];
    for (c, &v) in values.iter().enumerate() {
        if !(0.0..=1.0).contains(&v) {
            return Err(SnnError::InvalidParameter(format!(
                "latency value {v} at channel {c} outside [0, 1]"
            )));
        }
        if v == 0.0 && options.suppress_zero {
            continue;
        }
        let t = ((1.0 - v) * (options.steps - 1) as f64).round() as usize;
        out[t * channels + c] = 1;
    }
    Ok(out)
}
