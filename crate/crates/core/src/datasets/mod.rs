//! Spike datasets: synthetic MTS-XOR, SHD/SSC event files, a dense cache
//! format, channel-shift augmentation and latency coding.

mod augment;
mod cache;
mod events;
mod latency;
mod mtsxor;
#[cfg(feature = "hdf5")]
mod shd;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result, SnnError};
use crate::snn::SimGrid;
use crate::training::loss::Target;

pub use augment::{augment_freq_shift, draw_shift, shift_channels};
pub use cache::{read_cache, write_cache, CACHE_MAGIC, CACHE_VERSION};
pub use events::bin_events;
pub use latency::{latency_encode, LatencyOptions};
pub use mtsxor::{mtsxor_generate, mtsxor_generate_with_cues, MtsXorConfig, MtsXorCues};
#[cfg(feature = "hdf5")]
pub use shd::{load_shd, load_shd_file, RawEvents, ShdSplits, SHD_CHANNELS};

/// Labelled span `[start, end)` of steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Window {
    pub start: usize,
    pub end: usize,
    pub label: u32,
}

/// Binned spike counts for a set of samples sharing one grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SpikeDataset {
    pub grid: SimGrid,
    pub channels: usize,
    /// Row-major `samples × steps × channels` spike counts.
    pub data: Vec<u8>,
    /// One class per sample. For windowed datasets this is an auxiliary
    /// per-sample label (the stored cue for MTS-XOR).
    pub labels: Vec<u32>,
    /// Per-sample labelled windows, when the task is scored per window.
    pub windows: Option<Vec<Vec<Window>>>,
}

impl SpikeDataset {
    pub fn new(
        grid: SimGrid,
        channels: usize,
        data: Vec<u8>,
        labels: Vec<u32>,
        windows: Option<Vec<Vec<Window>>>,
    ) -> Result<Self> {
        let ds = Self {
            grid,
            channels,
            data,
            labels,
            windows,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn empty(grid: SimGrid, channels: usize, windowed: bool) -> Self {
        Self {
            grid,
            channels,
            data: Vec::new(),
            labels: Vec::new(),
            windows: windowed.then(Vec::new),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let n = self.labels.len();
        check_len("dataset payload", n * self.sample_len(), self.data.len())?;
        if let Some(windows) = &self.windows {
            check_len("dataset windows", n, windows.len())?;
            for w in windows.iter().flatten() {
                if w.start >= w.end || w.end > self.grid.steps {
                    return Err(SnnError::InvalidParameter(format!(
                        "window [{}, {}) outside [0, {})",
                        w.start, w.end, self.grid.steps
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_len(&self) -> usize {
        self.grid.steps * self.channels
    }

    pub fn sample(&self, i: usize) -> &[u8] {
        let len = self.sample_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn is_windowed(&self) -> bool {
        self.windows.is_some()
    }

    pub fn target(&self, i: usize) -> Target<'_> {
        match &self.windows {
            Some(w) => Target::Windows(&w[i]),
            None => Target::Class(self.labels[i]),
        }
    }

    /// Largest label present plus one (over windows for windowed data).
    pub fn num_classes(&self) -> usize {
        let max = match &self.windows {
            Some(w) => w.iter().flatten().map(|w| w.label).max(),
            None => self.labels.iter().copied().max(),
        };
        max.map_or(0, |m| m as usize + 1)
    }

    pub fn total_spikes(&self) -> u64 {
        self.data.iter().map(|&v| v as u64).sum()
    }

    pub fn push(&mut self, sample: &[u8], label: u32, windows: Option<Vec<Window>>) -> Result<()> {
        check_len("dataset sample", self.sample_len(), sample.len())?;
        match (&mut self.windows, windows) {
            (Some(all), Some(w)) => all.push(w),
            (None, None) => {}
            _ => {
                return Err(SnnError::InvalidParameter(
                    "sample label mode does not match the dataset".into(),
                ))
            }
        }
        self.data.extend_from_slice(sample);
        self.labels.push(label);
        Ok(())
    }

    pub fn subset(&self, indices: &[usize]) -> SpikeDataset {
        let mut out = SpikeDataset::empty(self.grid, self.channels, self.is_windowed());
        out.data.reserve(indices.len() * self.sample_len());
        for &i in indices {
            out.data.extend_from_slice(self.sample(i));
            out.labels.push(self.labels[i]);
            if let (Some(dst), Some(src)) = (&mut out.windows, &self.windows) {
                dst.push(src[i].clone());
            }
        }
        out
    }

    /// Deterministic shuffled split into `(train, valid)` with
    /// `valid_fraction` of the samples held out.
    pub fn split(&self, valid_fraction: f64, seed: u64) -> Result<(SpikeDataset, SpikeDataset)> {
        if !(0.0..1.0).contains(&valid_fraction) {
            return Err(SnnError::InvalidParameter(format!(
                "validation fraction must be in [0, 1), got {valid_fraction}"
            )));
        }
        let mut indices: Vec<usize> = (0..self.len()).collect();
        indices.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_valid = (self.len() as f64 * valid_fraction).round() as usize;
        let (valid, train) = indices.split_at(n_valid);
        Ok((self.subset(train), self.subset(valid)))
    }
}
