//! Spiking Heidelberg Digits / Spiking Speech Commands event files.
//!
//! Expected layout: `spikes/times` (ragged float arrays, seconds),
//! `spikes/units` (ragged integer arrays, channel ids) and `labels`.

use std::path::Path;

use hdf5::types::{FloatSize, IntSize, TypeDescriptor, VarLenArray};
use hdf5::Dataset;

use super::{bin_events, SpikeDataset};
use crate::error::{Result, SnnError};
use crate::snn::SimGrid;

pub const SHD_CHANNELS: usize = 700;

/// Unbinned events of one file.
#[derive(Clone, Debug, PartialEq)]
pub struct RawEvents {
    pub times: Vec<Vec<f64>>,
    pub units: Vec<Vec<u32>>,
    pub labels: Vec<u32>,
}

impl RawEvents {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = hdf5::File::open(path)?;
        let open = |name: &str| {
            file.dataset(name).map_err(|e| SnnError::Format {
                path: path.to_path_buf(),
                reason: format!("missing dataset {name}: {e}"),
            })
        };
        let times = read_ragged(&open("spikes/times")?, path, |v: f64| Some(v))?;
        let units = read_ragged(&open("spikes/units")?, path, |v: f64| {
            (v >= 0.0 && v <= u32::MAX as f64).then_some(v as u32)
        })?;
        let labels = read_flat(&open("labels")?, path)?
            .into_iter()
            .map(|v| (v >= 0.0 && v <= u32::MAX as f64).then_some(v as u32))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| SnnError::Format {
                path: path.to_path_buf(),
                reason: "negative label".into(),
            })?;
        if times.len() != units.len() || times.len() != labels.len() {
            return Err(SnnError::Format {
                path: path.to_path_buf(),
                reason: format!(
                    "sample counts disagree: {} times, {} units, {} labels",
                    times.len(),
                    units.len(),
                    labels.len()
                ),
            });
        }
        for (i, (t, u)) in times.iter().zip(&units).enumerate() {
            if t.len() != u.len() {
                return Err(SnnError::Format {
                    path: path.to_path_buf(),
                    reason: format!("sample {i}: {} times but {} units", t.len(), u.len()),
                });
            }
        }
        Ok(Self {
            times,
            units,
            labels,
        })
    }

    pub fn event_count(&self) -> usize {
        self.times.iter().map(Vec::len).sum()
    }

    /// Bins every sample onto `grid` with `channels` input channels,
    /// checking labels against `classes`.
    pub fn bin(&self, grid: SimGrid, channels: usize, classes: usize) -> Result<SpikeDataset> {
        let mut ds = SpikeDataset::empty(grid, channels, false);
        for (i, ((times, units), &label)) in self.times.iter().zip(&self.units).zip(&self.labels).enumerate() {
            if label as usize >= classes {
                return Err(SnnError::Event {
                    index: i,
                    reason: format!("label {label} outside {classes} classes"),
                });
            }
            let binned = bin_events(times, units, &grid, channels).map_err(|e| SnnError::Event {
                index: i,
                reason: e.to_string(),
            })?;
            ds.push(&binned, label, None)?;
        }
        Ok(ds)
    }
}

fn unsupported(path: &Path, what: &TypeDescriptor) -> SnnError {
    SnnError::Format {
        path: path.to_path_buf(),
        reason: format!("unsupported element type {what:?}"),
    }
}

macro_rules! ragged_as {
    ($ds:expr, $t:ty) => {{
        let raw: Vec<VarLenArray<$t>> = $ds.read_raw()?;
        raw.iter()
            .map(|row| row.iter().map(|&v| v as f64).collect::<Vec<f64>>())
            .collect::<Vec<_>>()
    }};
}

macro_rules! flat_as {
    ($ds:expr, $t:ty) => {{
        let raw: Vec<$t> = $ds.read_raw()?;
        raw.into_iter().map(|v| v as f64).collect::<Vec<f64>>()
    }};
}

/// Reads a ragged numeric dataset of any int/float element type, mapping
/// each value through `convert`.
fn read_ragged<T>(ds: &Dataset, path: &Path, convert: impl Fn(f64) -> Option<T>) -> Result<Vec<Vec<T>>> {
    let descriptor = ds.dtype()?.to_descriptor()?;
    let base = match &descriptor {
        TypeDescriptor::VarLenArray(base) => base.as_ref(),
        other => return Err(unsupported(path, other)),
    };
    let rows: Vec<Vec<f64>> = match base {
        TypeDescriptor::Float(FloatSize::U4) => ragged_as!(ds, f32),
        TypeDescriptor::Float(FloatSize::U8) => ragged_as!(ds, f64),
        TypeDescriptor::Unsigned(IntSize::U1) => ragged_as!(ds, u8),
        TypeDescriptor::Unsigned(IntSize::U2) => ragged_as!(ds, u16),
        TypeDescriptor::Unsigned(IntSize::U4) => ragged_as!(ds, u32),
        TypeDescriptor::Unsigned(IntSize::U8) => ragged_as!(ds, u64),
        TypeDescriptor::Integer(IntSize::U1) => ragged_as!(ds, i8),
        TypeDescriptor::Integer(IntSize::U2) => ragged_as!(ds, i16),
        TypeDescriptor::Integer(IntSize::U4) => ragged_as!(ds, i32),
        TypeDescriptor::Integer(IntSize::U8) => ragged_as!(ds, i64),
        other => return Err(unsupported(path, other)),
    };
    rows.into_iter()
        .enumerate()
        .map(|(i, row)| {
            row.into_iter()
                .map(&convert)
                .collect::<Option<Vec<T>>>()
                .ok_or_else(|| SnnError::Event {
                    index: i,
                    reason: "value out of range".into(),
                })
        })
        .collect()
}

fn read_flat(ds: &Dataset, path: &Path) -> Result<Vec<f64>> {
    Ok(match ds.dtype()?.to_descriptor()? {
        TypeDescriptor::Unsigned(IntSize::U1) => flat_as!(ds, u8),
        TypeDescriptor::Unsigned(IntSize::U2) => flat_as!(ds, u16),
        TypeDescriptor::Unsigned(IntSize::U4) => flat_as!(ds, u32),
        TypeDescriptor::Unsigned(IntSize::U8) => flat_as!(ds, u64),
        TypeDescriptor::Integer(IntSize::U1) => flat_as!(ds, i8),
        TypeDescriptor::Integer(IntSize::U2) => flat_as!(ds, i16),
        TypeDescriptor::Integer(IntSize::U4) => flat_as!(ds, i32),
        TypeDescriptor::Integer(IntSize::U8) => flat_as!(ds, i64),
        other => return Err(unsupported(path, &other)),
    })
}

/// Loads one SHD/SSC file onto `grid` (700 channels).
pub fn load_shd_file(path: impl AsRef<Path>, grid: SimGrid, classes: usize) -> Result<SpikeDataset> {
    RawEvents::read(path)?.bin(grid, SHD_CHANNELS, classes)
}

/// The published train and test partitions.
#[derive(Clone, Debug)]
pub struct ShdSplits {
    pub train: SpikeDataset,
    pub test: SpikeDataset,
}

pub fn load_shd(
    train_path: impl AsRef<Path>,
    test_path: impl AsRef<Path>,
    grid: SimGrid,
    classes: usize,
) -> Result<ShdSplits> {
    Ok(ShdSplits {
        train: load_shd_file(train_path, grid, classes)?,
        test: load_shd_file(test_path, grid, classes)?,
    })
}
