//! Dense little-endian cache of a [`SpikeDataset`].
//!
//! ```text
//! "TSNC" | u32 version | u32 n_samples | u32 steps | u32 channels | u8 label_mode
//!        | [u32 windows_per_sample, if label_mode == 1]
//! payload: u8 counts (samples × steps × channels)
//!          | u32 label per sample
//!          | [(u32 start, u32 end, u32 label) per window, sample-major]
//! u32 CRC-32 of the payload
//! ```
//!
//! The time step is not stored; the reader supplies it.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{SpikeDataset, Window};
use crate::error::{Result, SnnError};
use crate::snn::SimGrid;

pub const CACHE_MAGIC: &[u8; 4] = b"TSNC";
pub const CACHE_VERSION: u32 = 1;

fn to_u32(value: usize, what: &str) -> Result<u32> {
    u32::try_from(value)
        .map_err(|_| SnnError::InvalidParameter(format!("{what} {value} does not fit in u32")))
}

pub fn write_cache(dataset: &SpikeDataset, path: impl AsRef<Path>) -> Result<()> {
    dataset.validate()?;
    let per_sample = match &dataset.windows {
        None => None,
        Some(all) => {
            let n = all.first().map_or(0, Vec::len);
            if all.iter().any(|w| w.len() != n) {
                return Err(SnnError::InvalidParameter(
                    "cache format needs the same number of windows in every sample".into(),
                ));
            }
            Some(n)
        }
    };

    let mut header = Vec::with_capacity(25);
    header.extend_from_slice(CACHE_MAGIC);
    header.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    header.extend_from_slice(&to_u32(dataset.len(), "sample count")?.to_le_bytes());
    header.extend_from_slice(&to_u32(dataset.grid.steps, "step count")?.to_le_bytes());
    header.extend_from_slice(&to_u32(dataset.channels, "channel count")?.to_le_bytes());
    header.push(per_sample.is_some() as u8);
    if let Some(n) = per_sample {
        header.extend_from_slice(&to_u32(n, "window count")?.to_le_bytes());
    }

    let mut payload = Vec::with_capacity(dataset.data.len() + 4 * dataset.len());
    payload.extend_from_slice(&dataset.data);
    for &label in &dataset.labels {
        payload.extend_from_slice(&label.to_le_bytes());
    }
    for w in dataset.windows.iter().flatten().flatten() {
        payload.extend_from_slice(&to_u32(w.start, "window start")?.to_le_bytes());
        payload.extend_from_slice(&to_u32(w.end, "window end")?.to_le_bytes());
        payload.extend_from_slice(&w.label.to_le_bytes());
    }
    let crc = crc32fast::hash(&payload);

    let mut file = std::io::BufWriter::new(fs::File::create(path)?);
    file.write_all(&header)?;
    file.write_all(&payload)?;
    file.write_all(&crc.to_le_bytes())?;
    file.flush()?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(SnnError::Format {
                path: self.path.to_path_buf(),
                reason: format!("truncated at byte {}", self.bytes.len()),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Reads a cache written by [`write_cache`], placing it on a grid with time
/// step `dt`.
pub fn read_cache(path: impl AsRef<Path>, dt: f64) -> Result<SpikeDataset> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let format_err = |reason: String| SnnError::Format {
        path: path.to_path_buf(),
        reason,
    };
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if r.take(4)? != CACHE_MAGIC {
        return Err(format_err("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CACHE_VERSION {
        return Err(format_err(format!("unsupported version {version}")));
    }
    let n = r.u32()? as usize;
    let steps = r.u32()? as usize;
    let channels = r.u32()? as usize;
    let per_sample = match r.take(1)?[0] {
        0 => None,
        1 => Some(r.u32()? as usize),
        mode => return Err(format_err(format!("unknown label mode {mode}"))),
    };

    let payload_start = r.pos;
    let counts = n
        .checked_mul(steps)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| format_err("header sizes overflow".into()))?;
    let data = r.take(counts)?.to_vec();
    let labels = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let windows = match per_sample {
        None => None,
        Some(k) => {
            let mut all = Vec::with_capacity(n);
            for _ in 0..n {
                let mut ws = Vec::with_capacity(k);
                for _ in 0..k {
                    ws.push(Window {
                        start: r.u32()? as usize,
                        end: r.u32()? as usize,
                        label: r.u32()?,
                    });
                }
                all.push(ws);
            }
            Some(all)
        }
    };
    let computed = crc32fast::hash(&bytes[payload_start..r.pos]);
    let stored = r.u32()?;
    if stored != computed {
        return Err(SnnError::Checksum { stored, computed });
    }
    if r.pos != bytes.len() {
        return Err(format_err(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    SpikeDataset::new(SimGrid::new(dt, steps)?, channels, data, labels, windows)
}
