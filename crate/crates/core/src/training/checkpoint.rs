//! Binary checkpoints.
//!
//! ```text
//! "TSNN" | u32 version | u32 spec_len | spec as JSON (spec_len bytes)
//!        | u64 n_params | n_params × f64 (per layer: weights, then tau)
//!        | u8 has_optimizer | [u64 step | n_params × f64 m | n_params × f64 v]
//!        | u32 CRC-32 of every preceding byte
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::optimizer::AdamState;
use crate::error::{Result, SnnError};
use crate::snn::{NetworkParams, NetworkSpec};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TSNN";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub params: NetworkParams,
    pub optimizer: Option<AdamState>,
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.params.validate(&self.spec)?;
        let n = self.params.param_count();
        let spec = serde_json::to_vec(&self.spec)?;
        let mut out = Vec::with_capacity(64 + spec.len() + 24 * n);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(spec.len() as u32).to_le_bytes());
        out.extend_from_slice(&spec);
        out.extend_from_slice(&(n as u64).to_le_bytes());
        for layer in self.params.layers() {
            put_f64s(&mut out, &layer.weights);
            put_f64s(&mut out, &layer.tau);
        }
        match &self.optimizer {
            None => out.push(0),
            Some(state) => {
                if state.m.len() != n || state.v.len() != n {
                    return Err(SnnError::Shape {
                        context: "optimizer state",
                        expected: n,
                        actual: state.m.len().min(state.v.len()),
                    });
                }
                out.push(1);
                out.extend_from_slice(&state.step.to_le_bytes());
                put_f64s(&mut out, &state.m);
                put_f64s(&mut out, &state.v);
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let err = |reason: String| SnnError::Format {
            path: path.to_path_buf(),
            reason,
        };
        if bytes.len() < 4 + 4 + 4 + 4 {
            return Err(err("truncated header".into()));
        }
        if &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(err("bad magic".into()));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(SnnError::Checksum { stored, computed });
        }

        let mut pos = 4;
        let mut take = |n: usize| -> Result<&[u8]> {
            if body.len() - pos < n {
                return Err(err("truncated body".into()));
            }
            pos += n;
            Ok(&body[pos - n..pos])
        };
        let version = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(err(format!("unsupported version {version}")));
        }
        let spec_len = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        let spec: NetworkSpec = serde_json::from_slice(take(spec_len)?)?;
        spec.validate()?;
        let n = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;

        let mut params = NetworkParams::zeros(&spec, 1.0);
        if params.param_count() != n {
            return Err(err(format!(
                "spec implies {} parameters, file holds {n}",
                params.param_count()
            )));
        }
        let mut read_f64s = |dst: &mut [f64]| -> Result<()> {
            let raw = take(8 * dst.len())?;
            for (d, chunk) in dst.iter_mut().zip(raw.chunks_exact(8)) {
                *d = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
            }
            Ok(())
        };
        for layer in params.layers_mut() {
            read_f64s(&mut layer.weights)?;
            read_f64s(&mut layer.tau)?;
        }
        let optimizer = match take(1)?[0] {
            0 => None,
            1 => {
                let step = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
                let mut m = vec![0.0; n];
                let mut v = vec![0.0; n];
                let mut read = |dst: &mut [f64]| -> Result<()> {
                    let raw = take(8 * dst.len())?;
                    for (d, chunk) in dst.iter_mut().zip(raw.chunks_exact(8)) {
                        *d = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
                    }
                    Ok(())
                };
                read(&mut m)?;
                read(&mut v)?;
                Some(AdamState { step, m, v })
            }
            flag => return Err(err(format!("bad optimizer flag {flag}"))),
        };
        if pos != body.len() {
            return Err(err(format!("{} trailing bytes", body.len() - pos)));
        }
        params.validate(&spec)?;
        Ok(Self {
            spec,
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut file = fs::File::create(path)?;
        file.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path)?, path)
    }
}
