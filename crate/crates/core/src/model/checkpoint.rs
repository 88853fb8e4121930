//! Binary checkpoint: magic, JSON header with both specs and their
//! fingerprint, then little-endian `f32` encoder and head parameters.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EncoderSpec, HeadSpec, ModelState};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CSSLCKPT";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    encoder_spec: EncoderSpec,
    head_spec: HeadSpec,
    fingerprint: String,
}

pub fn save_checkpoint(state: &ModelState<f32>, path: impl AsRef<Path>) -> Result<()> {
    let header = serde_json::to_vec(&Header {
        version: VERSION,
        encoder_spec: state.encoder_spec.clone(),
        head_spec: state.head_spec,
        fingerprint: state.fingerprint(),
    })?;
    let mut buf = Vec::with_capacity(
        32 + header.len() + 4 * (state.encoder.len() + state.head.len()),
    );
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    for params in [&state.encoder, &state.head] {
        buf.extend_from_slice(&(params.len() as u64).to_le_bytes());
        for v in params.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn params(&mut self) -> Result<Vec<f32>> {
        let n = u64::from_le_bytes(self.take(8)?.try_into().unwrap()) as usize;
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| {
            Error::Format("checkpoint parameter count overflows".into())
        })?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }
}

/// Loads a checkpoint, rejecting it when the stored fingerprint does not
/// match the stored specs.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelState<f32>> {
    let buf = fs::read(path)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let len = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
    let header: Header = serde_json::from_slice(r.take(len)?)?;
    if header.version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {}",
            header.version
        )));
    }
    let encoder = r.params()?;
    let head = r.params()?;
    if r.pos != buf.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    let state = ModelState::from_parts(header.encoder_spec, header.head_spec, encoder, head)?;
    let found = state.fingerprint();
    if found != header.fingerprint {
        return Err(Error::FingerprintMismatch {
            expected: header.fingerprint,
            found,
        });
    }
    Ok(state)
}

/// Loads a checkpoint whose encoder must match `expected`.
pub fn load_checkpoint_expecting(
    path: impl AsRef<Path>,
    expected: &EncoderSpec,
) -> Result<ModelState<f32>> {
    let state = load_checkpoint(path)?;
    if state.encoder_spec() != expected {
        return Err(Error::FingerprintMismatch {
            expected: expected.fingerprint(),
            found: state.encoder_spec().fingerprint(),
        });
    }
    Ok(state)
}
