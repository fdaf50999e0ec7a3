//! Binary model checkpoints.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "URBC" | version | descriptor len | descriptor (UTF-8)
//!        | tensor count
//!        | per tensor: name len | name | ndims | dims... | f64 LE payload
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::models::{ModelSpec, ParameterSet};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"URBC";
pub const VERSION: u32 = 1;

const MAX_DIMS: usize = 8;

pub fn encode(params: &ParameterSet, spec: &ModelSpec) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + 8 * params.total_len());
    out.extend_from_slice(MAGIC);
    out.extend(VERSION.to_le_bytes());
    put_str(&mut out, &spec.descriptor());
    out.extend((params.len() as u32).to_le_bytes());
    for (name, tensor) in params.iter() {
        put_str(&mut out, name);
        out.extend((tensor.shape().len() as u32).to_le_bytes());
        for &d in tensor.shape() {
            out.extend((d as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend(v.to_le_bytes());
        }
    }
    out
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend((s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self) -> Result<&'a str> {
        let len = self.u32()? as usize;
        std::str::from_utf8(self.take(len)?).map_err(|_| Error::Format("checkpoint string is not UTF-8".into()))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

/// Parses a checkpoint, validating magic and version before anything else
/// and checking the parameters against the embedded model spec.
pub fn decode(bytes: &[u8]) -> Result<(ParameterSet, ModelSpec)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).ok() != Some(MAGIC.as_slice()) {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let spec = ModelSpec::parse_descriptor(r.string()?)?;
    let count = r.u32()? as usize;
    let mut entries = Vec::new();
    for _ in 0..count {
        let name = r.string()?.to_owned();
        let ndims = r.u32()? as usize;
        if ndims == 0 || ndims > MAX_DIMS {
            return Err(Error::Format(format!("tensor {name} has {ndims} dimensions")));
        }
        let dims = (0..ndims).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let len = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= r.remaining()))
            .ok_or_else(|| Error::Format(format!("tensor {name} payload {dims:?} exceeds file")))?;
        let payload = r.take(len * 8)?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let tensor = Tensor::new(dims, data).map_err(|e| Error::Format(e.to_string()))?;
        entries.push((name, tensor));
    }
    if r.remaining() != 0 {
        return Err(Error::Format(format!("{} trailing bytes after checkpoint", r.remaining())));
    }
    let params = ParameterSet::new(entries).map_err(|e| Error::Format(e.to_string()))?;
    params
        .check_against(&spec)
        .map_err(|e| Error::Format(e.to_string()))?;
    Ok((params, spec))
}

pub fn save_checkpoint(params: &ParameterSet, spec: &ModelSpec, path: &Path) -> Result<()> {
    fs::write(path, encode(params, spec))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ParameterSet, ModelSpec)> {
    decode(&fs::read(path)?)
}
