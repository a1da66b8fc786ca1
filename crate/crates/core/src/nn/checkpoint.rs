//! `GSLC` checkpoint files.
//!
//! ```text
//! magic  b"GSLC"
//! u32    version (little-endian)
//! repeated until EOF:
//!   u32  path length, then UTF-8 path bytes
//!   u32  rank, then rank × u64 dims
//!   f64 × product(dims), little-endian
//! ```

use std::fs;
use std::path::Path;

use super::{NnError, ParamStore, Tensor};

const MAGIC: &[u8; 4] = b"GSLC";
const VERSION: u32 = 1;

pub fn encode_checkpoint(params: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + params.element_count() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for p in params.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(NnError::Truncated { offset: self.pos })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Decodes records in file order.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<(String, Tensor)>, NnError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).map_err(|_| NnError::BadMagic)? != MAGIC {
        return Err(NnError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(NnError::UnsupportedVersion(version));
    }
    let mut records = Vec::new();
    while r.pos < bytes.len() {
        let start = r.pos;
        let len = r.u32()? as usize;
        let path = std::str::from_utf8(r.take(len)?).map_err(|_| NnError::InvalidPath { offset: start })?.to_owned();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(usize::try_from(r.u64()?).map_err(|_| NnError::Truncated { offset: r.pos })?);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|c| c.checked_mul(8).is_some_and(|b| b <= bytes.len() - r.pos))
            .ok_or(NnError::Truncated { offset: r.pos })?;
        let raw = r.take(count * 8)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        records.push((path, Tensor::new(shape, data)?));
    }
    Ok(records)
}

/// Copies decoded records into `params`, requiring an exact path and shape
/// match with the parameters already declared there.
pub fn restore_params(params: &mut ParamStore, records: Vec<(String, Tensor)>) -> Result<(), NnError> {
    let mut seen = std::collections::BTreeSet::new();
    for (path, tensor) in records {
        let p = params.get_mut(&path).ok_or_else(|| NnError::UnexpectedParam(path.clone()))?;
        if p.value.shape() != tensor.shape() {
            return Err(NnError::DimensionMismatch {
                path,
                expected: p.value.shape().to_vec(),
                found: tensor.shape().to_vec(),
            });
        }
        p.value = tensor;
        seen.insert(path);
    }
    if let Some(missing) = params.names().find(|n| !seen.contains(*n)) {
        return Err(NnError::MissingParam(missing.to_owned()));
    }
    Ok(())
}

pub fn write_checkpoint(params: &ParamStore, path: &Path) -> Result<(), NnError> {
    fs::write(path, encode_checkpoint(params))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>, NnError> {
    decode_checkpoint(&fs::read(path)?)
}
