//! `MFPC` fingerprint cache files and the `fingerprints.json` manifest.
//!
//! ```text
//! magic  b"MFPC"
//! u32    version
//! u32    dim
//! u64    count
//! count × { u32 id length, UTF-8 id, dim × f64 }
//! ```
//! All integers and reals are little-endian.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FingerprintSet, TransferError};

const MAGIC: &[u8; 4] = b"MFPC";
const VERSION: u32 = 1;

pub fn encode_cache(set: &FingerprintSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + set.vectors.len() * (8 + set.dim * 8));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(set.dim as u32).to_le_bytes());
    out.extend_from_slice(&(set.vectors.len() as u64).to_le_bytes());
    for (id, v) in &set.vectors {
        out.extend_from_slice(&(id.len() as u32).to_le_bytes());
        out.extend_from_slice(id.as_bytes());
        for x in v {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8], TransferError> {
    let end = pos.checked_add(n).filter(|&e| e <= bytes.len()).ok_or(TransferError::Truncated {
        offset: *pos,
        needed: n,
        len: bytes.len(),
    })?;
    let s = &bytes[*pos..end];
    *pos = end;
    Ok(s)
}

/// Decodes a cache; the source model and tap come from the manifest, so they
/// are returned empty.
pub fn decode_cache(bytes: &[u8]) -> Result<FingerprintSet, TransferError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(TransferError::BadMagic);
    }
    let mut pos = 4;
    let version = u32::from_le_bytes(take(bytes, &mut pos, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(TransferError::UnsupportedVersion(version));
    }
    let dim = u32::from_le_bytes(take(bytes, &mut pos, 4)?.try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(take(bytes, &mut pos, 8)?.try_into().unwrap());
    let record_floor = dim.checked_mul(8).and_then(|b| b.checked_add(4)).ok_or(TransferError::DimOverflow(dim))?;
    let floor =
        usize::try_from(count).ok().and_then(|c| c.checked_mul(record_floor)).ok_or(TransferError::DimOverflow(dim))?;
    if floor > bytes.len() - pos {
        return Err(TransferError::Truncated { offset: pos, needed: floor, len: bytes.len() });
    }
    let mut vectors = BTreeMap::new();
    for _ in 0..count {
        let start = pos;
        let len = u32::from_le_bytes(take(bytes, &mut pos, 4)?.try_into().unwrap()) as usize;
        let id = std::str::from_utf8(take(bytes, &mut pos, len)?)
            .map_err(|_| TransferError::Format(format!("molecule id at byte {start} is not UTF-8")))?
            .to_owned();
        let raw = take(bytes, &mut pos, dim * 8)?;
        let v: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        if vectors.insert(id.clone(), v).is_some() {
            return Err(TransferError::Format(format!("duplicate molecule id `{id}`")));
        }
    }
    if pos != bytes.len() {
        return Err(TransferError::Format(format!("{} trailing bytes after {count} records", bytes.len() - pos)));
    }
    Ok(FingerprintSet { source_model_id: String::new(), tap: String::new(), dim, vectors })
}

pub fn write_cache(set: &FingerprintSet, path: &Path) -> Result<(), TransferError> {
    set.validate()?;
    fs::write(path, encode_cache(set))?;
    Ok(())
}

pub fn read_cache(path: &Path) -> Result<FingerprintSet, TransferError> {
    decode_cache(&fs::read(path)?)
}

/// One entry of `fingerprints.json`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub source_model_id: String,
    pub tap: String,
    pub dim: usize,
    pub count: usize,
    pub file: String,
}

pub const MANIFEST: &str = "fingerprints.json";

/// File name used for a tap's cache inside a fingerprint directory.
pub fn cache_file_name(tap: &str) -> String {
    format!("{tap}.mfpc")
}

/// Writes each set as `<tap>.mfpc` into `dir` plus a manifest listing them.
pub fn write_cache_dir(sets: &[FingerprintSet], dir: &Path) -> Result<Vec<ManifestEntry>, TransferError> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for s in sets {
        let file = cache_file_name(&s.tap);
        write_cache(s, &dir.join(&file))?;
        entries.push(ManifestEntry {
            source_model_id: s.source_model_id.clone(),
            tap: s.tap.clone(),
            dim: s.dim,
            count: s.vectors.len(),
            file,
        });
    }
    let text = serde_json::to_string_pretty(&entries).map_err(|e| TransferError::Format(e.to_string()))?;
    fs::write(dir.join(MANIFEST), text + "\n")?;
    Ok(entries)
}

/// Reads every set listed in `dir/fingerprints.json`, checking each against
/// its manifest entry.
pub fn read_cache_dir(dir: &Path) -> Result<Vec<FingerprintSet>, TransferError> {
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let entries: Vec<ManifestEntry> =
        serde_json::from_str(&text).map_err(|e| TransferError::Format(format!("{MANIFEST}: {e}")))?;
    entries
        .into_iter()
        .map(|e| {
            let mut s = read_cache(&dir.join(&e.file))?;
            if s.dim != e.dim || s.vectors.len() != e.count {
                return Err(TransferError::Format(format!(
                    "{} holds {}×{} but the manifest says {}×{}",
                    e.file,
                    s.vectors.len(),
                    s.dim,
                    e.count,
                    e.dim
                )));
            }
            s.source_model_id = e.source_model_id;
            s.tap = e.tap;
            Ok(s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set() -> FingerprintSet {
        FingerprintSet {
            source_model_id: "m".into(),
            tap: "graph_output_nn".into(),
            dim: 2,
            vectors: [("0".to_owned(), vec![1.5, -0.0]), ("1".to_owned(), vec![f64::MIN_POSITIVE, 3.0])].into(),
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let s = set();
        let bytes = encode_cache(&s);
        let back = decode_cache(&bytes).unwrap();
        assert_eq!(encode_cache(&back), bytes);
        assert_eq!(back.vectors["0"][1].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn corrupt_inputs() {
        let mut bytes = encode_cache(&set());
        bytes[0] = b'X';
        assert!(matches!(decode_cache(&bytes), Err(TransferError::BadMagic)));
        let mut bytes = encode_cache(&set());
        bytes[12] = 3; // count 3, only 2 records present
        assert!(matches!(decode_cache(&bytes), Err(TransferError::Truncated { .. })));
        let bytes = encode_cache(&set());
        assert!(matches!(decode_cache(&bytes[..bytes.len() - 1]), Err(TransferError::Truncated { .. })));
        let mut bytes = encode_cache(&set());
        bytes[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
        bytes[12..20].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(decode_cache(&bytes), Err(TransferError::DimOverflow(_))));
    }
}
