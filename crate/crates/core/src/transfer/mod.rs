//! Fingerprints from frozen networks, their on-disk cache, probing heads and
//! trimmed finetuning.

mod cache;
mod finetune;
mod planted;
mod probe;

pub use cache::{
    cache_file_name, decode_cache, encode_cache, read_cache, read_cache_dir, write_cache, write_cache_dir,
    ManifestEntry, MANIFEST,
};
pub use finetune::{finetune, finetune_seeds, trim_for_finetune, FinetuneConfig, FinetuneResult};
pub use planted::{noise_task, planted_linear_task, with_tasks};
pub use probe::{
    primary_metric, probe, probe_seeds, EpochMetrics, MultiSeedProbe, ProbeConfig, ProbeHead, ProbeResult,
};

use std::collections::BTreeMap;

use thiserror::Error;

use crate::arch::{ArchError, Batch, ModelState, PreparedMolecule};
use crate::molgraph::{DatasetMix, TaskLevel};
use crate::nn::rng::DropoutKey;
use crate::nn::{Mode, NnError};
use crate::train::{prepare_molecules, TrainError};

#[derive(Debug, Error)]
pub enum TransferError {
    #[error("tap `{0}` is node-level; only graph-level taps can be fingerprinted")]
    NodeLevelTap(String),
    #[error("molecule `{id}` is missing from fingerprint set `{set}`")]
    MissingMolecule { id: String, set: String },
    #[error("need at least {need} fingerprint sets, got {got}")]
    TooFewSets { need: usize, got: usize },
    #[error("fingerprint set is inconsistent: {0}")]
    Inconsistent(String),
    #[error("no task `{0}` in the downstream data")]
    UnknownTask(String),
    #[error("task `{0}` is node-level; probing and finetuning need a graph-level task")]
    NodeLevelTask(String),
    #[error("invalid finetune module `{module}`; valid modules: {valid}")]
    InvalidModule { module: String, valid: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("fingerprint cache: bad magic bytes")]
    BadMagic,
    #[error("fingerprint cache: unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("fingerprint cache: truncated at byte {offset} (needs {needed} more bytes, file is {len})")]
    Truncated { offset: usize, needed: usize, len: usize },
    #[error("fingerprint cache: dim {0} overflows the record size")]
    DimOverflow(usize),
    #[error("fingerprint cache: {0}")]
    Format(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Vectors tapped at one site of one model, keyed by molecule id.
#[derive(Clone, Debug, PartialEq)]
pub struct FingerprintSet {
    pub source_model_id: String,
    pub tap: String,
    pub dim: usize,
    pub vectors: BTreeMap<String, Vec<f64>>,
}

impl FingerprintSet {
    pub fn validate(&self) -> Result<(), TransferError> {
        match self.vectors.iter().find(|(_, v)| v.len() != self.dim) {
            Some((id, v)) => {
                Err(TransferError::Inconsistent(format!("vector `{id}` has length {}, dim is {}", v.len(), self.dim)))
            }
            None => Ok(()),
        }
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.vectors.get(id).map(Vec::as_slice)
    }
}

/// Molecule id used for the `i`-th molecule of a mix.
pub fn molecule_id(i: usize) -> String {
    i.to_string()
}

/// Eval-mode activations at each graph-level `tap` for every molecule of
/// `mix`; one set per tap.
pub fn extract_fingerprints(
    model: &ModelState,
    mix: &DatasetMix,
    taps: &[&str],
    source_model_id: &str,
) -> Result<Vec<FingerprintSet>, TransferError> {
    for &tap in taps {
        match model.tap_level(tap) {
            Some(TaskLevel::Graph) => {}
            Some(TaskLevel::Node) => return Err(TransferError::NodeLevelTap(tap.to_owned())),
            None => {
                return Err(ArchError::UnknownTap { tap: tap.to_owned(), valid: model.valid_taps().join(", ") }.into())
            }
        }
    }
    let prepared = prepare_molecules(mix, &model.spec.pse)?;
    let mut sets: Vec<FingerprintSet> = taps
        .iter()
        .map(|&tap| FingerprintSet {
            source_model_id: source_model_id.to_owned(),
            tap: tap.to_owned(),
            dim: model.spec.width,
            vectors: BTreeMap::new(),
        })
        .collect();
    let idx: Vec<usize> = (0..prepared.len()).collect();
    for chunk in idx.chunks(256) {
        let mols: Vec<&PreparedMolecule> = chunk.iter().map(|&i| &prepared[i]).collect();
        let batch = Batch::new(&mols, model.spec.n_heads);
        let out = model.forward(&batch, Mode::Eval, DropoutKey::new(0, 0, 0), taps)?;
        for set in &mut sets {
            let t = &out.taps[&set.tap];
            for (r, &i) in chunk.iter().enumerate() {
                set.vectors.insert(molecule_id(i), t.row(r).to_vec());
            }
        }
    }
    Ok(sets)
}

/// Per-molecule concatenation in argument order.
pub fn concat_fingerprints(sets: &[&FingerprintSet]) -> Result<FingerprintSet, TransferError> {
    if sets.len() < 2 {
        return Err(TransferError::TooFewSets { need: 2, got: sets.len() });
    }
    for s in sets {
        s.validate()?;
    }
    let first = sets[0];
    for s in &sets[1..] {
        if let Some(id) = first.vectors.keys().find(|k| !s.vectors.contains_key(*k)) {
            return Err(TransferError::MissingMolecule { id: id.clone(), set: s.tap.clone() });
        }
        if let Some(id) = s.vectors.keys().find(|k| !first.vectors.contains_key(*k)) {
            return Err(TransferError::MissingMolecule { id: id.clone(), set: first.tap.clone() });
        }
    }
    let vectors = first
        .vectors
        .keys()
        .map(|id| (id.clone(), sets.iter().flat_map(|s| s.vectors[id].iter().copied()).collect()))
        .collect();
    Ok(FingerprintSet {
        source_model_id: sets.iter().map(|s| s.source_model_id.as_str()).collect::<Vec<_>>().join("+"),
        tap: sets.iter().map(|s| s.tap.as_str()).collect::<Vec<_>>().join("+"),
        dim: sets.iter().map(|s| s.dim).sum(),
        vectors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(tap: &str, dim: usize, ids: &[&str]) -> FingerprintSet {
        FingerprintSet {
            source_model_id: "m".into(),
            tap: tap.into(),
            dim,
            vectors: ids
                .iter()
                .map(|id| (id.to_string(), (0..dim).map(|j| j as f64 + id.len() as f64).collect()))
                .collect(),
        }
    }

    #[test]
    fn concat_dims_and_order() {
        let a = set("a", 32, &["0", "1"]);
        let b = set("b", 64, &["0", "1"]);
        let ab = concat_fingerprints(&[&a, &b]).unwrap();
        assert_eq!(ab.dim, 96);
        assert_eq!(&ab.vectors["1"][..32], a.get("1").unwrap());
        let aa = concat_fingerprints(&[&a, &a]).unwrap();
        assert_eq!(aa.vectors["0"][..32], aa.vectors["0"][32..]);
        let c = set("c", 3, &["0", "1"]);
        let left = concat_fingerprints(&[&concat_fingerprints(&[&a, &b]).unwrap(), &c]).unwrap();
        let flat = concat_fingerprints(&[&a, &b, &c]).unwrap();
        assert_eq!(left.vectors, flat.vectors);
    }

    #[test]
    fn concat_key_mismatch_names_the_molecule() {
        let a = set("a", 2, &["0", "1"]);
        let b = set("b", 2, &["0"]);
        match concat_fingerprints(&[&a, &b]) {
            Err(TransferError::MissingMolecule { id, set }) => assert_eq!((id.as_str(), set.as_str()), ("1", "b")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(concat_fingerprints(&[&a]), Err(TransferError::TooFewSets { .. })));
    }
}
