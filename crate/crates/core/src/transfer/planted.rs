use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{molecule_id, FingerprintSet, TransferError};
use crate::analysis::mean_std;
use crate::molgraph::{DatasetMix, LabelBlock, TaskKind, TaskLevel, TaskTable};
use crate::nn::rng::stream;

/// Graph regression task whose label is a fixed linear function of the
/// fingerprints: each coordinate is standardized over the `n` molecules and
/// dotted with weights drawn from N(0, 1/dim).
pub fn planted_linear_task(name: &str, fps: &FingerprintSet, n: usize, seed: u64) -> Result<TaskTable, TransferError> {
    fps.validate()?;
    let rows: Vec<&[f64]> = (0..n)
        .map(|i| {
            let id = molecule_id(i);
            fps.get(&id).ok_or(TransferError::MissingMolecule { id, set: fps.tap.clone() })
        })
        .collect::<Result<_, _>>()?;
    let dist = Normal::new(0.0, 1.0 / (fps.dim.max(1) as f64).sqrt()).expect("finite std");
    let mut rng = stream(seed, "planted.linear", &[]);
    let w: Vec<f64> = (0..fps.dim).map(|_| dist.sample(&mut rng)).collect();
    let stats: Vec<(f64, f64)> = (0..fps.dim)
        .map(|j| {
            let (m, s) = mean_std(&rows.iter().map(|r| r[j]).collect::<Vec<_>>());
            (m, if s > 0.0 { s } else { 1.0 })
        })
        .collect();
    let blocks = rows
        .iter()
        .map(|r| {
            let y = r.iter().zip(&stats).zip(&w).map(|((x, (m, s)), w)| (x - m) / s * w).sum();
            LabelBlock::new(vec![y], vec![true])
        })
        .collect();
    Ok(TaskTable { name: name.to_owned(), level: TaskLevel::Graph, kind: TaskKind::Regression, columns: 1, blocks })
}

/// Graph classification task with fair-coin labels unrelated to the inputs.
pub fn noise_task(name: &str, n: usize, seed: u64) -> TaskTable {
    let mut rng = stream(seed, "planted.noise", &[]);
    let blocks = (0..n).map(|_| LabelBlock::new(vec![f64::from(rng.random_bool(0.5) as u8)], vec![true])).collect();
    TaskTable { name: name.to_owned(), level: TaskLevel::Graph, kind: TaskKind::Classification, columns: 1, blocks }
}

/// `mix` with its tasks replaced by `tasks`.
pub fn with_tasks(mix: &DatasetMix, tasks: Vec<TaskTable>) -> Result<DatasetMix, TransferError> {
    if let Some(t) = tasks.iter().find(|t| t.blocks.len() != mix.molecules.len()) {
        return Err(TransferError::Inconsistent(format!(
            "task `{}` has {} label blocks for {} molecules",
            t.name,
            t.blocks.len(),
            mix.molecules.len()
        )));
    }
    Ok(DatasetMix { molecules: mix.molecules.clone(), tasks, splits: mix.splits.clone() })
}
