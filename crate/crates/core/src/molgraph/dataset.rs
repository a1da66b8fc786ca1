use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{featurize, FeatureMatrices, MolGraph, SmilesError};
use crate::nn::rng::stream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskLevel {
    Graph,
    Node,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Regression,
    Classification,
}

/// Labels of one molecule for one task: `rows × columns`, row-major. Graph
/// level tasks have one row; node level tasks one row per atom. Masked
/// entries hold 0.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelBlock {
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

impl LabelBlock {
    pub fn new(mut values: Vec<f64>, mask: Vec<bool>) -> Self {
        assert_eq!(values.len(), mask.len(), "label/mask length");
        for (v, &m) in values.iter_mut().zip(&mask) {
            if !m {
                *v = 0.0;
            }
        }
        Self { values, mask }
    }

    pub fn unmasked(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskTable {
    pub name: String,
    pub level: TaskLevel,
    pub kind: TaskKind,
    pub columns: usize,
    /// One block per molecule, in molecule order.
    pub blocks: Vec<LabelBlock>,
}

impl TaskTable {
    pub fn unmasked(&self) -> usize {
        self.blocks.iter().map(LabelBlock::unmasked).sum()
    }

    fn keep_columns(&self, cols: &[usize]) -> TaskTable {
        let blocks = self
            .blocks
            .iter()
            .map(|b| {
                let rows = b.values.len() / self.columns.max(1);
                let mut values = Vec::with_capacity(rows * cols.len());
                let mut mask = Vec::with_capacity(rows * cols.len());
                for r in 0..rows {
                    for &c in cols {
                        values.push(b.values[r * self.columns + c]);
                        mask.push(b.mask[r * self.columns + c]);
                    }
                }
                LabelBlock { values, mask }
            })
            .collect();
        TaskTable { columns: cols.len(), blocks, ..self.clone_meta() }
    }

    fn clone_meta(&self) -> TaskTable {
        TaskTable { name: self.name.clone(), level: self.level, kind: self.kind, columns: self.columns, blocks: vec![] }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Molecule {
    pub graph: MolGraph,
    pub features: FeatureMatrices,
}

impl Molecule {
    pub fn new(graph: MolGraph) -> Self {
        let features = featurize(&graph);
        Self { graph, features }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl Splits {
    pub fn get(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("need at least 10 molecules to populate train/val/test, got {0}")]
    TooFewMolecules(usize),
    #[error("splits overlap at molecule {0}")]
    SplitOverlap(usize),
    #[error("splits do not cover molecule {0}")]
    SplitCoverage(usize),
    #[error("task `{task}`: {reason}")]
    TaskShape { task: String, reason: String },
    #[error("task `{task}`: classification label {value} is not 0 or 1")]
    ClassLabel { task: String, value: f64 },
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("duplicate task `{0}`")]
    DuplicateTask(String),
    #[error("fraction {0} outside (0, 1]")]
    InvalidFraction(f64),
    #[error("sub-sampling leaves the training split empty")]
    EmptyTrain,
    #[error("generator settings: {0}")]
    Settings(String),
    #[error("{file}:{line}: {reason}")]
    Format { file: String, line: usize, reason: String },
    #[error(transparent)]
    Smiles(#[from] SmilesError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Molecules, their multi-task label tables and a train/val/test split.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetMix {
    pub molecules: Vec<Molecule>,
    pub tasks: Vec<TaskTable>,
    pub splits: Splits,
}

impl DatasetMix {
    pub fn new(molecules: Vec<Molecule>, tasks: Vec<TaskTable>, splits: Splits) -> Result<Self, DatasetError> {
        let mix = Self { molecules, tasks, splits };
        mix.validate()?;
        Ok(mix)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let n = self.molecules.len();
        let mut seen = vec![false; n];
        for &i in self.splits.train.iter().chain(&self.splits.val).chain(&self.splits.test) {
            if i >= n {
                return Err(DatasetError::SplitCoverage(i));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(DatasetError::SplitOverlap(i));
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(DatasetError::SplitCoverage(i));
        }
        let mut names = BTreeSet::new();
        for t in &self.tasks {
            if !names.insert(t.name.as_str()) {
                return Err(DatasetError::DuplicateTask(t.name.clone()));
            }
            let shape_err = |reason: String| DatasetError::TaskShape { task: t.name.clone(), reason };
            if t.blocks.len() != n {
                return Err(shape_err(format!("{} label blocks for {} molecules", t.blocks.len(), n)));
            }
            for (i, (b, m)) in t.blocks.iter().zip(&self.molecules).enumerate() {
                let rows = match t.level {
                    TaskLevel::Graph => 1,
                    TaskLevel::Node => m.graph.node_count(),
                };
                if b.values.len() != rows * t.columns || b.mask.len() != b.values.len() {
                    return Err(shape_err(format!("molecule {i} block has wrong shape")));
                }
                if t.kind == TaskKind::Classification {
                    if let Some((&v, _)) = b.values.iter().zip(&b.mask).find(|(&v, &mk)| mk && v != 0.0 && v != 1.0) {
                        return Err(DatasetError::ClassLabel { task: t.name.clone(), value: v });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn task(&self, name: &str) -> Option<&TaskTable> {
        self.tasks.iter().find(|t| t.name == name)
    }

    pub fn len(&self) -> usize {
        self.molecules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.molecules.is_empty()
    }

    /// Keeps the molecules in `keep` (ascending), renumbering everything.
    fn restrict(&self, keep: &[usize]) -> DatasetMix {
        let mut new_index = vec![usize::MAX; self.molecules.len()];
        for (new, &old) in keep.iter().enumerate() {
            new_index[old] = new;
        }
        let remap = |ids: &[usize]| -> Vec<usize> {
            ids.iter().filter(|&&i| new_index[i] != usize::MAX).map(|&i| new_index[i]).collect()
        };
        DatasetMix {
            molecules: keep.iter().map(|&i| self.molecules[i].clone()).collect(),
            tasks: self
                .tasks
                .iter()
                .map(|t| TaskTable { blocks: keep.iter().map(|&i| t.blocks[i].clone()).collect(), ..t.clone_meta() })
                .collect(),
            splits: Splits {
                train: remap(&self.splits.train),
                val: remap(&self.splits.val),
                test: remap(&self.splits.test),
            },
        }
    }
}

fn check_fraction(f: f64) -> Result<(), DatasetError> {
    if f > 0.0 && f <= 1.0 {
        Ok(())
    } else {
        Err(DatasetError::InvalidFraction(f))
    }
}

/// Keeps `floor(molecule_fraction · |train|)` training molecules (val/test
/// untouched) and `ceil(label_fraction · T)` columns of every task, both
/// drawn without replacement by seeded Fisher–Yates shuffles. Kept molecules
/// and columns stay in their original relative order.
pub fn subsample(
    mix: &DatasetMix,
    molecule_fraction: f64,
    label_fraction: f64,
    seed: u64,
) -> Result<DatasetMix, DatasetError> {
    check_fraction(molecule_fraction)?;
    check_fraction(label_fraction)?;
    let n_train = mix.splits.train.len();
    let keep_train = ((molecule_fraction * n_train as f64) + 1e-9).floor() as usize;
    if keep_train == 0 {
        return Err(DatasetError::EmptyTrain);
    }
    let mut train = mix.splits.train.clone();
    train.shuffle(&mut stream(seed, "subsample.molecules", &[]));
    let mut keep: Vec<usize> =
        train[..keep_train.min(n_train)].iter().chain(&mix.splits.val).chain(&mix.splits.test).copied().collect();
    keep.sort_unstable();
    let mut out = mix.restrict(&keep);
    for (ti, task) in out.tasks.iter_mut().enumerate() {
        let t = task.columns;
        let k = ((label_fraction * t as f64) - 1e-9).ceil().max(1.0) as usize;
        if k >= t {
            continue;
        }
        let mut cols: Vec<usize> = (0..t).collect();
        cols.shuffle(&mut stream(seed, "subsample.labels", &[ti as u64]));
        let mut chosen = cols[..k].to_vec();
        chosen.sort_unstable();
        *task = task.keep_columns(&chosen);
    }
    Ok(out)
}

/// Removes one task table; molecules and splits are unchanged.
pub fn ablate_dataset(mix: &DatasetMix, task_name: &str) -> Result<DatasetMix, DatasetError> {
    let pos = mix
        .tasks
        .iter()
        .position(|t| t.name == task_name)
        .ok_or_else(|| DatasetError::UnknownTask(task_name.to_owned()))?;
    let mut out = mix.clone();
    out.tasks.remove(pos);
    Ok(out)
}
