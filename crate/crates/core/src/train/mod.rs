//! Masked multi-task pretraining, per-split evaluation and checkpoints.

mod checkpoint;
mod eval;
mod history;

pub use checkpoint::{load_checkpoint, load_checkpoint_as, save_checkpoint, spec_path};
pub use eval::{evaluate, evaluate_prepared, predict, task_metrics, MetricMap};
pub use history::{EpochRecord, History};

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{assemble_network, ArchError, ArchKind, Batch, ModelState, NetworkSpec, PreparedMolecule};
use crate::molgraph::{DatasetError, DatasetMix, Split, TaskKind};
use crate::nn::rng::{stream, DropoutKey};
use crate::nn::{adam_step, lr_at, AdamConfig, AdamState, LrSchedule, Mode, NnError, Tape, Var};
use crate::pse::{PseConfig, PseError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("the train split is empty")]
    EmptyTrainSplit,
    #[error("the dataset has no tasks")]
    NoTasks,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("output for task `{task}` has shape {found:?}, labels need {expected:?}")]
    OutputShape { task: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("no output for task `{0}`")]
    MissingOutput(String),
    #[error("split `{0}` is empty")]
    EmptySplit(&'static str),
    #[error("checkpoint spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Pse(#[from] PseError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Base learning rate per architecture.
pub fn default_base_lr(kind: ArchKind) -> f64 {
    match kind {
        ArchKind::Mpnn => 0.003,
        ArchKind::Transformer | ArchKind::Gps => 0.001,
    }
}

fn default_batch() -> usize {
    256
}
fn default_warmup() -> usize {
    5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub seed: u64,
    pub base_lr: f64,
    #[serde(default = "default_warmup")]
    pub warmup_epochs: usize,
    /// Not supported; only 0 is accepted.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub weight_decay: f64,
    /// Not supported; only `None` is accepted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_clip: Option<f64>,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

impl TrainConfig {
    /// Defaults for `kind`: batch 256, 5 warmup epochs, the architecture's base
    /// learning rate.
    pub fn for_arch(kind: ArchKind, epochs: usize, seed: u64) -> Self {
        Self {
            epochs,
            batch_size: default_batch(),
            seed,
            base_lr: default_base_lr(kind),
            warmup_epochs: default_warmup(),
            weight_decay: 0.0,
            grad_clip: None,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.weight_decay != 0.0 {
            return Err(TrainError::Config("weight_decay is not supported; leave it at 0".into()));
        }
        if self.grad_clip.is_some() {
            return Err(TrainError::Config("grad_clip is not supported; leave it unset".into()));
        }
        if self.epochs <= self.warmup_epochs {
            return Err(TrainError::Config(format!(
                "epochs ({}) must exceed warmup_epochs ({})",
                self.epochs, self.warmup_epochs
            )));
        }
        if self.warmup_epochs == 0 {
            return Err(TrainError::Config("warmup_epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(TrainError::Config(format!("base_lr {} must be positive", self.base_lr)));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<LrSchedule, TrainError> {
        self.validate()?;
        Ok(LrSchedule::new(self.base_lr, self.warmup_epochs, self.epochs)?)
    }
}

/// Every molecule of `mix` with its encoder inputs, in molecule order.
pub fn prepare_molecules(mix: &DatasetMix, pse: &PseConfig) -> Result<Vec<PreparedMolecule>, TrainError> {
    Ok(mix.molecules.iter().map(|m| PreparedMolecule::new(m, pse)).collect::<Result<_, _>>()?)
}

/// Labels of one task for a batch: blocks concatenated in batch order.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskLabels {
    pub kind: TaskKind,
    pub columns: usize,
    pub targets: Arc<[f64]>,
    pub mask: Arc<[bool]>,
}

impl TaskLabels {
    pub fn rows(&self) -> usize {
        self.targets.len() / self.columns
    }
}

/// Task name → labels of the molecules `idx`.
pub fn batch_labels(mix: &DatasetMix, idx: &[usize]) -> BTreeMap<String, TaskLabels> {
    mix.tasks
        .iter()
        .map(|t| {
            let targets: Vec<f64> = idx.iter().flat_map(|&i| t.blocks[i].values.iter().copied()).collect();
            let mask: Vec<bool> = idx.iter().flat_map(|&i| t.blocks[i].mask.iter().copied()).collect();
            let labels = TaskLabels { kind: t.kind, columns: t.columns, targets: targets.into(), mask: mask.into() };
            (t.name.clone(), labels)
        })
        .collect()
}

/// Loss handles on the tape.
pub struct MultitaskLoss {
    pub total: Var,
    pub per_task: BTreeMap<String, Var>,
}

/// Mean BCE on logits for classification and mean absolute error for
/// regression, each over the unmasked entries; the total is the unweighted
/// mean over tasks with at least one unmasked entry. `None` when every task
/// is fully masked.
pub fn masked_multitask_loss(
    t: &mut Tape,
    outputs: &BTreeMap<String, Var>,
    labels: &BTreeMap<String, TaskLabels>,
) -> Result<Option<MultitaskLoss>, TrainError> {
    let mut per_task = BTreeMap::new();
    for (name, l) in labels {
        let &out = outputs.get(name).ok_or_else(|| TrainError::MissingOutput(name.clone()))?;
        let found = t.value(out).shape().to_vec();
        let expected = vec![l.rows(), l.columns];
        if found != expected {
            return Err(TrainError::OutputShape { task: name.clone(), expected, found });
        }
        let loss = match l.kind {
            TaskKind::Classification => t.masked_bce(out, l.targets.clone(), l.mask.clone()),
            TaskKind::Regression => t.masked_mae(out, l.targets.clone(), l.mask.clone()),
        };
        if let Some(v) = loss {
            per_task.insert(name.clone(), v);
        }
    }
    if per_task.is_empty() {
        return Ok(None);
    }
    let parts: Vec<Var> = per_task.values().copied().collect();
    let total = t.mean(&parts);
    Ok(Some(MultitaskLoss { total, per_task }))
}

/// Trains a freshly assembled network on the train split of `mix`.
///
/// Each epoch shuffles the train indices from a stream keyed by `(seed,
/// epoch)`, steps Adam once per batch at `lr_at(epoch)` and then evaluates the
/// validation and test splits. Runs with equal inputs are bitwise identical.
pub fn pretrain(spec: &NetworkSpec, mix: &DatasetMix, cfg: &TrainConfig) -> Result<(ModelState, History), TrainError> {
    let schedule = cfg.schedule()?;
    if mix.tasks.is_empty() {
        return Err(TrainError::NoTasks);
    }
    spec.check_mix(mix)?;
    if mix.splits.train.is_empty() {
        return Err(TrainError::EmptyTrainSplit);
    }
    let mut model = assemble_network(spec, cfg.seed)?;
    let prepared = prepare_molecules(mix, &spec.pse)?;
    let mut adam = AdamState::new();
    let mut history = History::default();
    for epoch in 0..cfg.epochs {
        let lr = lr_at(&schedule, epoch)?;
        let mut order = mix.splits.train.clone();
        order.shuffle(&mut stream(cfg.seed, "train.shuffle", &[epoch as u64]));
        let mut losses = Vec::new();
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let key = DropoutKey::new(cfg.seed, epoch as u64, b as u64);
            if let Some(loss) = train_step(&mut model, &prepared, mix, idx, key, lr, &mut adam, |_| true)? {
                if !loss.is_finite() {
                    return Err(TrainError::NonFiniteLoss { epoch: epoch + 1, batch: b + 1 });
                }
                losses.push(loss);
            }
        }
        let train_loss = if losses.is_empty() { f64::NAN } else { losses.iter().sum::<f64>() / losses.len() as f64 };
        let mut metrics = BTreeMap::new();
        for split in [Split::Val, Split::Test] {
            if mix.splits.get(split).is_empty() {
                continue;
            }
            for (task, m) in evaluate_prepared(&model, &prepared, mix, split, cfg.batch_size)? {
                for (metric, v) in m {
                    metrics.insert(format!("{}.{task}.{metric}", split.name()), v);
                }
            }
        }
        history.epochs.push(EpochRecord { epoch: epoch + 1, lr, train_loss, metrics });
    }
    Ok((model, history))
}

/// One forward/backward/Adam step on the molecules `idx`, updating only the
/// parameters selected by `trainable`. Returns the batch loss, or `None`
/// when every label in the batch is masked (no update is made).
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    model: &mut ModelState,
    prepared: &[PreparedMolecule],
    mix: &DatasetMix,
    idx: &[usize],
    key: DropoutKey,
    lr: f64,
    adam: &mut AdamState,
    trainable: impl Fn(&str) -> bool,
) -> Result<Option<f64>, TrainError> {
    let mols: Vec<&PreparedMolecule> = idx.iter().map(|&i| &prepared[i]).collect();
    let batch = Batch::new(&mols, model.spec.n_heads);
    let labels = batch_labels(mix, idx);
    let mut t = Tape::new();
    let fwd = model.forward_on_tape(&mut t, &batch, Mode::Train, key, &[])?;
    let Some(loss) = masked_multitask_loss(&mut t, &fwd.outputs, &labels)? else { return Ok(None) };
    let value = t.value(loss.total).data()[0];
    if !value.is_finite() {
        return Ok(Some(value));
    }
    let grads = t.backward(loss.total);
    model.params.zero_grad();
    grads.accumulate_into(&mut model.params);
    adam_step(&mut model.params, adam, lr, AdamConfig::default(), trainable)?;
    Ok(Some(value))
}
