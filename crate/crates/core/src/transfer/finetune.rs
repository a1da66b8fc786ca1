use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::probe::{find_task, select_epoch, TargetScaler};
use super::{primary_metric, EpochMetrics, TransferError};
use crate::arch::{assemble_network, FinetuneHeadSpec, ModelState};
use crate::molgraph::{DatasetMix, Split, TaskLevel};
use crate::nn::rng::{stream, DropoutKey};
use crate::nn::{AdamState, ParamStore};
use crate::train::{batch_labels, predict, prepare_molecules, task_metrics, train_step, TrainError};

fn d_module() -> String {
    "graph_output_nn".into()
}
fn d_hidden() -> usize {
    256
}
fn d_epochs() -> usize {
    40
}
fn d_batch() -> usize {
    256
}
fn d_lr() -> f64 {
    1e-4
}
fn d_freeze() -> usize {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneConfig {
    #[serde(default = "d_module")]
    pub finetune_module: String,
    #[serde(default = "d_hidden")]
    pub hidden_dim: usize,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_freeze")]
    pub freeze_epochs: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            finetune_module: d_module(),
            hidden_dim: d_hidden(),
            epochs: d_epochs(),
            batch_size: d_batch(),
            lr: d_lr(),
            freeze_epochs: d_freeze(),
            seed: 0,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<(), TransferError> {
        if self.hidden_dim == 0 || self.epochs == 0 || self.batch_size == 0 || self.lr.is_nan() || self.lr <= 0.0 {
            return Err(TransferError::Config(
                "finetune hidden_dim, epochs, batch_size and lr must be positive".into(),
            ));
        }
        if self.freeze_epochs >= self.epochs {
            return Err(TransferError::Config(format!(
                "freeze_epochs {} must be below epochs {}",
                self.freeze_epochs, self.epochs
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneResult {
    /// Finetuned network at the best epoch.
    pub model: ModelState,
    /// 1-based
    pub best_epoch: usize,
    pub test_metrics: BTreeMap<String, Option<f64>>,
    pub epochs: Vec<EpochMetrics>,
    /// Checksum of every parameter outside `finetune_head` after each epoch.
    pub base_checksums: Vec<u64>,
}

const HEAD_PREFIX: &str = "finetune_head.";

fn is_head(path: &str) -> bool {
    path.starts_with(HEAD_PREFIX)
}

fn valid_modules(model: &ModelState) -> Vec<String> {
    let mut v = vec![d_module()];
    v.extend(
        model
            .spec
            .task_heads
            .iter()
            .filter(|h| h.level == TaskLevel::Graph)
            .map(|h| format!("task_heads.{}.layer1", h.name)),
    );
    v
}

/// The pretrained network cut after `cfg.finetune_module`: node-level outputs
/// and unused heads are dropped, dropout is zeroed and a freshly initialized
/// two-layer head producing `out_dim` values for `task` is appended. Retained
/// parameters keep their pretrained values.
pub fn trim_for_finetune(
    model: &ModelState,
    cfg: &FinetuneConfig,
    task: &str,
    out_dim: usize,
) -> Result<ModelState, TransferError> {
    let valid = valid_modules(model);
    if !valid.contains(&cfg.finetune_module) {
        return Err(TransferError::InvalidModule { module: cfg.finetune_module.clone(), valid: valid.join(", ") });
    }
    let mut spec = model.spec.clone();
    spec.dropout_p = 0.0;
    spec.task_heads.retain(|h| cfg.finetune_module == format!("task_heads.{}.layer1", h.name));
    spec.finetune = Some(FinetuneHeadSpec {
        module: cfg.finetune_module.clone(),
        hidden_dim: cfg.hidden_dim,
        task: task.to_owned(),
        out_dim,
    });
    let mut trimmed = assemble_network(&spec, cfg.seed)?;
    for p in trimmed.params.iter_mut().filter(|p| !is_head(&p.name)) {
        let src = model.params.get(&p.name).ok_or_else(|| {
            TransferError::Inconsistent(format!("pretrained model lacks retained parameter `{}`", p.name))
        })?;
        p.value = src.value.clone();
    }
    Ok(trimmed)
}

struct Run {
    snapshots: Vec<ParamStore>,
    epochs: Vec<EpochMetrics>,
    checksums: Vec<u64>,
}

fn run_finetune(
    start: &ModelState,
    mix: &DatasetMix,
    train_mix: &DatasetMix,
    scaler: &TargetScaler,
    cfg: &FinetuneConfig,
) -> Result<Run, TransferError> {
    let mut model = start.clone();
    let prepared = prepare_molecules(mix, &model.spec.pse)?;
    let mut adam = AdamState::new();
    let mut run = Run { snapshots: vec![], epochs: vec![], checksums: vec![] };
    for epoch in 0..cfg.epochs {
        let frozen = epoch < cfg.freeze_epochs;
        let mut order = mix.splits.train.clone();
        order.shuffle(&mut stream(cfg.seed, "finetune.shuffle", &[epoch as u64]));
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let key = DropoutKey::new(cfg.seed, epoch as u64, b as u64);
            let loss =
                train_step(&mut model, &prepared, train_mix, idx, key, cfg.lr, &mut adam, |p| !frozen || is_head(p))?;
            if loss.is_some_and(|l| !l.is_finite()) {
                return Err(TrainError::NonFiniteLoss { epoch: epoch + 1, batch: b + 1 }.into());
            }
        }
        let mut metrics = BTreeMap::new();
        for split in [Split::Val, Split::Test] {
            let idx = mix.splits.get(split);
            let mut out = predict(&model, &prepared, idx, cfg.batch_size)?;
            let (task, labels) = batch_labels(mix, idx).pop_first().expect("one task");
            let pred = out.remove(&task).ok_or(TrainError::MissingOutput(task))?;
            metrics.insert(split, task_metrics(TaskLevel::Graph, &scaler.inverse(&pred), &labels));
        }
        run.checksums.push(model.params.checksum(|p| !is_head(p)));
        run.snapshots.push(model.params.clone());
        run.epochs.push(EpochMetrics {
            val: metrics.remove(&Split::Val).unwrap(),
            test: metrics.remove(&Split::Test).unwrap(),
        });
    }
    Ok(run)
}

/// Finetunes one trimmed copy of `model` per seed on the graph-level `task`
/// of `mix` and reports every seed at the epoch whose seed-averaged
/// validation metric is best. The first `freeze_epochs` epochs update only
/// the new head.
pub fn finetune_seeds(
    model: &ModelState,
    mix: &DatasetMix,
    task: &str,
    cfg: &FinetuneConfig,
    seeds: &[u64],
) -> Result<Vec<(u64, FinetuneResult)>, TransferError> {
    cfg.validate()?;
    let table = find_task(mix, task)?;
    for split in [Split::Train, Split::Val, Split::Test] {
        if mix.splits.get(split).is_empty() {
            return Err(TrainError::EmptySplit(split.name()).into());
        }
    }
    let mix = DatasetMix { molecules: mix.molecules.clone(), tasks: vec![table.clone()], splits: mix.splits.clone() };
    let scaler = TargetScaler::fit(table, &mix.splits.train);
    let train_mix =
        DatasetMix { molecules: vec![], tasks: vec![scaler.forward_table(table)], splits: mix.splits.clone() };
    let mut runs = Vec::new();
    for &seed in seeds {
        let run_cfg = FinetuneConfig { seed, ..cfg.clone() };
        let start = trim_for_finetune(model, &run_cfg, task, table.columns)?;
        let run = run_finetune(&start, &mix, &train_mix, &scaler, &run_cfg)?;
        runs.push((seed, start, run));
    }
    let (metric, polarity) = primary_metric(table.kind);
    let curves: Vec<Vec<Option<f64>>> =
        runs.iter().map(|(_, _, r)| r.epochs.iter().map(|m| m.val.get(metric).copied().flatten()).collect()).collect();
    let best_epoch = select_epoch(&curves, polarity);
    Ok(runs
        .into_iter()
        .map(|(seed, mut model, mut run)| {
            model.params = run.snapshots.swap_remove(best_epoch - 1);
            let test_metrics = run.epochs[best_epoch - 1].test.clone();
            (
                seed,
                FinetuneResult { model, best_epoch, test_metrics, epochs: run.epochs, base_checksums: run.checksums },
            )
        })
        .collect())
}

/// Single-seed [`finetune_seeds`] with `cfg.seed`.
pub fn finetune(
    model: &ModelState,
    mix: &DatasetMix,
    task: &str,
    cfg: &FinetuneConfig,
) -> Result<FinetuneResult, TransferError> {
    Ok(finetune_seeds(model, mix, task, cfg, &[cfg.seed])?.remove(0).1)
}
