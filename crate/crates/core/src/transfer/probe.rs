use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{molecule_id, FingerprintSet, TransferError};
use crate::analysis::{mean_std, Polarity};
use crate::molgraph::{DatasetMix, Split, TaskKind, TaskLevel, TaskTable};
use crate::nn::rng::stream;
use crate::nn::{adam_step, AdamConfig, AdamState, Param, ParamStore, Tape, Tensor};
use crate::train::{batch_labels, task_metrics, TaskLabels};

fn d_hidden() -> usize {
    128
}
fn d_epochs() -> usize {
    30
}
fn d_batch() -> usize {
    128
}
fn d_lr() -> f64 {
    1e-4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    #[serde(default = "d_hidden")]
    pub hidden_dim: usize,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { hidden_dim: d_hidden(), epochs: d_epochs(), batch_size: d_batch(), lr: d_lr(), seed: 0 }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<(), TransferError> {
        if self.hidden_dim == 0 || self.epochs == 0 || self.batch_size == 0 || self.lr.is_nan() || self.lr <= 0.0 {
            return Err(TransferError::Config("probe hidden_dim, epochs, batch_size and lr must be positive".into()));
        }
        Ok(())
    }
}

/// The metric used to pick the best epoch: AUROC for classification, MAE
/// for regression.
pub fn primary_metric(kind: TaskKind) -> (&'static str, Polarity) {
    match kind {
        TaskKind::Classification => ("auroc", Polarity::Higher),
        TaskKind::Regression => ("mae", Polarity::Lower),
    }
}

/// Validation-optimal epoch of a validation curve averaged over runs;
/// undefined entries are left out of the average. Ties go to the earliest
/// epoch. Returns a 1-based epoch.
pub(crate) fn select_epoch(curves: &[Vec<Option<f64>>], polarity: Polarity) -> usize {
    let epochs = curves.iter().map(Vec::len).min().unwrap_or(0);
    let mut best = (1, f64::NEG_INFINITY);
    for e in 0..epochs {
        let vals: Vec<f64> = curves.iter().filter_map(|c| c[e]).collect();
        if vals.is_empty() {
            continue;
        }
        let score = polarity.sign() * vals.iter().sum::<f64>() / vals.len() as f64;
        if score > best.1 {
            best = (e + 1, score);
        }
    }
    best.0
}

/// Per-column affine map of regression targets to zero mean, unit spread
/// over the train split. Classification targets pass through.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct TargetScaler {
    shift: Vec<f64>,
    scale: Vec<f64>,
}

impl TargetScaler {
    pub(crate) fn fit(task: &TaskTable, train: &[usize]) -> Self {
        let c = task.columns;
        if task.kind == TaskKind::Classification {
            return Self { shift: vec![0.0; c], scale: vec![1.0; c] };
        }
        let mut shift = Vec::with_capacity(c);
        let mut scale = Vec::with_capacity(c);
        for col in 0..c {
            let v: Vec<f64> = train
                .iter()
                .flat_map(|&i| {
                    let b = &task.blocks[i];
                    (0..b.values.len() / c).filter(move |r| b.mask[r * c + col]).map(move |r| b.values[r * c + col])
                })
                .collect();
            let (m, s) = if v.is_empty() { (0.0, 1.0) } else { mean_std(&v) };
            shift.push(m);
            scale.push(if s > 0.0 { s } else { 1.0 });
        }
        Self { shift, scale }
    }

    pub(crate) fn forward_table(&self, task: &TaskTable) -> TaskTable {
        let mut t = task.clone();
        let c = t.columns;
        for b in &mut t.blocks {
            for (k, (v, &m)) in b.values.iter_mut().zip(&b.mask).enumerate() {
                if m {
                    *v = (*v - self.shift[k % c]) / self.scale[k % c];
                }
            }
        }
        t
    }

    pub(crate) fn inverse(&self, pred: &Tensor) -> Tensor {
        let mut out = pred.clone();
        let c = out.cols();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            *v = *v * self.scale[k % c] + self.shift[k % c];
        }
        out
    }
}

pub(crate) fn find_task<'a>(mix: &'a DatasetMix, task: &str) -> Result<&'a TaskTable, TransferError> {
    let t = mix.tasks.iter().find(|t| t.name == task).ok_or_else(|| TransferError::UnknownTask(task.to_owned()))?;
    if t.level != TaskLevel::Graph {
        return Err(TransferError::NodeLevelTask(task.to_owned()));
    }
    Ok(t)
}

/// Metrics recorded after one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub val: BTreeMap<String, Option<f64>>,
    pub test: BTreeMap<String, Option<f64>>,
}

/// A trained probing MLP with the train-split standardization of its inputs
/// and targets.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeHead {
    pub params: ParamStore,
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub target_shift: Vec<f64>,
    pub target_scale: Vec<f64>,
}

impl ProbeHead {
    /// Predictions for the molecules `ids`, in target units (logits for
    /// classification).
    pub fn predict(&self, fps: &FingerprintSet, ids: &[String]) -> Result<Tensor, TransferError> {
        if fps.dim != self.input_shift.len() {
            return Err(TransferError::Inconsistent(format!(
                "head expects dim {}, set has {}",
                self.input_shift.len(),
                fps.dim
            )));
        }
        let mut x = Tensor::zeros(&[ids.len(), fps.dim]);
        for (r, id) in ids.iter().enumerate() {
            let v =
                fps.get(id).ok_or_else(|| TransferError::MissingMolecule { id: id.clone(), set: fps.tap.clone() })?;
            for (j, (o, &xv)) in x.row_mut(r).iter_mut().zip(v).enumerate() {
                *o = (xv - self.input_shift[j]) / self.input_scale[j];
            }
        }
        let mut t = Tape::new();
        let y = head_forward(&mut t, &self.params, x)?;
        let scaler = TargetScaler { shift: self.target_shift.clone(), scale: self.target_scale.clone() };
        Ok(scaler.inverse(t.value(y)))
    }

    /// The same function on inputs whose coordinates are reordered so that
    /// new coordinate `j` is old coordinate `perm[j]`.
    pub fn permute_inputs(&self, perm: &[usize]) -> Result<ProbeHead, TransferError> {
        let dim = self.input_shift.len();
        let mut seen = vec![false; dim];
        if perm.len() != dim || perm.iter().any(|&p| p >= dim || std::mem::replace(&mut seen[p], true)) {
            return Err(TransferError::Config(format!("not a permutation of {dim} inputs")));
        }
        let mut params = self.params.clone();
        let w = &mut params.get_mut("probe.layer1.weight").expect("probe head has layer1").value;
        let old = w.clone();
        for (j, &p) in perm.iter().enumerate() {
            w.row_mut(j).copy_from_slice(old.row(p));
        }
        Ok(ProbeHead {
            params,
            input_shift: perm.iter().map(|&p| self.input_shift[p]).collect(),
            input_scale: perm.iter().map(|&p| self.input_scale[p]).collect(),
            target_shift: self.target_shift.clone(),
            target_scale: self.target_scale.clone(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeResult {
    /// Head at the best epoch.
    pub head: ProbeHead,
    /// 1-based
    pub best_epoch: usize,
    pub test_metrics: BTreeMap<String, Option<f64>>,
    pub epochs: Vec<EpochMetrics>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiSeedProbe {
    /// Epoch maximizing the seed-averaged validation metric, 1-based.
    pub best_epoch: usize,
    pub runs: Vec<(u64, ProbeResult)>,
}

struct ProbeData {
    x: Tensor,
    shift: Vec<f64>,
    scale: Vec<f64>,
    rows: BTreeMap<Split, Vec<usize>>,
    labels: BTreeMap<Split, TaskLabels>,
}

fn standardized_inputs(fps: &FingerprintSet, mix: &DatasetMix) -> Result<(Tensor, Vec<f64>, Vec<f64>), TransferError> {
    fps.validate()?;
    let n = mix.molecules.len();
    let mut x = Tensor::zeros(&[n, fps.dim]);
    for i in 0..n {
        let id = molecule_id(i);
        let v = fps.get(&id).ok_or_else(|| TransferError::MissingMolecule { id, set: fps.tap.clone() })?;
        x.row_mut(i).copy_from_slice(v);
    }
    let mut shift = Vec::with_capacity(fps.dim);
    let mut scale = Vec::with_capacity(fps.dim);
    for j in 0..fps.dim {
        let col: Vec<f64> = mix.splits.train.iter().map(|&i| x.get(i, j)).collect();
        let (m, s) = mean_std(&col);
        let s = if s > 0.0 { s } else { 1.0 };
        for i in 0..n {
            x.set(i, j, (x.get(i, j) - m) / s);
        }
        shift.push(m);
        scale.push(s);
    }
    Ok((x, shift, scale))
}

fn head_params(dim: usize, hidden: usize, out: usize, seed: u64) -> ParamStore {
    let mut store = ParamStore::new();
    for (path, fan_in, fan_out) in [("probe.layer1", dim, hidden), ("probe.layer2", hidden, out)] {
        let dist = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("finite std");
        let mut rng = stream(seed, &format!("probe.init.{path}"), &[]);
        let w = (0..fan_in * fan_out).map(|_| dist.sample(&mut rng)).collect();
        store.insert(Param::new(format!("{path}.weight"), Tensor::matrix(fan_in, fan_out, w), 1.0));
        store.insert(Param::new(format!("{path}.bias"), Tensor::zeros(&[fan_out]), 1.0));
    }
    store
}

fn head_forward(t: &mut Tape, store: &ParamStore, x: Tensor) -> Result<crate::nn::Var, TransferError> {
    let x = t.constant(x);
    let w1 = t.param(store, "probe.layer1.weight");
    let b1 = t.param(store, "probe.layer1.bias");
    let h = t.linear(x, w1, b1)?;
    let h = t.relu(h);
    let w2 = t.param(store, "probe.layer2.weight");
    let b2 = t.param(store, "probe.layer2.bias");
    Ok(t.linear(h, w2, b2)?)
}

fn run_probe(
    data: &ProbeData,
    task: &TaskTable,
    scaler: &TargetScaler,
    cfg: &ProbeConfig,
) -> Result<(Vec<ParamStore>, Vec<EpochMetrics>), TransferError> {
    let mut head = head_params(data.x.cols(), cfg.hidden_dim, task.columns, cfg.seed);
    let mut adam = AdamState::new();
    let train = &data.rows[&Split::Train];
    let train_labels = &data.labels[&Split::Train];
    let c = task.columns;
    let mut snapshots = Vec::with_capacity(cfg.epochs);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut stream(cfg.seed, "probe.shuffle", &[epoch as u64]));
        for chunk in order.chunks(cfg.batch_size) {
            let rows: Vec<usize> = chunk.iter().map(|&k| train[k]).collect();
            let pick =
                |src: &[f64]| -> Vec<f64> { chunk.iter().flat_map(|&k| src[k * c..(k + 1) * c].to_vec()).collect() };
            let targets: Arc<[f64]> = pick(&train_labels.targets).into();
            let mask: Arc<[bool]> =
                chunk.iter().flat_map(|&k| train_labels.mask[k * c..(k + 1) * c].to_vec()).collect::<Vec<_>>().into();
            let mut t = Tape::new();
            let y = head_forward(&mut t, &head, data.x.select_rows(&rows))?;
            let loss = match task.kind {
                TaskKind::Classification => t.masked_bce(y, targets, mask),
                TaskKind::Regression => t.masked_mae(y, targets, mask),
            };
            let Some(loss) = loss else { continue };
            let grads = t.backward(loss);
            head.zero_grad();
            grads.accumulate_into(&mut head);
            adam_step(&mut head, &mut adam, cfg.lr, AdamConfig::default(), |_| true)?;
        }
        let mut metrics = BTreeMap::new();
        for split in [Split::Val, Split::Test] {
            let mut t = Tape::new();
            let y = head_forward(&mut t, &head, data.x.select_rows(&data.rows[&split]))?;
            let pred = scaler.inverse(t.value(y));
            metrics.insert(split, task_metrics(TaskLevel::Graph, &pred, &data.labels[&split]));
        }
        snapshots.push(head.clone());
        epochs.push(EpochMetrics {
            val: metrics.remove(&Split::Val).unwrap(),
            test: metrics.remove(&Split::Test).unwrap(),
        });
    }
    Ok((snapshots, epochs))
}

/// Trains one probing head per seed on the train split and reports every
/// seed's test metrics at the epoch whose seed-averaged validation metric is
/// best.
pub fn probe_seeds(
    fps: &FingerprintSet,
    mix: &DatasetMix,
    task: &str,
    cfg: &ProbeConfig,
    seeds: &[u64],
) -> Result<MultiSeedProbe, TransferError> {
    cfg.validate()?;
    let table = find_task(mix, task)?;
    let (x, shift, scale) = standardized_inputs(fps, mix)?;
    let scaler = TargetScaler::fit(table, &mix.splits.train);
    let scaled = scaler.forward_table(table);
    let sub = DatasetMix { molecules: vec![], tasks: vec![scaled], splits: mix.splits.clone() };
    let raw = DatasetMix { molecules: vec![], tasks: vec![table.clone()], splits: mix.splits.clone() };
    let mut rows = BTreeMap::new();
    let mut labels = BTreeMap::new();
    for split in [Split::Train, Split::Val, Split::Test] {
        let idx = mix.splits.get(split).to_vec();
        if idx.is_empty() {
            return Err(TransferError::Train(crate::train::TrainError::EmptySplit(split.name())));
        }
        let source = if split == Split::Train { &sub } else { &raw };
        labels.insert(split, batch_labels(source, &idx).remove(task).unwrap());
        rows.insert(split, idx);
    }
    let data = ProbeData { x, shift, scale, rows, labels };
    let (metric, polarity) = primary_metric(table.kind);
    let mut traces = Vec::new();
    for &seed in seeds {
        let run_cfg = ProbeConfig { seed, ..cfg.clone() };
        traces.push((seed, run_probe(&data, table, &scaler, &run_cfg)?));
    }
    let curves: Vec<Vec<Option<f64>>> =
        traces.iter().map(|(_, (_, e))| e.iter().map(|m| m.val.get(metric).copied().flatten()).collect()).collect();
    let best_epoch = select_epoch(&curves, polarity);
    let runs = traces
        .into_iter()
        .map(|(seed, (mut snaps, epochs))| {
            let test_metrics = epochs[best_epoch - 1].test.clone();
            let head = ProbeHead {
                params: snaps.swap_remove(best_epoch - 1),
                input_shift: data.shift.clone(),
                input_scale: data.scale.clone(),
                target_shift: scaler.shift.clone(),
                target_scale: scaler.scale.clone(),
            };
            (seed, ProbeResult { head, best_epoch, test_metrics, epochs })
        })
        .collect();
    Ok(MultiSeedProbe { best_epoch, runs })
}

/// Single-seed [`probe_seeds`] with `cfg.seed`.
pub fn probe(
    fps: &FingerprintSet,
    mix: &DatasetMix,
    task: &str,
    cfg: &ProbeConfig,
) -> Result<ProbeResult, TransferError> {
    let mut r = probe_seeds(fps, mix, task, cfg, &[cfg.seed])?;
    Ok(r.runs.remove(0).1)
}
