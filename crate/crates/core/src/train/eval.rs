use std::collections::BTreeMap;

use super::{batch_labels, prepare_molecules, TaskLabels, TrainError};
use crate::analysis::{auprc, auroc, mae, pearson, spearman, MetricError};
use crate::arch::{Batch, ModelState, PreparedMolecule};
use crate::molgraph::{DatasetMix, Split, TaskKind, TaskLevel};
use crate::nn::rng::DropoutKey;
use crate::nn::{Mode, Tensor};

/// Task → metric → value; `None` marks a metric undefined on the split.
pub type MetricMap = BTreeMap<String, BTreeMap<String, Option<f64>>>;

/// Eval-mode outputs for the molecules `idx`, rows in `idx` order.
pub fn predict(
    model: &ModelState,
    prepared: &[PreparedMolecule],
    idx: &[usize],
    batch_size: usize,
) -> Result<BTreeMap<String, Tensor>, TrainError> {
    let mut parts: BTreeMap<String, Vec<Tensor>> = BTreeMap::new();
    for chunk in idx.chunks(batch_size.max(1)) {
        let mols: Vec<&PreparedMolecule> = chunk.iter().map(|&i| &prepared[i]).collect();
        let batch = Batch::new(&mols, model.spec.n_heads);
        let out = model.forward(&batch, Mode::Eval, DropoutKey::new(0, 0, 0), &[])?;
        for (k, v) in out.outputs {
            parts.entry(k).or_default().push(v);
        }
    }
    Ok(parts.into_iter().map(|(k, v)| (k, Tensor::vcat(&v.iter().collect::<Vec<_>>()))).collect())
}

fn mean_defined(values: impl Iterator<Item = Result<f64, MetricError>>) -> Option<f64> {
    let ok: Vec<f64> = values.filter_map(Result::ok).collect();
    (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64)
}

/// Metrics of one task: each is computed per label column over unmasked
/// entries and averaged over the columns where it is defined.
///
/// Classification reports `auroc` and `auprc` (scores are logits); graph
/// regression `mae`, `pearson` and `spearman`; node regression `mae`.
pub fn task_metrics(level: TaskLevel, pred: &Tensor, labels: &TaskLabels) -> BTreeMap<String, Option<f64>> {
    let cols = labels.columns;
    let column = |c: usize| -> (Vec<f64>, Vec<f64>) {
        (0..labels.rows())
            .filter(|&r| labels.mask[r * cols + c])
            .map(|r| (pred.get(r, c), labels.targets[r * cols + c]))
            .unzip()
    };
    let metric = |f: fn(&[f64], &[f64]) -> Result<f64, MetricError>| {
        mean_defined((0..cols).map(|c| {
            let (p, y) = column(c);
            if p.is_empty() {
                Err(MetricError::Undefined("no labels"))
            } else {
                f(&p, &y)
            }
        }))
    };
    let mut out = BTreeMap::new();
    match (labels.kind, level) {
        (TaskKind::Classification, _) => {
            out.insert("auroc".to_owned(), metric(auroc));
            out.insert("auprc".to_owned(), metric(auprc));
        }
        (TaskKind::Regression, TaskLevel::Graph) => {
            out.insert("mae".to_owned(), metric(mae));
            out.insert("pearson".to_owned(), metric(pearson));
            out.insert("spearman".to_owned(), metric(spearman));
        }
        (TaskKind::Regression, TaskLevel::Node) => {
            out.insert("mae".to_owned(), metric(mae));
        }
    }
    out
}

/// Per-task metrics on `split`, using molecules already prepared for the
/// model's encodings.
pub fn evaluate_prepared(
    model: &ModelState,
    prepared: &[PreparedMolecule],
    mix: &DatasetMix,
    split: Split,
    batch_size: usize,
) -> Result<MetricMap, TrainError> {
    let idx = mix.splits.get(split);
    if idx.is_empty() {
        return Err(TrainError::EmptySplit(split.name()));
    }
    let preds = predict(model, prepared, idx, batch_size)?;
    let labels = batch_labels(mix, idx);
    let mut out = MetricMap::new();
    for t in &mix.tasks {
        let pred = preds.get(&t.name).ok_or_else(|| TrainError::MissingOutput(t.name.clone()))?;
        out.insert(t.name.clone(), task_metrics(t.level, pred, &labels[&t.name]));
    }
    Ok(out)
}

pub fn evaluate(model: &ModelState, mix: &DatasetMix, split: Split) -> Result<MetricMap, TrainError> {
    let prepared = prepare_molecules(mix, &model.spec.pse)?;
    evaluate_prepared(model, &prepared, mix, split, 256)
}
