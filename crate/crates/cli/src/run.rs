//! One pretraining run in its own directory, skipped when a finished run
//! with the same config hash is already there.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use gnn_lab::arch::NetworkSpec;
use gnn_lab::molgraph::{ablate_dataset, subsample, DatasetMix};
use gnn_lab::nn::rng::fnv1a;
use gnn_lab::train::{pretrain, save_checkpoint, MetricMap, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const CHECKPOINT: &str = "model.ckpt";
pub const HISTORY: &str = "history.csv";
pub const METRICS: &str = "metrics.json";
pub const RUN_INFO: &str = "run.json";

/// Removes tasks from `mix`. `none` keeps everything; otherwise `ablation` is
/// a `+`-separated list of task-name prefixes, each of which must match at
/// least one task.
pub fn ablate(mix: &DatasetMix, ablation: &str) -> Result<DatasetMix, CliError> {
    if ablation == "none" {
        return Ok(mix.clone());
    }
    let mut out = mix.clone();
    for prefix in ablation.split('+') {
        let names: Vec<String> = out
            .tasks
            .iter()
            .filter(|t| !prefix.is_empty() && t.name.starts_with(prefix))
            .map(|t| t.name.clone())
            .collect();
        if names.is_empty() {
            let all: Vec<&str> = mix.tasks.iter().map(|t| t.name.as_str()).collect();
            return Err(CliError::usage(format!("ablation `{prefix}` matches no task; tasks: {}", all.join(", "))));
        }
        for n in names {
            out = ablate_dataset(&out, &n)?;
        }
    }
    Ok(out)
}

/// Everything that determines a run's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunPlan {
    /// Network without task heads; they follow the (ablated) data.
    pub spec: NetworkSpec,
    pub train: TrainConfig,
    pub ablation: String,
    pub molecule_fraction: f64,
    pub label_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RunInfo {
    config_hash: String,
    data_hash: String,
    plan: RunPlan,
}

/// Written to `metrics.json` once the run has finished.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub parameters: usize,
    pub train_molecules: usize,
    /// Final-epoch test metrics, task → metric → value.
    pub test: MetricMap,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Finished {
    pub dir: PathBuf,
    pub outcome: RunOutcome,
    pub reused: bool,
}

/// FNV-1a over every file of a dataset directory, names included, in name
/// order.
pub fn hash_dir(dir: &Path) -> Result<u64, CliError> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
    names.retain(|p| p.is_file());
    names.sort();
    let mut bytes = Vec::new();
    for p in names {
        bytes.extend_from_slice(p.file_name().unwrap_or_default().as_encoded_bytes());
        bytes.push(0);
        bytes.extend(fs::read(&p)?);
    }
    Ok(fnv1a(&bytes))
}

fn config_hash(plan: &RunPlan, data_hash: u64) -> Result<u64, CliError> {
    let text = serde_json::to_string(&(plan, data_hash))?;
    Ok(fnv1a(text.as_bytes()))
}

/// The training data of a run: ablated, then sub-sampled with the run seed.
pub fn run_data(mix: &DatasetMix, plan: &RunPlan) -> Result<DatasetMix, CliError> {
    let ablated = ablate(mix, &plan.ablation)?;
    if plan.molecule_fraction == 1.0 && plan.label_fraction == 1.0 {
        return Ok(ablated);
    }
    Ok(subsample(&ablated, plan.molecule_fraction, plan.label_fraction, plan.train.seed)?)
}

fn reusable(dir: &Path, hash: u64) -> Option<RunOutcome> {
    if !dir.join(CHECKPOINT).is_file() {
        return None;
    }
    let info: RunInfo = serde_json::from_str(&fs::read_to_string(dir.join(RUN_INFO)).ok()?).ok()?;
    if info.config_hash != format!("{hash:016x}") {
        return None;
    }
    serde_json::from_str(&fs::read_to_string(dir.join(METRICS)).ok()?).ok()
}

/// Trains `plan` on `mix` into `dir`. With `resume`, a directory holding a
/// checkpoint and a matching config hash is reused as is.
pub fn execute(
    mix: &DatasetMix,
    data_hash: u64,
    plan: &RunPlan,
    dir: &Path,
    resume: bool,
) -> Result<Finished, CliError> {
    let hash = config_hash(plan, data_hash)?;
    if resume {
        if let Some(outcome) = reusable(dir, hash) {
            return Ok(Finished { dir: dir.to_owned(), outcome, reused: true });
        }
    }
    let data = run_data(mix, plan)?;
    let spec = plan.spec.clone().with_heads_for(&data);
    let (model, history) = pretrain(&spec, &data, &plan.train)?;
    let mut test: MetricMap = BTreeMap::new();
    if let Some(last) = history.last() {
        for (key, v) in &last.metrics {
            let mut parts = key.splitn(3, '.');
            if let (Some("test"), Some(task), Some(metric)) = (parts.next(), parts.next(), parts.next()) {
                test.entry(task.to_owned()).or_default().insert(metric.to_owned(), *v);
            }
        }
    }
    let outcome = RunOutcome { parameters: model.parameter_count(), train_molecules: data.splits.train.len(), test };

    fs::create_dir_all(dir)?;
    // The run record goes last so an interrupted write is never reused.
    let _ = fs::remove_file(dir.join(RUN_INFO));
    history.write_csv(&dir.join(HISTORY))?;
    fs::write(dir.join(METRICS), serde_json::to_string_pretty(&outcome)? + "\n")?;
    save_checkpoint(&model, &dir.join(CHECKPOINT))?;
    let info =
        RunInfo { config_hash: format!("{hash:016x}"), data_hash: format!("{data_hash:016x}"), plan: plan.clone() };
    fs::write(dir.join(RUN_INFO), serde_json::to_string_pretty(&info)? + "\n")?;
    Ok(Finished { dir: dir.to_owned(), outcome, reused: false })
}
