//! `datagen`, `pretrain`, `fingerprint`, `probe` and `finetune`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use gnn_lab::analysis::mean_std;
use gnn_lab::molgraph::{
    generate_downstream_mix, generate_synthetic_mix, load_dataset, save_dataset, DatasetMix, Split, TaskLevel,
};
use gnn_lab::train::{load_checkpoint, save_checkpoint};
use gnn_lab::transfer::{
    concat_fingerprints, extract_fingerprints, finetune_seeds, planted_linear_task, probe_seeds, read_cache,
    read_cache_dir, with_tasks, write_cache_dir, FinetuneConfig, FingerprintSet, ProbeConfig,
};
use serde::Serialize;

use crate::config::{load_toml, DataKind, DatagenConfig, PretrainConfig};
use crate::error::CliError;
use crate::run::{execute, hash_dir, Finished, RunPlan};
use crate::table::{opt, write_csv};

pub fn require(path: &Path, what: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::usage(format!("{what} not found: {}", path.display())))
    }
}

pub fn read_data(dir: &Path) -> Result<DatasetMix, CliError> {
    require(&dir.join("graphs.jsonl"), "dataset")?;
    Ok(load_dataset(dir)?)
}

/// Generates a dataset into `out`; without a config file the default settings
/// with `seed` are used.
pub fn datagen(config: Option<&Path>, seed: u64, out: &Path) -> Result<DatasetMix, CliError> {
    let cfg = match config {
        Some(p) => DatagenConfig::load(p)?,
        None => {
            DatagenConfig { kind: DataKind::Pretrain, settings: gnn_lab::molgraph::GeneratorSettings::with_seed(seed) }
        }
    };
    let mix = match cfg.kind {
        DataKind::Pretrain => generate_synthetic_mix(&cfg.settings)?,
        DataKind::Downstream => generate_downstream_mix(&cfg.settings)?,
    };
    save_dataset(&mix, out)?;
    Ok(mix)
}

/// One pretraining run into `out`.
pub fn pretrain(data: &Path, config: &Path, seed: u64, out: &Path) -> Result<Finished, CliError> {
    let cfg: PretrainConfig = load_toml(config)?;
    let mix = read_data(data)?;
    let plan = RunPlan {
        spec: cfg.network.spec(cfg.arch, cfg.width, cfg.depth)?,
        train: cfg.train.resolve(cfg.arch, seed),
        ablation: cfg.ablation,
        molecule_fraction: cfg.molecule_fraction,
        label_fraction: cfg.label_fraction,
    };
    plan.train.validate()?;
    execute(&mix, hash_dir(data)?, &plan, out, false)
}

fn model_id(checkpoint: &Path) -> String {
    let stem = checkpoint.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    match checkpoint.parent().and_then(Path::file_name).and_then(|s| s.to_str()) {
        Some(parent) if stem == "model" => parent.to_owned(),
        _ => stem.to_owned(),
    }
}

pub struct FingerprintArgs<'a> {
    pub checkpoint: &'a Path,
    pub data: &'a Path,
    pub taps: &'a [String],
    pub model_id: Option<&'a str>,
    /// Also write `<out>/planted`: the data plus a planted linear regression
    /// task of this name over the first tap.
    pub plant: Option<&'a str>,
}

/// Writes one cache per tap and `fingerprints.json` into `out`.
pub fn fingerprint(args: &FingerprintArgs<'_>, seed: u64, out: &Path) -> Result<Vec<FingerprintSet>, CliError> {
    require(args.checkpoint, "checkpoint")?;
    let model = load_checkpoint(args.checkpoint)?;
    let mix = read_data(args.data)?;
    let id = args.model_id.map_or_else(|| model_id(args.checkpoint), str::to_owned);
    let taps: Vec<&str> =
        if args.taps.is_empty() { vec!["graph_output_nn"] } else { args.taps.iter().map(String::as_str).collect() };
    let sets = extract_fingerprints(&model, &mix, &taps, &id)?;
    write_cache_dir(&sets, out)?;
    if let Some(name) = args.plant {
        if mix.tasks.iter().any(|t| t.name == name) {
            return Err(CliError::usage(format!("the data already has a task `{name}`")));
        }
        let mut tasks = mix.tasks.clone();
        tasks.push(planted_linear_task(name, &sets[0], mix.molecules.len(), seed)?);
        save_dataset(&with_tasks(&mix, tasks)?, &out.join("planted"))?;
    }
    Ok(sets)
}

/// Fingerprint sets from a cache directory or a single `.mfpc` file.
pub fn read_sets(path: &Path) -> Result<Vec<FingerprintSet>, CliError> {
    require(path, "fingerprint cache")?;
    if path.is_dir() {
        Ok(read_cache_dir(path)?)
    } else {
        let mut s = read_cache(path)?;
        s.tap = path.file_stem().and_then(|s| s.to_str()).unwrap_or("cache").to_owned();
        Ok(vec![s])
    }
}

pub struct ProbeArgs<'a> {
    pub data: &'a Path,
    /// Each set in each cache is probed on its own.
    pub fingerprints: &'a [PathBuf],
    /// All sets of these caches are concatenated into one input.
    pub concat: &'a [PathBuf],
    pub tasks: &'a [String],
    pub config: Option<&'a Path>,
    pub seeds: &'a [u64],
}

pub const PROBE_HEADER: [&str; 6] = ["input", "task", "seed", "best_epoch", "metric", "value"];
pub const PROBE_SUMMARY_HEADER: [&str; 7] = ["input", "task", "metric", "mean", "std", "seeds", "best_epoch"];

fn graph_tasks(mix: &DatasetMix) -> Vec<String> {
    mix.tasks.iter().filter(|t| t.level == TaskLevel::Graph).map(|t| t.name.clone()).collect()
}

/// Probes every input on every task; writes `probe.csv` (one row per seed
/// and metric) and `probe_summary.csv` (seed mean and spread).
pub fn probe(args: &ProbeArgs<'_>, out: &Path) -> Result<(), CliError> {
    if args.fingerprints.is_empty() && args.concat.is_empty() {
        return Err(CliError::usage("probe needs --fingerprints or --concat"));
    }
    let cfg: ProbeConfig = match args.config {
        Some(p) => load_toml(p)?,
        None => ProbeConfig::default(),
    };
    cfg.validate()?;
    let mix = read_data(args.data)?;
    let mut inputs: Vec<(String, FingerprintSet)> = Vec::new();
    for path in args.fingerprints {
        for s in read_sets(path)? {
            inputs.push((format!("{}:{}", s.source_model_id, s.tap), s));
        }
    }
    fs::create_dir_all(out)?;
    if !args.concat.is_empty() {
        let mut parts = Vec::new();
        for path in args.concat {
            parts.extend(read_sets(path)?);
        }
        let refs: Vec<&FingerprintSet> = parts.iter().collect();
        let mut joined = concat_fingerprints(&refs)?;
        joined.tap = "concat".into();
        write_cache_dir(std::slice::from_ref(&joined), &out.join("concat"))?;
        inputs.push((format!("concat:{}", joined.source_model_id), joined));
    }
    let tasks = if args.tasks.is_empty() { graph_tasks(&mix) } else { args.tasks.to_vec() };
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for (label, set) in &inputs {
        for task in &tasks {
            let r = probe_seeds(set, &mix, task, &cfg, args.seeds)?;
            let mut per_metric: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
            for (seed, run) in &r.runs {
                for (metric, v) in &run.test_metrics {
                    rows.push(vec![
                        label.clone(),
                        task.clone(),
                        seed.to_string(),
                        run.best_epoch.to_string(),
                        metric.clone(),
                        opt(*v),
                    ]);
                    let slot = per_metric.entry(metric).or_default();
                    if let Some(v) = v.filter(|v| v.is_finite()) {
                        slot.push(v);
                    }
                }
            }
            for (metric, v) in per_metric {
                let (mean, std) = if v.is_empty() {
                    (None, None)
                } else {
                    let (m, s) = mean_std(&v);
                    (Some(m), Some(s))
                };
                summary.push(vec![
                    label.clone(),
                    task.clone(),
                    metric.to_owned(),
                    opt(mean),
                    opt(std),
                    v.len().to_string(),
                    r.best_epoch.to_string(),
                ]);
            }
        }
    }
    write_csv(&out.join("probe.csv"), &PROBE_HEADER, rows)?;
    write_csv(&out.join("probe_summary.csv"), &PROBE_SUMMARY_HEADER, summary)
}

pub struct FinetuneArgs<'a> {
    pub checkpoint: &'a Path,
    pub data: &'a Path,
    pub task: &'a str,
    pub module: Option<&'a str>,
    pub config: Option<&'a Path>,
    pub seeds: &'a [u64],
}

#[derive(Serialize)]
struct FinetuneSummary<'a> {
    task: &'a str,
    module: &'a str,
    best_epoch: usize,
    test: BTreeMap<String, &'a BTreeMap<String, Option<f64>>>,
}

pub const FINETUNE_HEADER: [&str; 5] = ["seed", "epoch", "split", "metric", "value"];
pub const CHECKSUM_HEADER: [&str; 3] = ["seed", "epoch", "base_checksum"];

/// Finetunes one copy per seed; writes per-epoch metrics, base-parameter
/// checksums, a summary and each seed's best model.
pub fn finetune(args: &FinetuneArgs<'_>, out: &Path) -> Result<(), CliError> {
    require(args.checkpoint, "checkpoint")?;
    let mut cfg: FinetuneConfig = match args.config {
        Some(p) => load_toml(p)?,
        None => FinetuneConfig::default(),
    };
    if let Some(m) = args.module {
        cfg.finetune_module = m.to_owned();
    }
    let model = load_checkpoint(args.checkpoint)?;
    let mix = read_data(args.data)?;
    let runs = finetune_seeds(&model, &mix, args.task, &cfg, args.seeds)?;
    fs::create_dir_all(out)?;
    let mut rows = Vec::new();
    let mut sums = Vec::new();
    for (seed, r) in &runs {
        for (e, m) in r.epochs.iter().enumerate() {
            for (split, metrics) in [(Split::Val, &m.val), (Split::Test, &m.test)] {
                for (metric, v) in metrics {
                    rows.push(vec![
                        seed.to_string(),
                        (e + 1).to_string(),
                        split.name().to_owned(),
                        metric.clone(),
                        opt(*v),
                    ]);
                }
            }
            sums.push(vec![seed.to_string(), (e + 1).to_string(), format!("{:016x}", r.base_checksums[e])]);
        }
        save_checkpoint(&r.model, &out.join(format!("seed{seed}.ckpt")))?;
    }
    write_csv(&out.join("finetune.csv"), &FINETUNE_HEADER, rows)?;
    write_csv(&out.join("checksums.csv"), &CHECKSUM_HEADER, sums)?;
    let summary = FinetuneSummary {
        task: args.task,
        module: &cfg.finetune_module,
        best_epoch: runs.first().map_or(0, |(_, r)| r.best_epoch),
        test: runs.iter().map(|(s, r)| (s.to_string(), &r.test_metrics)).collect(),
    };
    fs::write(out.join("finetune.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(())
}
