//! The sweep grid: one isolated run per point and seed, run in a bounded
//! pool and aggregated in grid order.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use gnn_lab::analysis::{mean_std, write_scaling, Polarity, ScaleVariable, ScalingRecord};
use gnn_lab::arch::ArchKind;
use gnn_lab::molgraph::{generate_synthetic_mix, load_dataset, save_dataset};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentManifest;
use crate::error::CliError;
use crate::run::{execute, hash_dir, Finished, RunPlan};
use crate::table::write_csv;

pub const SCALING: &str = "scaling.csv";
pub const ABLATION: &str = "ablation.csv";
pub const FAILURES: &str = "failures.json";
pub const RUNS_DIR: &str = "runs";

/// Regression errors are lower-is-better, every other metric higher.
pub fn metric_polarity(metric: &str) -> Polarity {
    if metric == "mae" {
        Polarity::Lower
    } else {
        Polarity::Higher
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub id: String,
    pub arch: ArchKind,
    pub width: usize,
    pub depth: usize,
    pub molecule_fraction: f64,
    pub label_fraction: f64,
    pub ablation: String,
    pub seed: u64,
}

/// Every (arch, width, depth, molecule fraction, label fraction, ablation,
/// seed) combination in manifest order.
pub fn grid(m: &ExperimentManifest) -> Result<Vec<SweepPoint>, CliError> {
    let mut points = Vec::new();
    for &arch in &m.arch_kinds {
        for &width in &m.widths {
            for &depth in &m.depths {
                for &mf in &m.molecule_fractions {
                    for &lf in &m.label_fractions {
                        for ablation in &m.dataset_ablations {
                            for &seed in &m.seeds {
                                points.push(SweepPoint {
                                    id: format!("{arch}_w{width}_d{depth}_m{mf}_l{lf}_{ablation}_s{seed}"),
                                    arch,
                                    width,
                                    depth,
                                    molecule_fraction: mf,
                                    label_fraction: lf,
                                    ablation: ablation.clone(),
                                    seed,
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    let mut seen = BTreeSet::new();
    if let Some(p) = points.iter().find(|p| !seen.insert(p.id.clone())) {
        return Err(CliError::usage(format!("manifest repeats grid point `{}`", p.id)));
    }
    Ok(points)
}

fn plan(m: &ExperimentManifest, p: &SweepPoint) -> Result<RunPlan, CliError> {
    Ok(RunPlan {
        spec: m.network.spec(p.arch, p.width, p.depth)?,
        train: m.train.resolve(p.arch, p.seed),
        ablation: p.ablation.clone(),
        molecule_fraction: p.molecule_fraction,
        label_fraction: p.label_fraction,
    })
}

fn scale_value(var: ScaleVariable, p: &SweepPoint, f: &Finished) -> f64 {
    match var {
        ScaleVariable::Width => p.width as f64,
        ScaleVariable::Depth => p.depth as f64,
        ScaleVariable::Molecules => f.outcome.train_molecules as f64,
        ScaleVariable::Labels => p.label_fraction,
        ScaleVariable::Params => f.outcome.parameters as f64,
    }
}

/// Result of a finished sweep.
#[derive(Clone, Debug)]
pub struct SweepReport {
    pub out: PathBuf,
    pub points: Vec<SweepPoint>,
    pub records: Vec<ScalingRecord>,
    pub reused: usize,
    pub failures: Vec<(String, String)>,
}

/// Runs the manifest grid under `out` with at most `jobs` runs at a time.
/// `base` resolves a relative `data` path.
pub fn run_sweep(m: &ExperimentManifest, base: &Path, out: &Path, jobs: usize) -> Result<SweepReport, CliError> {
    m.validate()?;
    fs::create_dir_all(out)
        .map_err(|e| CliError::usage(format!("output directory {} is not writable: {e}", out.display())))?;
    let data_dir = match (&m.data, &m.generator) {
        (Some(d), _) => base.join(d),
        (None, Some(g)) => {
            let dir = out.join("data");
            save_dataset(&generate_synthetic_mix(g)?, &dir)?;
            dir
        }
        (None, None) => unreachable!("validated"),
    };
    if !data_dir.join("graphs.jsonl").is_file() {
        return Err(CliError::usage(format!("no dataset at {}", data_dir.display())));
    }
    let mix = load_dataset(&data_dir)?;
    let data_hash = hash_dir(&data_dir)?;
    let points = grid(m)?;
    let plans = points.iter().map(|p| plan(m, p)).collect::<Result<Vec<_>, _>>()?;
    for p in &plans {
        p.train.validate()?;
        crate::run::ablate(&mix, &p.ablation)?;
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::runtime(format!("worker pool: {e}")))?;
    let total = points.len();
    let results: Vec<Result<Finished, CliError>> = pool.install(|| {
        points
            .par_iter()
            .zip(&plans)
            .map(|(p, plan)| {
                let r = execute(&mix, data_hash, plan, &out.join(RUNS_DIR).join(&p.id), true);
                match &r {
                    Ok(f) if f.reused => eprintln!("sweep: {} reused", p.id),
                    Ok(_) => eprintln!("sweep: {} trained", p.id),
                    Err(e) => eprintln!("sweep: {} failed: {e}", p.id),
                }
                r
            })
            .collect()
    });

    let var = m.resolved_scale_variable();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut reused = 0;
    let mut finished = Vec::new();
    for (p, r) in points.iter().zip(results) {
        match r {
            Ok(f) => {
                reused += usize::from(f.reused);
                for (task, metrics) in &f.outcome.test {
                    for (metric, v) in metrics {
                        let Some(value) = v.filter(|v| v.is_finite()) else {
                            continue;
                        };
                        records.push(ScalingRecord {
                            arch: p.arch,
                            scale_variable: var,
                            scale_value: scale_value(var, p, &f),
                            task: task.clone(),
                            metric: metric.clone(),
                            value,
                            polarity: metric_polarity(metric),
                            seed: p.seed,
                        });
                    }
                }
                finished.push((p, f));
            }
            Err(e) => failures.push((p.id.clone(), e.to_string())),
        }
    }
    write_scaling(&out.join(SCALING), &records)?;
    if m.dataset_ablations.len() > 1 {
        write_ablation_table(&out.join(ABLATION), &finished)?;
    }
    let failure_path = out.join(FAILURES);
    if failures.is_empty() {
        let _ = fs::remove_file(&failure_path);
    } else {
        let list: Vec<BTreeMap<&str, &str>> =
            failures.iter().map(|(id, e)| BTreeMap::from([("run", id.as_str()), ("error", e.as_str())])).collect();
        fs::write(&failure_path, serde_json::to_string_pretty(&list)? + "\n")?;
    }
    eprintln!("sweep: {} runs, {} reused, {} failed", total, reused, failures.len());
    Ok(SweepReport { out: out.to_owned(), points, records, reused, failures })
}

pub const ABLATION_HEADER: [&str; 11] = [
    "arch",
    "width",
    "depth",
    "molecule_fraction",
    "label_fraction",
    "ablation",
    "task",
    "metric",
    "mean",
    "std",
    "seeds",
];

/// Seed mean and spread of every test metric per grid point, one block per
/// ablation.
fn write_ablation_table(path: &Path, finished: &[(&SweepPoint, Finished)]) -> Result<(), CliError> {
    type Key = (String, String, String, String, String, String, String, String);
    let mut order: Vec<Key> = Vec::new();
    let mut values: BTreeMap<Key, Vec<f64>> = BTreeMap::new();
    for (p, f) in finished {
        for (task, metrics) in &f.outcome.test {
            for (metric, v) in metrics {
                let key = (
                    p.arch.to_string(),
                    p.width.to_string(),
                    p.depth.to_string(),
                    p.molecule_fraction.to_string(),
                    p.label_fraction.to_string(),
                    p.ablation.clone(),
                    task.clone(),
                    metric.clone(),
                );
                if !values.contains_key(&key) {
                    order.push(key.clone());
                }
                let slot = values.entry(key).or_default();
                if let Some(v) = v.filter(|v| v.is_finite()) {
                    slot.push(v);
                }
            }
        }
    }
    let rows = order.into_iter().map(|k| {
        let v = &values[&k];
        let (mean, std) = if v.is_empty() {
            ("NA".into(), "NA".into())
        } else {
            let (m, s) = mean_std(v);
            (m.to_string(), s.to_string())
        };
        vec![k.0, k.1, k.2, k.3, k.4, k.5, k.6, k.7, mean, std, v.len().to_string()]
    });
    write_csv(path, &ABLATION_HEADER, rows)
}
