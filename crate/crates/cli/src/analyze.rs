//! `analyze`: summary matrix, rank trends and power-law fits from
//! `scaling.csv`, and standardized scores from `scores.csv`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use gnn_lab::analysis::{
    fit_power_law, read_scaling, read_scores, scaling_spearman, standardized_scores, sweep_summary, write_fits,
    write_summary, AnalysisError, Polarity, PowerLawFit, ScaleVariable, ScalingRecord, ScoreTable,
};
use gnn_lab::arch::ArchKind;

use crate::error::CliError;
use crate::table::{opt, write_csv};

pub const TRENDS_HEADER: [&str; 5] = ["arch", "scale_variable", "task", "metric", "spearman"];
pub const MEANS_HEADER: [&str; 5] = ["arch", "scale_variable", "scale_value", "seed", "standardized_mean"];

/// Task label of the all-task standardized-mean trend rows.
pub const ALL_TASKS: &str = "*";

pub struct AnalyzeArgs<'a> {
    pub scaling: Option<&'a Path>,
    pub scores: Option<&'a Path>,
    /// Critical scale of the fits; each series' largest scale when absent.
    pub critical: Option<f64>,
    /// Axes to fit; every axis present when empty.
    pub fit_axes: &'a [ScaleVariable],
}

fn run_id(r: &ScalingRecord) -> String {
    format!("{}|{:e}|{}", r.arch, r.scale_value, r.seed)
}

/// Per scaling variable, every run's z-scores over all task/metric columns
/// averaged into one number.
pub fn standardized_means(records: &[ScalingRecord]) -> Vec<ScalingRecord> {
    let vars: BTreeSet<ScaleVariable> = records.iter().map(|r| r.scale_variable).collect();
    let mut out = Vec::new();
    for var in vars {
        let group: Vec<&ScalingRecord> = records.iter().filter(|r| r.scale_variable == var).collect();
        let mut table = ScoreTable::new();
        let mut runs: BTreeMap<String, &ScalingRecord> = BTreeMap::new();
        for r in &group {
            // A repeated (run, column) pair replaces the earlier value.
            let _ = table.insert(&run_id(r), &format!("{}|{}", r.task, r.metric), r.value, r.polarity);
            runs.entry(run_id(r)).or_insert(r);
        }
        let std = standardized_scores(&table);
        for (id, r) in runs {
            if let Some(Some(mean)) = std.model_mean.get(&id) {
                out.push(ScalingRecord {
                    arch: r.arch,
                    scale_variable: var,
                    scale_value: r.scale_value,
                    task: ALL_TASKS.into(),
                    metric: "standardized_mean".into(),
                    value: *mean,
                    polarity: Polarity::Higher,
                    seed: r.seed,
                });
            }
        }
    }
    out
}

fn seed_means(records: &[&ScalingRecord]) -> Vec<(f64, f64)> {
    let mut by: BTreeMap<u64, (f64, f64, usize)> = BTreeMap::new();
    for r in records {
        let e = by.entry(r.scale_value.to_bits()).or_insert((r.scale_value, 0.0, 0));
        e.1 += r.value;
        e.2 += 1;
    }
    let mut pts: Vec<(f64, f64)> = by.into_values().map(|(s, v, n)| (s, v / n as f64)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    pts
}

type Group = (ArchKind, ScaleVariable, String, String);

fn groups(records: &[ScalingRecord]) -> BTreeMap<Group, Vec<&ScalingRecord>> {
    let mut g: BTreeMap<Group, Vec<&ScalingRecord>> = BTreeMap::new();
    for r in records {
        g.entry((r.arch, r.scale_variable, r.task.clone(), r.metric.clone())).or_default().push(r);
    }
    g
}

/// Power-law fits of the seed-averaged raw values per (arch, axis, task,
/// metric), keyed `arch/axis/task/metric`. Series that cannot be fitted
/// (fewer than two scales, non-positive values) are left out.
pub fn fits(records: &[ScalingRecord], axes: &[ScaleVariable], critical: Option<f64>) -> BTreeMap<String, PowerLawFit> {
    let mut out = BTreeMap::new();
    for ((arch, var, task, metric), group) in groups(records) {
        if !axes.is_empty() && !axes.contains(&var) {
            continue;
        }
        let pts = seed_means(&group);
        let c = critical.unwrap_or_else(|| pts.last().map_or(1.0, |p| p.0));
        if let Ok(fit) = fit_power_law(&pts, group[0].polarity, c) {
            out.insert(format!("{arch}/{var}/{task}/{metric}"), fit);
        }
    }
    out
}

/// Writes `summary.csv`, `trends.csv`, `standardized_means.csv` and
/// `fits.json` for a scaling table and `standardized.csv` for a score table.
pub fn analyze(args: &AnalyzeArgs<'_>, out: &Path) -> Result<(), CliError> {
    if args.scaling.is_none() && args.scores.is_none() {
        return Err(CliError::usage("analyze needs --scaling or --scores"));
    }
    if let Some(c) = args.critical {
        if !(c > 0.0 && c.is_finite()) {
            return Err(CliError::usage(format!("--critical must be positive, got {c}")));
        }
    }
    fs::create_dir_all(out)?;
    if let Some(path) = args.scaling {
        crate::commands::require(path, "scaling table")?;
        let records = read_scaling(path).map_err(|e| CliError::from(e).context(path.display()))?;
        let cells = match sweep_summary(&records) {
            Ok(cells) => cells,
            Err(AnalysisError::Insufficient(why)) => {
                eprintln!("analyze: no summary matrix: {why}");
                Vec::new()
            }
            Err(e) => return Err(e.into()),
        };
        write_summary(&out.join("summary.csv"), &cells)?;

        let means = standardized_means(&records);
        write_csv(
            &out.join("standardized_means.csv"),
            &MEANS_HEADER,
            means.iter().map(|r| {
                vec![
                    r.arch.to_string(),
                    r.scale_variable.to_string(),
                    r.scale_value.to_string(),
                    r.seed.to_string(),
                    r.value.to_string(),
                ]
            }),
        )?;
        let mut trends = Vec::new();
        for ((arch, var, task, metric), group) in groups(&records).into_iter().chain(groups(&means)) {
            let owned: Vec<ScalingRecord> = group.into_iter().cloned().collect();
            let rho = scaling_spearman(&owned).ok().filter(|v| v.is_finite());
            trends.push(vec![arch.to_string(), var.to_string(), task, metric, opt(rho)]);
        }
        write_csv(&out.join("trends.csv"), &TRENDS_HEADER, trends)?;
        write_fits(&out.join("fits.json"), &fits(&records, args.fit_axes, args.critical))?;
    }
    if let Some(path) = args.scores {
        crate::commands::require(path, "score table")?;
        let rows = read_scores(path).map_err(|e| CliError::from(e).context(path.display()))?;
        let std = standardized_scores(&ScoreTable::from_rows(&rows)?);
        let mut out_rows = Vec::new();
        for (model, z) in &std.z {
            for (column, v) in z {
                out_rows.push(vec![model.clone(), column.clone(), v.to_string()]);
            }
            let mean = std.model_mean.get(model).copied().flatten();
            out_rows.push(vec![model.clone(), ALL_TASKS.to_owned(), opt(mean)]);
        }
        write_csv(&out.join("standardized.csv"), &["model", "column", "z"], out_rows)?;
    }
    Ok(())
}
