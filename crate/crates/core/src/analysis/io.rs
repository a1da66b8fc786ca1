//! `scores.csv`, `scaling.csv`, `summary.csv` and `fits.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::scaling::{PowerLawFit, ScalingRecord, SummaryCell};
use super::scores::{Polarity, ScoreTable};
use super::AnalysisError;

pub const SCORES_HEADER: [&str; 5] = ["model", "task", "metric", "value", "polarity"];
pub const SCALING_HEADER: [&str; 8] =
    ["arch", "scale_variable", "scale_value", "task", "metric", "value", "polarity", "seed"];
pub const SUMMARY_HEADER: [&str; 6] = ["arch", "scale_variable", "task", "scale_value", "standardized_mean", "trend"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub model: String,
    pub task: String,
    pub metric: String,
    pub value: f64,
    pub polarity: Polarity,
}

impl ScoreTable {
    /// One column per `task/metric`.
    pub fn from_rows(rows: &[ScoreRow]) -> Result<ScoreTable, AnalysisError> {
        let mut t = ScoreTable::new();
        for r in rows {
            t.insert(&r.model, &format!("{}/{}", r.task, r.metric), r.value, r.polarity)?;
        }
        Ok(t)
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> AnalysisError {
    AnalysisError::Io(format!("{}: {e}", path.display()))
}

fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(header).map_err(|e| io_err(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Reads a CSV with the exact `header`, handing each row and its 1-based line
/// number to `parse`.
fn read_rows<T>(
    path: &Path,
    header: &[&str],
    mut parse: impl FnMut(&csv::StringRecord) -> Result<T, String>,
) -> Result<Vec<T>, AnalysisError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(|e| io_err(path, e))?;
    let found = r.headers().map_err(|e| io_err(path, e))?.clone();
    if found.is_empty() {
        return Err(AnalysisError::Empty(format!("{} is empty", path.display())));
    }
    if found.iter().ne(header.iter().copied()) {
        return Err(AnalysisError::Malformed {
            line: 1,
            message: format!(
                "expected header `{}`, found `{}`",
                header.join(","),
                found.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            AnalysisError::Malformed { line, message: e.to_string() }
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        out.push(parse(&rec).map_err(|message| AnalysisError::Malformed { line, message })?);
    }
    if out.is_empty() {
        return Err(AnalysisError::Empty(format!("{} has no data rows", path.display())));
    }
    Ok(out)
}

fn field<T: FromStr>(rec: &csv::StringRecord, i: usize, name: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    let raw = rec.get(i).ok_or_else(|| format!("missing column `{name}`"))?;
    raw.parse().map_err(|e| format!("column `{name}`: cannot parse `{raw}`: {e}"))
}

pub fn write_scores(path: &Path, rows: &[ScoreRow]) -> Result<(), AnalysisError> {
    write_rows(
        path,
        &SCORES_HEADER,
        rows.iter().map(|r| {
            vec![r.model.clone(), r.task.clone(), r.metric.clone(), r.value.to_string(), r.polarity.to_string()]
        }),
    )
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRow>, AnalysisError> {
    read_rows(path, &SCORES_HEADER, |rec| {
        Ok(ScoreRow {
            model: field(rec, 0, "model")?,
            task: field(rec, 1, "task")?,
            metric: field(rec, 2, "metric")?,
            value: field(rec, 3, "value")?,
            polarity: field(rec, 4, "polarity")?,
        })
    })
}

pub fn write_scaling(path: &Path, records: &[ScalingRecord]) -> Result<(), AnalysisError> {
    write_rows(
        path,
        &SCALING_HEADER,
        records.iter().map(|r| {
            vec![
                r.arch.to_string(),
                r.scale_variable.to_string(),
                r.scale_value.to_string(),
                r.task.clone(),
                r.metric.clone(),
                r.value.to_string(),
                r.polarity.to_string(),
                r.seed.to_string(),
            ]
        }),
    )
}

pub fn read_scaling(path: &Path) -> Result<Vec<ScalingRecord>, AnalysisError> {
    read_rows(path, &SCALING_HEADER, |rec| {
        Ok(ScalingRecord {
            arch: field(rec, 0, "arch")?,
            scale_variable: field(rec, 1, "scale_variable")?,
            scale_value: field(rec, 2, "scale_value")?,
            task: field(rec, 3, "task")?,
            metric: field(rec, 4, "metric")?,
            value: field(rec, 5, "value")?,
            polarity: field(rec, 6, "polarity")?,
            seed: field(rec, 7, "seed")?,
        })
    })
}

pub fn write_summary(path: &Path, cells: &[SummaryCell]) -> Result<(), AnalysisError> {
    let rows = cells.iter().flat_map(|c| {
        c.points.iter().map(move |&(s, z)| {
            vec![
                c.arch.to_string(),
                c.scale_variable.to_string(),
                c.task.clone(),
                s.to_string(),
                z.to_string(),
                c.trend.map_or_else(|| "NA".to_owned(), |t| t.to_string()),
            ]
        })
    });
    write_rows(path, &SUMMARY_HEADER, rows)
}

/// Fits keyed by label, written as one JSON object in key order.
pub fn write_fits(path: &Path, fits: &BTreeMap<String, PowerLawFit>) -> Result<(), AnalysisError> {
    let text = serde_json::to_string_pretty(fits).map_err(|e| io_err(path, e))?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

pub fn read_fits(path: &Path) -> Result<BTreeMap<String, PowerLawFit>, AnalysisError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| AnalysisError::Malformed { line: e.line(), message: e.to_string() })
}
