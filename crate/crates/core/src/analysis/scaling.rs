use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::metrics::spearman;
use super::scores::{standardized_scores, Polarity, ScoreTable};
use super::AnalysisError;
use crate::arch::ArchKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleVariable {
    Params,
    Molecules,
    Labels,
    Depth,
    Width,
}

impl ScaleVariable {
    pub const ALL: [ScaleVariable; 5] = [
        ScaleVariable::Params,
        ScaleVariable::Molecules,
        ScaleVariable::Labels,
        ScaleVariable::Depth,
        ScaleVariable::Width,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScaleVariable::Params => "params",
            ScaleVariable::Molecules => "molecules",
            ScaleVariable::Labels => "labels",
            ScaleVariable::Depth => "depth",
            ScaleVariable::Width => "width",
        }
    }
}

impl fmt::Display for ScaleVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScaleVariable {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        ScaleVariable::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown scale variable `{s}` (expected params, molecules, labels, depth or width)"))
    }
}

/// One (scale, performance) observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRecord {
    pub arch: ArchKind,
    pub scale_variable: ScaleVariable,
    pub scale_value: f64,
    pub task: String,
    pub metric: String,
    pub value: f64,
    pub polarity: Polarity,
    pub seed: u64,
}

/// `(scale, seed-averaged polarity-adjusted value)` sorted by scale.
fn seed_means(records: &[&ScalingRecord]) -> Vec<(f64, f64)> {
    let mut by_scale: BTreeMap<u64, (f64, f64, usize)> = BTreeMap::new();
    for r in records {
        let e = by_scale.entry(r.scale_value.to_bits()).or_insert((r.scale_value, 0.0, 0));
        e.1 += r.polarity.sign() * r.value;
        e.2 += 1;
    }
    let mut pts: Vec<(f64, f64)> = by_scale.into_values().map(|(s, v, n)| (s, v / n as f64)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    pts
}

fn validate_records(records: &[&ScalingRecord]) -> Result<(), AnalysisError> {
    for r in records {
        if !(r.scale_value > 0.0 && r.scale_value.is_finite()) {
            return Err(AnalysisError::Invalid(format!("scale value {} must be positive", r.scale_value)));
        }
        if !r.value.is_finite() {
            return Err(AnalysisError::Invalid(format!("non-finite value for {}/{}", r.task, r.metric)));
        }
    }
    Ok(())
}

/// Spearman correlation between scale and polarity-adjusted performance,
/// seeds averaged per scale point first.
pub fn scaling_spearman(records: &[ScalingRecord]) -> Result<f64, AnalysisError> {
    let refs: Vec<&ScalingRecord> = records.iter().collect();
    validate_records(&refs)?;
    let pts = seed_means(&refs);
    if pts.len() < 3 {
        return Err(AnalysisError::Insufficient(format!("need at least 3 distinct scale values, got {}", pts.len())));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    Ok(spearman(&x, &y)?)
}

/// Result of a log-log least-squares fit of `L = (c/s)^α`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub exponent: f64,
    pub critical: f64,
    /// Intercept of `log L` against `log(c/s)`; zero for data that follow the
    /// law exactly.
    pub intercept: f64,
    pub residual_rms: f64,
}

/// Fits `value = (critical/scale)^exponent`; for higher-is-better values the
/// ratio is inverted to `scale/critical`.
pub fn fit_power_law(points: &[(f64, f64)], polarity: Polarity, critical: f64) -> Result<PowerLawFit, AnalysisError> {
    if points.len() < 2 {
        return Err(AnalysisError::Insufficient(format!("need at least 2 points, got {}", points.len())));
    }
    if !(critical > 0.0 && critical.is_finite()) {
        return Err(AnalysisError::Invalid(format!("critical scale {critical} must be positive")));
    }
    let mut xs = Vec::with_capacity(points.len());
    let mut ys = Vec::with_capacity(points.len());
    for &(s, v) in points {
        if !(s > 0.0 && v > 0.0 && s.is_finite() && v.is_finite()) {
            return Err(AnalysisError::Invalid(format!("point ({s}, {v}): scale and value must be positive")));
        }
        let ratio = match polarity {
            Polarity::Lower => critical / s,
            Polarity::Higher => s / critical,
        };
        xs.push(ratio.ln());
        ys.push(v.ln());
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(AnalysisError::Insufficient("all points share one scale".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    Ok(PowerLawFit { exponent: slope, critical, intercept, residual_rms: (ss / n).sqrt() })
}

/// One cell of the summary matrix: a task of one architecture under one kind
/// of scaling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryCell {
    pub arch: ArchKind,
    pub scale_variable: ScaleVariable,
    pub task: String,
    /// `(scale, standardized mean)` with seeds averaged, sorted by scale.
    pub points: Vec<(f64, f64)>,
    /// Spearman over `points`; `None` below 3 scale values or for a flat
    /// series.
    pub trend: Option<f64>,
}

/// Standardizes every (task, metric) column across all runs of a scaling
/// variable, averages each run's z-scores per task, and reports the per-scale
/// means with their rank trend.
///
/// Columns without spread contribute z = 0, so identical runs score 0.
pub fn sweep_summary(records: &[ScalingRecord]) -> Result<Vec<SummaryCell>, AnalysisError> {
    if records.is_empty() {
        return Err(AnalysisError::Empty("no scaling records".into()));
    }
    let refs: Vec<&ScalingRecord> = records.iter().collect();
    validate_records(&refs)?;
    let archs: BTreeSet<ArchKind> = records.iter().map(|r| r.arch).collect();
    let scales: BTreeSet<u64> = records.iter().map(|r| r.scale_value.to_bits()).collect();
    if archs.len() < 2 && scales.len() < 3 {
        return Err(AnalysisError::Insufficient(format!(
            "{} architecture(s) and {} scale value(s); need 2 architectures or 3 scale values",
            archs.len(),
            scales.len()
        )));
    }
    let run_id = |r: &ScalingRecord| format!("{}|{:e}|{}", r.arch, r.scale_value, r.seed);
    let column = |r: &ScalingRecord| format!("{}|{}", r.task, r.metric);
    let variables: BTreeSet<ScaleVariable> = records.iter().map(|r| r.scale_variable).collect();
    let mut cells = Vec::new();
    for var in variables {
        let group: Vec<&ScalingRecord> = records.iter().filter(|r| r.scale_variable == var).collect();
        let mut table = ScoreTable::new();
        for r in &group {
            table.insert(&run_id(r), &column(r), r.value, r.polarity)?;
        }
        let std = standardized_scores(&table);
        // (arch, task) → scale bits → seed → z values
        let mut acc: BTreeMap<(ArchKind, String), BTreeMap<u64, (f64, BTreeMap<u64, Vec<f64>>)>> = BTreeMap::new();
        for r in &group {
            let z = std.z[&run_id(r)].get(&column(r)).copied().unwrap_or(0.0);
            acc.entry((r.arch, r.task.clone()))
                .or_default()
                .entry(r.scale_value.to_bits())
                .or_insert((r.scale_value, BTreeMap::new()))
                .1
                .entry(r.seed)
                .or_default()
                .push(z);
        }
        for ((arch, task), by_scale) in acc {
            let mut points: Vec<(f64, f64)> = by_scale
                .into_values()
                .map(|(s, seeds)| {
                    let per_seed: Vec<f64> =
                        seeds.values().map(|zs| zs.iter().sum::<f64>() / zs.len() as f64).collect();
                    (s, per_seed.iter().sum::<f64>() / per_seed.len() as f64)
                })
                .collect();
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            let trend = if points.len() >= 3 {
                let (x, y): (Vec<f64>, Vec<f64>) = points.iter().copied().unzip();
                spearman(&x, &y).ok()
            } else {
                None
            };
            cells.push(SummaryCell { arch, scale_variable: var, task, points, trend });
        }
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(arch: ArchKind, scale: f64, task: &str, value: f64, pol: Polarity, seed: u64) -> ScalingRecord {
        ScalingRecord {
            arch,
            scale_variable: ScaleVariable::Width,
            scale_value: scale,
            task: task.into(),
            metric: "m".into(),
            value,
            polarity: pol,
            seed,
        }
    }

    #[test]
    fn spearman_trends() {
        let up: Vec<_> =
            [16., 32., 64.].iter().map(|&w| rec(ArchKind::Mpnn, w, "t", w.ln(), Polarity::Higher, 0)).collect();
        assert_eq!(scaling_spearman(&up).unwrap(), 1.0);
        let down: Vec<_> =
            [16., 32., 64.].iter().map(|&w| rec(ArchKind::Mpnn, w, "t", w, Polarity::Lower, 0)).collect();
        assert_eq!(scaling_spearman(&down).unwrap(), -1.0);
        assert!(scaling_spearman(&up[..2]).is_err());
    }

    #[test]
    fn two_point_power_law() {
        let fit = fit_power_law(&[(1.0, 2.0), (10.0, 1.0)], Polarity::Lower, 10.0).unwrap();
        assert!((fit.exponent - 2f64.log10()).abs() < 1e-15);
        assert!(fit.residual_rms < 1e-15);
        assert!(fit_power_law(&[(1.0, 0.0), (2.0, 1.0)], Polarity::Lower, 1.0).is_err());
    }

    #[test]
    fn summary_requirements() {
        assert!(matches!(sweep_summary(&[]), Err(AnalysisError::Empty(_))));
        let one = [rec(ArchKind::Mpnn, 16., "t", 1.0, Polarity::Higher, 0)];
        assert!(matches!(sweep_summary(&one), Err(AnalysisError::Insufficient(_))));
    }

    #[test]
    fn identical_runs_standardize_to_zero() {
        let recs = [
            rec(ArchKind::Mpnn, 16., "t", 0.7, Polarity::Higher, 0),
            rec(ArchKind::Gps, 16., "t", 0.7, Polarity::Higher, 0),
        ];
        let cells = sweep_summary(&recs).unwrap();
        assert!(cells.iter().all(|c| c.points.iter().all(|p| p.1 == 0.0)));
    }

    #[test]
    fn planted_monotone_sweep_has_unit_trends() {
        let mut recs = Vec::new();
        for arch in [ArchKind::Mpnn, ArchKind::Gps] {
            for (i, w) in [16., 32., 64., 128.].iter().enumerate() {
                for seed in 0..2 {
                    let i = i as f64;
                    recs.push(rec(arch, *w, "a", 0.6 + 0.05 * i, Polarity::Higher, seed));
                    recs.push(rec(arch, *w, "b", 1.0 - 0.1 * i, Polarity::Lower, seed));
                }
            }
        }
        let cells = sweep_summary(&recs).unwrap();
        assert_eq!(cells.len(), 4);
        assert!(cells.iter().all(|c| c.trend == Some(1.0)), "{cells:?}");
    }
}
