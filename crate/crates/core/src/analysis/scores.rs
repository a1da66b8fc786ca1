use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::metrics::mean_std;
use super::AnalysisError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Higher,
    Lower,
}

impl Polarity {
    /// `+1` for higher-is-better, `−1` otherwise.
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Higher => 1.0,
            Polarity::Lower => -1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Polarity::Higher => "higher",
            Polarity::Lower => "lower",
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Polarity {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "higher" => Ok(Polarity::Higher),
            "lower" => Ok(Polarity::Lower),
            _ => Err(format!("polarity must be `higher` or `lower`, got `{s}`")),
        }
    }
}

/// Rows are models, columns tasks (or task/metric pairs); entries may be
/// missing.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreTable {
    polarity: BTreeMap<String, Polarity>,
    rows: BTreeMap<String, BTreeMap<String, f64>>,
}

impl ScoreTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds or replaces one entry. A column keeps the polarity it was first
    /// given.
    pub fn insert(&mut self, model: &str, column: &str, value: f64, polarity: Polarity) -> Result<(), AnalysisError> {
        if !value.is_finite() {
            return Err(AnalysisError::Invalid(format!("non-finite score for {model}/{column}")));
        }
        match self.polarity.get(column) {
            Some(&p) if p != polarity => {
                return Err(AnalysisError::Invalid(format!("column `{column}` is {p}-is-better, not {polarity}")))
            }
            _ => {}
        }
        self.polarity.insert(column.to_owned(), polarity);
        self.rows.entry(model.to_owned()).or_default().insert(column.to_owned(), value);
        Ok(())
    }

    pub fn models(&self) -> impl Iterator<Item = &str> {
        self.rows.keys().map(String::as_str)
    }

    pub fn columns(&self) -> impl Iterator<Item = (&str, Polarity)> {
        self.polarity.iter().map(|(k, &p)| (k.as_str(), p))
    }

    pub fn get(&self, model: &str, column: &str) -> Option<f64> {
        self.rows.get(model)?.get(column).copied()
    }

    pub fn polarity(&self, column: &str) -> Option<Polarity> {
        self.polarity.get(column).copied()
    }

    /// Non-missing entries of `column` in model order.
    pub fn column_values(&self, column: &str) -> Vec<f64> {
        self.rows.values().filter_map(|r| r.get(column).copied()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Why a column was left out of standardization.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SkipReason {
    ZeroStd,
    TooFewEntries,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Standardized {
    /// model → column → z
    pub z: BTreeMap<String, BTreeMap<String, f64>>,
    /// Mean z per model over its non-missing standardized columns; `None`
    /// when the model has none.
    pub model_mean: BTreeMap<String, Option<f64>>,
    pub skipped: BTreeMap<String, SkipReason>,
}

/// Per column `z = sgn·(s − mean)/std` with the population std over the
/// column's non-missing entries.
pub fn standardized_scores(table: &ScoreTable) -> Standardized {
    let mut out = Standardized::default();
    for model in table.models() {
        out.z.insert(model.to_owned(), BTreeMap::new());
    }
    for (col, pol) in table.columns() {
        let values = table.column_values(col);
        if values.len() < 2 {
            out.skipped.insert(col.to_owned(), SkipReason::TooFewEntries);
            continue;
        }
        let (m, s) = mean_std(&values);
        if s == 0.0 {
            out.skipped.insert(col.to_owned(), SkipReason::ZeroStd);
            continue;
        }
        for (model, row) in &table.rows {
            if let Some(v) = row.get(col) {
                out.z.get_mut(model).unwrap().insert(col.to_owned(), pol.sign() * (v - m) / s);
            }
        }
    }
    for (model, zs) in &out.z {
        let mean = (!zs.is_empty()).then(|| zs.values().sum::<f64>() / zs.len() as f64);
        out.model_mean.insert(model.clone(), mean);
    }
    out
}

/// Mean z-score of `model` against each leaderboard column it shares,
/// polarity corrected. Columns of zero spread are ignored.
pub fn normalized_performance(model: &BTreeMap<String, f64>, leaderboard: &ScoreTable) -> Result<f64, AnalysisError> {
    let mut zs = Vec::new();
    for (col, &v) in model {
        let Some(pol) = leaderboard.polarity(col) else { continue };
        let values = leaderboard.column_values(col);
        let (m, s) = mean_std(&values);
        if values.len() >= 2 && s > 0.0 {
            zs.push(pol.sign() * (v - m) / s);
        }
    }
    if zs.is_empty() {
        return Err(AnalysisError::Empty("no leaderboard column overlaps the model's scores".into()));
    }
    Ok(zs.iter().sum::<f64>() / zs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(values: &[f64], pol: Polarity) -> ScoreTable {
        let mut t = ScoreTable::new();
        for (i, v) in values.iter().enumerate() {
            t.insert(&format!("m{i}"), "task", *v, pol).unwrap();
        }
        t
    }

    #[test]
    fn z_scores_of_one_two_three() {
        let s = standardized_scores(&column(&[1., 2., 3.], Polarity::Higher));
        let z: Vec<f64> = s.z.values().map(|r| r["task"]).collect();
        let e = 1.0 / (2.0f64 / 3.0).sqrt();
        assert!((z[0] + e).abs() < 1e-12 && z[1].abs() < 1e-12 && (z[2] - e).abs() < 1e-12);
        let flipped = standardized_scores(&column(&[1., 2., 3.], Polarity::Lower));
        for (a, b) in s.z.values().zip(flipped.z.values()) {
            assert_eq!(a["task"], -b["task"]);
        }
    }

    #[test]
    fn constant_column_is_skipped() {
        let s = standardized_scores(&column(&[2., 2.], Polarity::Higher));
        assert_eq!(s.skipped["task"], SkipReason::ZeroStd);
        assert!(s.model_mean.values().all(Option::is_none));
    }

    #[test]
    fn polarity_conflict_is_rejected() {
        let mut t = column(&[1.], Polarity::Higher);
        assert!(t.insert("m9", "task", 1.0, Polarity::Lower).is_err());
    }

    #[test]
    fn normalized_performance_examples() {
        let mut board = ScoreTable::new();
        for (i, (a, b)) in [(1., 4.), (2., 5.), (3., 6.)].iter().enumerate() {
            board.insert(&format!("m{i}"), "a", *a, Polarity::Higher).unwrap();
            board.insert(&format!("m{i}"), "b", *b, Polarity::Higher).unwrap();
        }
        let model: BTreeMap<String, f64> = [("a".to_owned(), 3.0), ("b".to_owned(), 6.0)].into();
        assert!((normalized_performance(&model, &board).unwrap() - 1.224744871391589).abs() < 1e-12);
        let mean: BTreeMap<String, f64> = [("a".to_owned(), 2.0), ("b".to_owned(), 5.0)].into();
        assert_eq!(normalized_performance(&mean, &board).unwrap(), 0.0);
        let other: BTreeMap<String, f64> = [("c".to_owned(), 2.0)].into();
        assert!(normalized_performance(&other, &board).is_err());
    }
}
