use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// `split.task.metric` → value; `None` when undefined.
    pub metrics: BTreeMap<String, Option<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn train_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }

    pub fn lr_trace(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.lr).collect()
    }

    /// Every metric column present in any epoch, sorted.
    pub fn metric_columns(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.epochs.iter().flat_map(|e| e.metrics.keys()).collect();
        set.into_iter().cloned().collect()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    /// `epoch,lr,train_loss,<sorted split.task.metric columns>`; undefined
    /// values are written as `NA`.
    pub fn to_csv(&self) -> String {
        let cols = self.metric_columns();
        let mut s = String::from("epoch,lr,train_loss");
        for c in &cols {
            s.push(',');
            s.push_str(c);
        }
        s.push('\n');
        for e in &self.epochs {
            let _ = write!(s, "{},{},{}", e.epoch, e.lr, e.train_loss);
            for c in &cols {
                match e.metrics.get(c).copied().flatten() {
                    Some(v) => {
                        let _ = write!(s, ",{v}");
                    }
                    None => s.push_str(",NA"),
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        fs::write(path, self.to_csv())
    }
}
