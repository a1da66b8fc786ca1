//! Directory layout of a saved mix:
//!
//! - `graphs.jsonl`: one `{"id", "smiles", "nodes", "edges"}` object per line
//! - `task_<name>.csv`: `molecule,column,value` (graph level) or
//!   `molecule,node,column,value` (node level); absent rows are masked
//! - `tasks.json`: name, level, kind and column count of each table, in order
//! - `splits.json`: `{"train": [...], "val": [...], "test": [...]}`

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::{DatasetError, DatasetMix, LabelBlock, Molecule, Splits, TaskKind, TaskLevel, TaskTable};
use super::{parse_smiles, to_smiles};

#[derive(Serialize, Deserialize)]
struct GraphLine {
    id: usize,
    smiles: String,
    nodes: usize,
    edges: Vec<(usize, usize)>,
}

#[derive(Serialize, Deserialize)]
struct TaskMeta {
    name: String,
    level: TaskLevel,
    kind: TaskKind,
    columns: usize,
}

fn format_err(file: &str, line: usize, reason: impl Into<String>) -> DatasetError {
    DatasetError::Format { file: file.to_owned(), line, reason: reason.into() }
}

/// Writes the mix into `dir` (created if missing). Every graph must survive a
/// SMILES round trip with its node numbering intact, which holds for all
/// generated graphs.
pub fn save_dataset(mix: &DatasetMix, dir: &Path) -> Result<(), DatasetError> {
    fs::create_dir_all(dir)?;
    let mut graphs = String::new();
    for (i, m) in mix.molecules.iter().enumerate() {
        let smiles = to_smiles(&m.graph)
            .filter(|s| parse_smiles(s).as_ref() == Ok(&m.graph))
            .ok_or_else(|| format_err("graphs.jsonl", i + 1, "graph has no order-preserving SMILES form"))?;
        let line = GraphLine { id: i, smiles, nodes: m.graph.node_count(), edges: m.graph.edges().to_vec() };
        graphs.push_str(&serde_json::to_string(&line).expect("serializable"));
        graphs.push('\n');
    }
    fs::write(dir.join("graphs.jsonl"), graphs)?;

    let mut meta = Vec::with_capacity(mix.tasks.len());
    for t in &mix.tasks {
        meta.push(TaskMeta { name: t.name.clone(), level: t.level, kind: t.kind, columns: t.columns });
        let mut csv = String::from(match t.level {
            TaskLevel::Graph => "molecule,column,value\n",
            TaskLevel::Node => "molecule,node,column,value\n",
        });
        for (i, b) in t.blocks.iter().enumerate() {
            for (k, (v, _)) in b.values.iter().zip(&b.mask).enumerate().filter(|(_, (_, &m))| m) {
                let (row, col) = (k / t.columns, k % t.columns);
                match t.level {
                    TaskLevel::Graph => writeln!(csv, "{i},{col},{v}"),
                    TaskLevel::Node => writeln!(csv, "{i},{row},{col},{v}"),
                }
                .expect("string write");
            }
        }
        fs::write(dir.join(format!("task_{}.csv", t.name)), csv)?;
    }
    fs::write(dir.join("tasks.json"), serde_json::to_string_pretty(&meta).expect("serializable") + "\n")?;
    fs::write(dir.join("splits.json"), serde_json::to_string(&mix.splits).expect("serializable") + "\n")?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<DatasetMix, DatasetError> {
    let text = fs::read_to_string(dir.join("graphs.jsonl"))?;
    let mut molecules = Vec::new();
    for (ln, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let err = |r: String| format_err("graphs.jsonl", ln + 1, r);
        let g: GraphLine = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        if g.id != molecules.len() {
            return Err(err(format!("expected id {}, found {}", molecules.len(), g.id)));
        }
        let graph = parse_smiles(&g.smiles)?;
        if graph.node_count() != g.nodes || graph.edges() != g.edges.as_slice() {
            return Err(err("SMILES disagrees with node count or edge list".into()));
        }
        molecules.push(Molecule::new(graph));
    }

    let meta_text = fs::read_to_string(dir.join("tasks.json"))?;
    let meta: Vec<TaskMeta> =
        serde_json::from_str(&meta_text).map_err(|e| format_err("tasks.json", e.line(), e.to_string()))?;
    let mut tasks = Vec::with_capacity(meta.len());
    for m in meta {
        let file = format!("task_{}.csv", m.name);
        let text = fs::read_to_string(dir.join(&file))?;
        let mut blocks: Vec<LabelBlock> = molecules
            .iter()
            .map(|mol| {
                let rows = match m.level {
                    TaskLevel::Graph => 1,
                    TaskLevel::Node => mol.graph.node_count(),
                };
                LabelBlock::new(vec![0.0; rows * m.columns], vec![false; rows * m.columns])
            })
            .collect();
        let fields = match m.level {
            TaskLevel::Graph => 3,
            TaskLevel::Node => 4,
        };
        for (ln, line) in text.lines().enumerate().skip(1).filter(|(_, l)| !l.trim().is_empty()) {
            let err = |r: String| format_err(&file, ln + 1, r);
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != fields {
                return Err(err(format!("expected {fields} fields, found {}", parts.len())));
            }
            let index = |s: &str| s.trim().parse::<usize>().map_err(|e| err(format!("`{s}`: {e}")));
            let mol = index(parts[0])?;
            let (row, col) = match m.level {
                TaskLevel::Graph => (0, index(parts[1])?),
                TaskLevel::Node => (index(parts[1])?, index(parts[2])?),
            };
            let raw = parts[fields - 1].trim();
            let value: f64 = raw.parse().map_err(|e| err(format!("`{raw}`: {e}")))?;
            let block = blocks.get_mut(mol).ok_or_else(|| err(format!("molecule {mol} out of range")))?;
            let k = row * m.columns + col;
            if col >= m.columns || k >= block.values.len() {
                return Err(err(format!("entry ({row}, {col}) out of range")));
            }
            block.values[k] = value;
            block.mask[k] = true;
        }
        tasks.push(TaskTable { name: m.name, level: m.level, kind: m.kind, columns: m.columns, blocks });
    }

    let split_text = fs::read_to_string(dir.join("splits.json"))?;
    let splits: Splits =
        serde_json::from_str(&split_text).map_err(|e| format_err("splits.json", e.line(), e.to_string()))?;
    DatasetMix::new(molecules, tasks, splits)
}
