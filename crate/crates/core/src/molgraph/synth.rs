use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::dataset::{DatasetError, DatasetMix, LabelBlock, Molecule, Splits, TaskKind, TaskLevel, TaskTable};
use super::{parse_smiles, to_smiles, BondOrder, Element, MolGraph};
use crate::nn::rng::stream;
use crate::pse::{laplacian, symmetric_eigen};

pub const TASK_L1000_VCAP: &str = "l1000_vcap";
pub const TASK_L1000_MCF7: &str = "l1000_mcf7";
pub const TASK_PCBA: &str = "pcba_1328";
pub const TASK_G25: &str = "pcqm4m_g25";
pub const TASK_N4: &str = "pcqm4m_n4";

const MAX_VALENCE: usize = 4;
const MAX_EXTRA_EDGES: usize = 3;
const L1000_COLUMNS: usize = 8;
const PCBA_COLUMNS: usize = 16;

fn default_n_molecules() -> usize {
    1000
}
fn default_min_nodes() -> usize {
    4
}
fn default_max_nodes() -> usize {
    20
}
fn default_extra_edge_prob() -> f64 {
    0.3
}
fn default_pcba_mask_rate() -> f64 {
    0.85
}

/// Generator settings file contents. `seed` is required; every other key
/// has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSettings {
    pub seed: u64,
    #[serde(default = "default_n_molecules")]
    pub n_molecules: usize,
    #[serde(default = "default_min_nodes")]
    pub min_nodes: usize,
    #[serde(default = "default_max_nodes")]
    pub max_nodes: usize,
    /// Probability of each of up to three ring-closing extra edges.
    #[serde(default = "default_extra_edge_prob")]
    pub extra_edge_prob: f64,
    #[serde(default = "default_pcba_mask_rate")]
    pub pcba_mask_rate: f64,
}

impl GeneratorSettings {
    pub const KEYS: [&'static str; 6] =
        ["n_molecules", "min_nodes", "max_nodes", "extra_edge_prob", "pcba_mask_rate", "seed"];

    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            n_molecules: default_n_molecules(),
            min_nodes: default_min_nodes(),
            max_nodes: default_max_nodes(),
            extra_edge_prob: default_extra_edge_prob(),
            pcba_mask_rate: default_pcba_mask_rate(),
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.n_molecules < 10 {
            return Err(DatasetError::TooFewMolecules(self.n_molecules));
        }
        if self.min_nodes < 2 || self.min_nodes > self.max_nodes {
            return Err(DatasetError::Settings(format!(
                "need 2 <= min_nodes <= max_nodes, got {}..{}",
                self.min_nodes, self.max_nodes
            )));
        }
        for (key, p) in [("extra_edge_prob", self.extra_edge_prob), ("pcba_mask_rate", self.pcba_mask_rate)] {
            if !(0.0..1.0).contains(&p) {
                return Err(DatasetError::Settings(format!("{key} must lie in [0, 1), got {p}")));
            }
        }
        Ok(())
    }
}

const ELEMENT_WEIGHTS: [f64; 9] = [70.0, 10.0, 10.0, 2.0, 1.0, 3.0, 2.0, 1.0, 1.0];
const BOND_WEIGHTS: [f64; 4] = [80.0, 12.0, 3.0, 5.0];

fn random_graph(settings: &GeneratorSettings, label: &str, index: usize) -> MolGraph {
    let mut rng = stream(settings.seed, label, &[index as u64]);
    let n = rng.random_range(settings.min_nodes..=settings.max_nodes);
    let el_dist = WeightedIndex::new(ELEMENT_WEIGHTS).expect("weights");
    let bond_dist = WeightedIndex::new(BOND_WEIGHTS).expect("weights");
    let elements: Vec<Element> = (0..n).map(|_| Element::ALL[el_dist.sample(&mut rng)]).collect();
    let mut degree = vec![0usize; n];
    let mut bonded = Vec::with_capacity(n + MAX_EXTRA_EDGES);
    for v in 1..n {
        let open: Vec<usize> = (0..v).filter(|&u| degree[u] < MAX_VALENCE).collect();
        let u = open[rng.random_range(0..open.len())];
        degree[u] += 1;
        degree[v] += 1;
        bonded.push((u, v, BondOrder::ALL[bond_dist.sample(&mut rng)]));
    }
    for _ in 0..MAX_EXTRA_EDGES {
        if !rng.random_bool(settings.extra_edge_prob) {
            continue;
        }
        let candidates: Vec<(usize, usize)> = (0..n)
            .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
            .filter(|&(u, v)| {
                degree[u] < MAX_VALENCE
                    && degree[v] < MAX_VALENCE
                    && !bonded.iter().any(|&(a, b, _)| (a, b) == (u, v) || (a, b) == (v, u))
            })
            .collect();
        if candidates.is_empty() {
            break;
        }
        let (u, v) = candidates[rng.random_range(0..candidates.len())];
        degree[u] += 1;
        degree[v] += 1;
        bonded.push((u, v, BondOrder::Single));
    }
    let g = MolGraph::new(elements, bonded).expect("generator emits valid graphs");
    // Renumber through SMILES so stored graphs and their strings agree.
    match to_smiles(&g).map(|s| parse_smiles(&s)) {
        Some(Ok(h)) => h,
        _ => g,
    }
}

/// Independent rings: `M − N + components`.
pub fn ring_count(g: &MolGraph) -> usize {
    g.cyclomatic_number()
}

/// Local clustering coefficient per node; nodes of degree below 2 get 0.
pub fn clustering_coefficients(g: &MolGraph) -> Vec<f64> {
    let adj = g.adjacency();
    adj.iter()
        .map(|nb| {
            let d = nb.len();
            if d < 2 {
                return 0.0;
            }
            let mut links = 0usize;
            for (a, &x) in nb.iter().enumerate() {
                for &y in &nb[a + 1..] {
                    if adj[x].binary_search(&y).is_ok() {
                        links += 1;
                    }
                }
            }
            links as f64 / (d * (d - 1) / 2) as f64
        })
        .collect()
}

/// `Σ √λᵢ / N` over the Laplacian spectrum.
pub fn laplacian_energy(g: &MolGraph) -> f64 {
    let n = g.node_count();
    if n == 0 {
        return 0.0;
    }
    let (vals, _) = symmetric_eigen(&laplacian(g)).expect("Laplacian eigensolve converges");
    vals.iter().map(|l| l.max(0.0).sqrt()).sum::<f64>() / n as f64
}

/// Element counts (9), bond-order counts (4), degree histogram for degrees
/// 0..=4 (5), ring count, node count, edge count.
pub fn substructure_counts(g: &MolGraph) -> Vec<f64> {
    let mut c = vec![0.0; 21];
    for e in g.elements() {
        c[e.index()] += 1.0;
    }
    for b in g.bonds() {
        c[9 + b.index()] += 1.0;
    }
    for d in g.degrees() {
        c[13 + d.min(4)] += 1.0;
    }
    c[18] = ring_count(g) as f64;
    c[19] = g.node_count() as f64;
    c[20] = g.edge_count() as f64;
    c
}

fn projection_scores(seed: u64, label: &str, counts: &[Vec<f64>], columns: usize) -> Vec<Vec<f64>> {
    let dim = counts.first().map_or(0, Vec::len);
    let weights: Vec<Vec<f64>> = (0..columns)
        .map(|c| {
            let mut rng = stream(seed, label, &[c as u64]);
            (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
        })
        .collect();
    counts.iter().map(|x| weights.iter().map(|w| w.iter().zip(x).map(|(a, b)| a * b).sum()).collect()).collect()
}

/// Thresholds each column at the given quantile of its scores; entries above
/// the threshold are positive.
fn threshold_columns(scores: &[Vec<f64>], quantile: f64) -> Vec<Vec<f64>> {
    let columns = scores.first().map_or(0, Vec::len);
    let cuts: Vec<f64> = (0..columns)
        .map(|c| {
            let mut col: Vec<f64> = scores.iter().map(|s| s[c]).collect();
            col.sort_by(f64::total_cmp);
            col[((col.len() - 1) as f64 * quantile).floor() as usize]
        })
        .collect();
    scores.iter().map(|s| s.iter().zip(&cuts).map(|(v, t)| f64::from(u8::from(v > t))).collect()).collect()
}

fn dense_graph_table(name: &str, kind: TaskKind, rows: Vec<Vec<f64>>) -> TaskTable {
    let columns = rows.first().map_or(0, Vec::len);
    TaskTable {
        name: name.to_owned(),
        level: TaskLevel::Graph,
        kind,
        columns,
        blocks: rows.into_iter().map(|r| LabelBlock::new(r, vec![true; columns])).collect(),
    }
}

fn split_indices(seed: u64, n: usize) -> Splits {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, "synth.split", &[]));
    let n_train = n * 8 / 10;
    let n_val = n / 10;
    let mut train = order[..n_train].to_vec();
    let mut val = order[n_train..n_train + n_val].to_vec();
    let mut test = order[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Splits { train, val, test }
}

/// Five task tables shaped like the pretraining mixture: two dense
/// multilabel classification tables, one sparse classification table, one
/// graph-level and one node-level regression table; 80/10/10 split.
pub fn generate_synthetic_mix(settings: &GeneratorSettings) -> Result<DatasetMix, DatasetError> {
    settings.validate()?;
    let seed = settings.seed;
    let graphs: Vec<MolGraph> = (0..settings.n_molecules).map(|i| random_graph(settings, "synth.graph", i)).collect();
    let counts: Vec<Vec<f64>> = graphs.iter().map(substructure_counts).collect();

    let mut tasks = Vec::with_capacity(5);
    for name in [TASK_L1000_VCAP, TASK_L1000_MCF7] {
        let scores = projection_scores(seed, &format!("synth.{name}"), &counts, L1000_COLUMNS);
        tasks.push(dense_graph_table(name, TaskKind::Classification, threshold_columns(&scores, 0.5)));
    }

    let scores = projection_scores(seed, "synth.pcba", &counts, PCBA_COLUMNS);
    let labels = threshold_columns(&scores, 0.8);
    let blocks = labels
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            let mut rng = stream(seed, "synth.pcba.mask", &[i as u64]);
            let mask = (0..PCBA_COLUMNS).map(|_| !rng.random_bool(settings.pcba_mask_rate)).collect();
            LabelBlock::new(row, mask)
        })
        .collect();
    tasks.push(TaskTable {
        name: TASK_PCBA.to_owned(),
        level: TaskLevel::Graph,
        kind: TaskKind::Classification,
        columns: PCBA_COLUMNS,
        blocks,
    });

    let g25 = graphs
        .iter()
        .map(|g| {
            let n = g.node_count() as f64;
            vec![laplacian_energy(g), ring_count(g) as f64, 2.0 * g.edge_count() as f64 / n]
        })
        .collect();
    tasks.push(dense_graph_table(TASK_G25, TaskKind::Regression, g25));

    let n4 = graphs
        .iter()
        .map(|g| {
            let values: Vec<f64> =
                g.degrees().into_iter().zip(clustering_coefficients(g)).flat_map(|(d, c)| [d as f64, c]).collect();
            let mask = vec![true; values.len()];
            LabelBlock::new(values, mask)
        })
        .collect();
    tasks.push(TaskTable {
        name: TASK_N4.to_owned(),
        level: TaskLevel::Node,
        kind: TaskKind::Regression,
        columns: 2,
        blocks: n4,
    });

    let splits = split_indices(seed, settings.n_molecules);
    DatasetMix::new(graphs.into_iter().map(Molecule::new).collect(), tasks, splits)
}

/// A fresh molecule set (disjoint random stream from the pretraining mix)
/// with two graph-level downstream tasks: `downstream_class`, a balanced
/// binary projection of substructure counts, and `downstream_reg`, the
/// heteroatom fraction plus a quarter of the ring count.
pub fn generate_downstream_mix(settings: &GeneratorSettings) -> Result<DatasetMix, DatasetError> {
    settings.validate()?;
    let graphs: Vec<MolGraph> =
        (0..settings.n_molecules).map(|i| random_graph(settings, "synth.downstream.graph", i)).collect();
    let counts: Vec<Vec<f64>> = graphs.iter().map(substructure_counts).collect();
    let scores = projection_scores(settings.seed, "synth.downstream.class", &counts, 1);
    let class = dense_graph_table("downstream_class", TaskKind::Classification, threshold_columns(&scores, 0.5));
    let reg = graphs
        .iter()
        .map(|g| {
            let hetero = g.elements().iter().filter(|&&e| e != Element::C).count() as f64;
            vec![hetero / g.node_count() as f64 + 0.25 * ring_count(g) as f64]
        })
        .collect();
    let reg = dense_graph_table("downstream_reg", TaskKind::Regression, reg);
    let splits = split_indices(settings.seed ^ 0x5eed, settings.n_molecules);
    DatasetMix::new(graphs.into_iter().map(Molecule::new).collect(), vec![class, reg], splits)
}
