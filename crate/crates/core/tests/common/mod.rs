#![allow(dead_code)]

use gnn_lab::arch::{assemble_network, ArchKind, Batch, ModelState, NetworkSpec, PreparedMolecule, TaskHeadSpec};
use gnn_lab::molgraph::{generate_synthetic_mix, GeneratorSettings, Molecule, TaskLevel};
use gnn_lab::nn::rng::stream;
use gnn_lab::nn::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn random_tensor(seed: u64, label: &str, rows: usize, cols: usize) -> Tensor {
    let mut rng = stream(seed, label, &[]);
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect())
}

pub fn molecules(seed: u64, n: usize) -> Vec<Molecule> {
    let settings = GeneratorSettings { n_molecules: n.max(10), max_nodes: 12, ..GeneratorSettings::with_seed(seed) };
    let mut mols = generate_synthetic_mix(&settings).unwrap().molecules;
    mols.truncate(n);
    mols
}

pub fn small_spec(kind: ArchKind, width: usize, depth: usize) -> NetworkSpec {
    let mut s = NetworkSpec::new(kind, width, depth);
    s.n_heads = 2;
    s.task_heads = vec![
        TaskHeadSpec { name: "graph".into(), out_dim: 3, level: TaskLevel::Graph },
        TaskHeadSpec { name: "node".into(), out_dim: 2, level: TaskLevel::Node },
    ];
    s
}

/// A model whose norm gains, biases and attention bias table are randomized
/// too, so no parameter sits at a special value.
pub fn randomized_model(spec: &NetworkSpec, seed: u64) -> ModelState {
    let mut m = assemble_network(spec, seed).unwrap();
    let mut rng = stream(seed, "randomize", &[]);
    for p in m.params.iter_mut() {
        if p.name.ends_with(".bias") || p.name.ends_with(".gain") || p.name == "bias_table" {
            let base = if p.name.ends_with(".gain") { 1.0 } else { 0.0 };
            for v in p.value.data_mut() {
                *v = base + 0.3 * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    m
}

pub fn prepared(mols: &[Molecule], spec: &NetworkSpec) -> Vec<PreparedMolecule> {
    mols.iter().map(|m| PreparedMolecule::new(m, &spec.pse).unwrap()).collect()
}

pub fn batch_of(prep: &[PreparedMolecule], spec: &NetworkSpec) -> Batch {
    Batch::new(&prep.iter().collect::<Vec<_>>(), spec.n_heads)
}

pub fn random_permutation(seed: u64, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut stream(seed, "perm", &[]));
    p
}
