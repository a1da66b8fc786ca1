//! Molecular graphs, a SMILES-subset parser, featurization, task tables and
//! a synthetic multi-task dataset generator.

mod dataset;
mod features;
mod io;
mod smiles;
mod synth;

pub use dataset::{
    ablate_dataset, subsample, DatasetError, DatasetMix, LabelBlock, Molecule, Split, Splits, TaskKind, TaskLevel,
    TaskTable,
};
pub use features::{featurize, FeatureMatrices, EDGE_FEATURES, NODE_FEATURES};
pub use io::{load_dataset, save_dataset};
pub use smiles::{parse_smiles, to_smiles, SmilesError, SmilesErrorKind};
pub use synth::{
    clustering_coefficients, generate_downstream_mix, generate_synthetic_mix, laplacian_energy, ring_count,
    substructure_counts, GeneratorSettings, TASK_G25, TASK_L1000_MCF7, TASK_L1000_VCAP, TASK_N4, TASK_PCBA,
};

use std::fmt;

use thiserror::Error;

/// The nine supported element symbols, in feature-slot order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Element {
    C,
    N,
    O,
    F,
    P,
    S,
    Cl,
    Br,
    I,
}

impl Element {
    pub const ALL: [Element; 9] =
        [Element::C, Element::N, Element::O, Element::F, Element::P, Element::S, Element::Cl, Element::Br, Element::I];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::F => "F",
            Element::P => "P",
            Element::S => "S",
            Element::Cl => "Cl",
            Element::Br => "Br",
            Element::I => "I",
        }
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    pub const ALL: [BondOrder; 4] = [BondOrder::Single, BondOrder::Double, BondOrder::Triple, BondOrder::Aromatic];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn symbol(self) -> char {
        match self {
            BondOrder::Single => '-',
            BondOrder::Double => '=',
            BondOrder::Triple => '#',
            BondOrder::Aromatic => ':',
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("edge ({0}, {1}) has an endpoint outside the graph")]
    EndpointOutOfRange(usize, usize),
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("permutation length {found} does not match node count {expected}")]
    BadPermutation { expected: usize, found: usize },
}

/// Undirected molecular graph. Edge `k` joins `edges[k].0` and `edges[k].1`
/// with bond order `bonds[k]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MolGraph {
    elements: Vec<Element>,
    edges: Vec<(usize, usize)>,
    bonds: Vec<BondOrder>,
}

impl MolGraph {
    pub fn new(elements: Vec<Element>, bonded: Vec<(usize, usize, BondOrder)>) -> Result<Self, GraphError> {
        let n = elements.len();
        let mut seen = std::collections::HashSet::new();
        let mut edges = Vec::with_capacity(bonded.len());
        let mut bonds = Vec::with_capacity(bonded.len());
        for (u, v, b) in bonded {
            if u >= n || v >= n {
                return Err(GraphError::EndpointOutOfRange(u, v));
            }
            if u == v {
                return Err(GraphError::SelfLoop(u));
            }
            if !seen.insert((u.min(v), u.max(v))) {
                return Err(GraphError::DuplicateEdge(u, v));
            }
            edges.push((u, v));
            bonds.push(b);
        }
        Ok(Self { elements, edges, bonds })
    }

    /// All-carbon graph with single bonds; handy for structural tests.
    pub fn skeleton(n: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        Self::new(vec![Element::C; n], edges.iter().map(|&(u, v)| (u, v, BondOrder::Single)).collect())
    }

    pub fn node_count(&self) -> usize {
        self.elements.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn bonds(&self) -> &[BondOrder] {
        &self.bonds
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.node_count()];
        for &(u, v) in &self.edges {
            d[u] += 1;
            d[v] += 1;
        }
        d
    }

    /// Sorted neighbor lists.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.node_count()];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        for a in &mut adj {
            a.sort_unstable();
        }
        adj
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edges.iter().any(|&(a, b)| (a == u && b == v) || (a == v && b == u))
    }

    /// Connected component count (union-find).
    pub fn component_count(&self) -> usize {
        let n = self.node_count();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let mut comps = n;
        for &(u, v) in &self.edges {
            let (a, b) = (find(&mut parent, u), find(&mut parent, v));
            if a != b {
                parent[a] = b;
                comps -= 1;
            }
        }
        comps
    }

    /// `M − N + components`: the number of independent rings.
    pub fn cyclomatic_number(&self) -> usize {
        self.edge_count() + self.component_count() - self.node_count()
    }

    /// Relabels node `i` as `perm[i]`. Edge list order and orientation are
    /// kept, so edge `k` of the result is the image of edge `k`.
    pub fn relabel(&self, perm: &[usize]) -> Result<MolGraph, GraphError> {
        let n = self.node_count();
        if perm.len() != n {
            return Err(GraphError::BadPermutation { expected: n, found: perm.len() });
        }
        let mut elements = vec![Element::C; n];
        for (i, &p) in perm.iter().enumerate() {
            elements[p] = self.elements[i];
        }
        let bonded = self.edges.iter().zip(&self.bonds).map(|(&(u, v), &b)| (perm[u], perm[v], b)).collect();
        MolGraph::new(elements, bonded)
    }
}
