use std::collections::VecDeque;
use std::sync::Arc;

use super::ArchError;
use crate::molgraph::{Molecule, EDGE_FEATURES};
use crate::nn::{AttentionLayout, Tensor};
use crate::pse::{build_pse_features, PseConfig};

/// Largest distinguished shortest-path distance; longer paths share its bucket.
pub const SPD_MAX: usize = 5;
/// `0..=SPD_MAX` plus one bucket for unreachable pairs.
pub const SPD_BUCKETS: usize = SPD_MAX + 2;

/// All-pairs BFS distances clamped to `d_max`; unreachable pairs get
/// `d_max + 1`.
pub fn spd_buckets(g: &crate::molgraph::MolGraph, d_max: usize) -> Vec<Vec<usize>> {
    assert!(d_max >= 1, "d_max must be at least 1");
    let n = g.node_count();
    let adj = g.adjacency();
    let mut out = vec![vec![d_max + 1; n]; n];
    let mut queue = VecDeque::new();
    for (s, row) in out.iter_mut().enumerate() {
        let mut dist = vec![usize::MAX; n];
        dist[s] = 0;
        queue.push_back(s);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        for (t, d) in dist.into_iter().enumerate() {
            if d != usize::MAX {
                row[t] = d.min(d_max);
            }
        }
    }
    out
}

/// Per-molecule network inputs computed once: raw node features with PSE
/// columns appended, edge features, the edge list and SPD buckets.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedMolecule {
    /// `N × (NODE_FEATURES + pse width)`
    pub node_input: Tensor,
    /// `M × EDGE_FEATURES`
    pub edge_input: Tensor,
    pub edges: Vec<(usize, usize)>,
    /// Row-major `N × N`.
    pub buckets: Vec<usize>,
}

impl PreparedMolecule {
    pub fn new(mol: &Molecule, pse: &PseConfig) -> Result<Self, ArchError> {
        let enc = build_pse_features(&mol.graph, pse)?;
        let node_input = Tensor::hcat(&[&mol.features.node, &enc]);
        let buckets = spd_buckets(&mol.graph, SPD_MAX).into_iter().flatten().collect();
        Ok(Self { node_input, edge_input: mol.features.edge.clone(), edges: mol.graph.edges().to_vec(), buckets })
    }

    pub fn node_count(&self) -> usize {
        self.node_input.rows()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Relabels node `i` as `perm[i]`, carrying its input row, incident edges
    /// and bucket entries along. Edge order is kept.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.node_count();
        assert_eq!(perm.len(), n, "permutation length");
        let mut inverse = vec![0; n];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        let node_input = self.node_input.select_rows(&inverse);
        let edges = self.edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        let mut buckets = vec![0; n * n];
        for i in 0..n {
            for j in 0..n {
                buckets[perm[i] * n + perm[j]] = self.buckets[i * n + j];
            }
        }
        Self { node_input, edge_input: self.edge_input.clone(), edges, buckets }
    }
}

/// Stacked inputs of several molecules plus the index maps the blocks need.
#[derive(Clone, Debug)]
pub struct Batch {
    pub node_input: Tensor,
    pub edge_input: Tensor,
    pub topology: Topology,
    /// Graph index of every stacked node.
    pub node_graph: Arc<[usize]>,
    /// Node offsets per molecule, `len = graphs + 1`.
    pub node_offsets: Vec<usize>,
    pub layout: Arc<AttentionLayout>,
}

/// Directed-edge index maps. Undirected edge `k` (u, v) yields directed
/// edges `k` (u→v) and `M + k` (v→u).
#[derive(Clone, Debug)]
pub struct Topology {
    pub nodes: usize,
    pub edges: usize,
    pub src: Arc<[usize]>,
    pub dst: Arc<[usize]>,
    pub edge_of: Arc<[usize]>,
}

impl Topology {
    pub fn new(nodes: usize, edges: &[(usize, usize)]) -> Self {
        let m = edges.len();
        let src: Vec<usize> = edges.iter().map(|e| e.0).chain(edges.iter().map(|e| e.1)).collect();
        let dst: Vec<usize> = edges.iter().map(|e| e.1).chain(edges.iter().map(|e| e.0)).collect();
        let edge_of: Vec<usize> = (0..m).chain(0..m).collect();
        Self { nodes, edges: m, src: src.into(), dst: dst.into(), edge_of: edge_of.into() }
    }
}

impl Batch {
    pub fn new(mols: &[&PreparedMolecule], n_heads: usize) -> Self {
        assert!(!mols.is_empty(), "empty batch");
        let mut node_offsets = vec![0];
        let mut edges = Vec::new();
        let mut node_graph = Vec::new();
        let mut buckets = Vec::with_capacity(mols.len());
        for (gi, m) in mols.iter().enumerate() {
            let base = *node_offsets.last().expect("offset");
            edges.extend(m.edges.iter().map(|&(u, v)| (u + base, v + base)));
            node_graph.extend(std::iter::repeat_n(gi, m.node_count()));
            node_offsets.push(base + m.node_count());
            buckets.push(m.buckets.clone());
        }
        let nodes = *node_offsets.last().expect("offset");
        let node_parts: Vec<&Tensor> = mols.iter().map(|m| &m.node_input).collect();
        let edge_parts: Vec<&Tensor> = mols.iter().map(|m| &m.edge_input).collect();
        let edge_input = if edges.is_empty() { Tensor::zeros(&[0, EDGE_FEATURES]) } else { Tensor::vcat(&edge_parts) };
        Self {
            node_input: Tensor::vcat(&node_parts),
            edge_input,
            topology: Topology::new(nodes, &edges),
            node_graph: node_graph.into(),
            layout: Arc::new(AttentionLayout { offsets: node_offsets.clone(), buckets, n_heads, key_padding: None }),
            node_offsets,
        }
    }

    pub fn graphs(&self) -> usize {
        self.node_offsets.len() - 1
    }

    pub fn nodes(&self) -> usize {
        self.topology.nodes
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::{parse_smiles, MolGraph};

    #[test]
    fn spd_examples() {
        let path = parse_smiles("CCC").unwrap();
        assert_eq!(spd_buckets(&path, 5)[0][2], 2);
        let tri = spd_buckets(&parse_smiles("C1CC1").unwrap(), 5);
        for (i, row) in tri.iter().enumerate() {
            for (j, &b) in row.iter().enumerate() {
                assert_eq!(b, usize::from(i != j));
            }
        }
        let two = spd_buckets(&MolGraph::skeleton(4, &[(0, 1), (2, 3)]).unwrap(), 5);
        assert_eq!(two[0][2], 6);
        assert_eq!(two[1][3], 6);
        assert_eq!(two[2][3], 1);
        let long = spd_buckets(&parse_smiles("CCCCCCCC").unwrap(), 5);
        assert_eq!(long[0][7], 5);
    }

    #[test]
    fn batch_offsets_and_directed_edges() {
        let pse = PseConfig::default();
        let a = PreparedMolecule::new(&Molecule::new(parse_smiles("CC").unwrap()), &pse).unwrap();
        let b = PreparedMolecule::new(&Molecule::new(parse_smiles("C1CC1").unwrap()), &pse).unwrap();
        let batch = Batch::new(&[&a, &b], 2);
        assert_eq!(batch.node_offsets, vec![0, 2, 5]);
        assert_eq!(&*batch.node_graph, &[0, 0, 1, 1, 1]);
        assert_eq!(batch.topology.edges, 4);
        assert_eq!(&batch.topology.src[..4], &[0, 2, 3, 2]);
        assert_eq!(&batch.topology.dst[4..], &[0, 2, 3, 2]);
        assert_eq!(batch.node_input.cols(), 16 + pse.width());
    }

    #[test]
    fn permuted_moves_rows_and_buckets() {
        let m = PreparedMolecule::new(&Molecule::new(parse_smiles("CCO").unwrap()), &PseConfig::default()).unwrap();
        let p = m.permuted(&[2, 0, 1]);
        assert_eq!(p.node_input.row(2), m.node_input.row(0));
        assert_eq!(p.edges, vec![(2, 0), (0, 1)]);
        assert_eq!(p.buckets[2 * 3 + 1], m.buckets[2]);
    }
}
