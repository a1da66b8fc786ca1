use super::MolGraph;
use crate::nn::Tensor;

/// 9 element slots followed by 7 degree slots (degree 0..=6, capped).
pub const NODE_FEATURES: usize = 16;
/// One-hot bond order.
pub const EDGE_FEATURES: usize = 4;
const MAX_DEGREE_SLOT: usize = 6;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrices {
    /// `N × NODE_FEATURES`
    pub node: Tensor,
    /// `M × EDGE_FEATURES`
    pub edge: Tensor,
}

pub fn featurize(g: &MolGraph) -> FeatureMatrices {
    let n = g.node_count();
    let mut node = Tensor::zeros(&[n, NODE_FEATURES]);
    for (i, (el, deg)) in g.elements().iter().zip(g.degrees()).enumerate() {
        node.set(i, el.index(), 1.0);
        node.set(i, 9 + deg.min(MAX_DEGREE_SLOT), 1.0);
    }
    let mut edge = Tensor::zeros(&[g.edge_count(), EDGE_FEATURES]);
    for (k, b) in g.bonds().iter().enumerate() {
        edge.set(k, b.index(), 1.0);
    }
    FeatureMatrices { node, edge }
}
