//! Positional and structural encodings: random-walk return probabilities,
//! Laplacian eigenvectors and eigenvalues.

mod jacobi;

pub use jacobi::{symmetric_eigen, MAX_SWEEPS};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::molgraph::MolGraph;
use crate::nn::{canonical_sum, Tensor};

#[derive(Debug, Error, PartialEq)]
pub enum PseError {
    #[error("Jacobi iteration did not converge in {sweeps} sweeps (off-diagonal norm {off_norm:e})")]
    NotConverged { sweeps: usize, off_norm: f64 },
    #[error("requested {requested} eigenpairs from a graph with {nodes} nodes")]
    TooManyEigenpairs { requested: usize, nodes: usize },
    #[error("invalid encoding configuration: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PseConfig {
    /// Random-walk steps K.
    pub rw_steps: usize,
    /// Laplacian eigenvectors k.
    pub n_eigvecs: usize,
    pub include_eigenvalues: bool,
}

impl Default for PseConfig {
    fn default() -> Self {
        Self { rw_steps: 8, n_eigvecs: 4, include_eigenvalues: true }
    }
}

impl PseConfig {
    pub fn validate(&self) -> Result<(), PseError> {
        if self.rw_steps == 0 || self.n_eigvecs == 0 {
            return Err(PseError::Config("rw_steps and n_eigvecs must be at least 1".into()));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.rw_steps + self.n_eigvecs * if self.include_eigenvalues { 2 } else { 1 }
    }
}

/// The smallest Laplacian eigenpairs, ascending. Eigenvector columns are unit
/// norm with their first entry of magnitude above 1e-8 made positive.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralData {
    pub eigenvalues: Vec<f64>,
    /// `N × k`
    pub eigenvectors: Tensor,
}

/// Combinatorial Laplacian `D − A`.
pub fn laplacian(g: &MolGraph) -> Tensor {
    let n = g.node_count();
    let mut l = Tensor::zeros(&[n, n]);
    for &(u, v) in g.edges() {
        l.set(u, v, -1.0);
        l.set(v, u, -1.0);
        l.set(u, u, l.get(u, u) + 1.0);
        l.set(v, v, l.get(v, v) + 1.0);
    }
    l
}

/// Random-walk transition matrix `D⁻¹A`; isolated nodes stay put.
pub fn transition_matrix(g: &MolGraph) -> Tensor {
    let n = g.node_count();
    let deg = g.degrees();
    let mut p = Tensor::zeros(&[n, n]);
    for (i, &d) in deg.iter().enumerate() {
        if d == 0 {
            p.set(i, i, 1.0);
        }
    }
    for &(u, v) in g.edges() {
        p.set(u, v, 1.0 / deg[u] as f64);
        p.set(v, u, 1.0 / deg[v] as f64);
    }
    p
}

/// Column `k − 1` holds `diag((D⁻¹A)ᵏ)`, `k = 1..=steps`.
///
/// Matrix powers are accumulated with [`canonical_sum`], which makes every
/// entry an exact function of the graph up to relabeling:
/// `rwse(π·g)[π(i)] == rwse(g)[i]` bitwise.
pub fn rwse(g: &MolGraph, steps: usize) -> Tensor {
    let n = g.node_count();
    let p = transition_matrix(g);
    let mut power = p.clone();
    let mut out = Tensor::zeros(&[n, steps]);
    let mut terms = vec![0.0; n];
    for k in 0..steps {
        if k > 0 {
            let mut next = Tensor::zeros(&[n, n]);
            for i in 0..n {
                for j in 0..n {
                    for (l, t) in terms.iter_mut().enumerate() {
                        *t = power.get(i, l) * p.get(l, j);
                    }
                    next.set(i, j, canonical_sum(&mut terms));
                }
            }
            power = next;
        }
        for i in 0..n {
            out.set(i, k, power.get(i, i));
        }
    }
    out
}

/// The `k` smallest eigenpairs of the Laplacian via cyclic Jacobi.
pub fn laplacian_eigs(g: &MolGraph, k: usize) -> Result<SpectralData, PseError> {
    let n = g.node_count();
    if k > n {
        return Err(PseError::TooManyEigenpairs { requested: k, nodes: n });
    }
    let (values, vectors) = symmetric_eigen(&laplacian(g))?;
    let mut eigenvectors = Tensor::zeros(&[n, k]);
    for c in 0..k {
        let mut col: Vec<f64> = (0..n).map(|r| vectors.get(r, c)).collect();
        if let Some(first) = col.iter().find(|v| v.abs() > 1e-8) {
            if *first < 0.0 {
                col.iter_mut().for_each(|v| *v = -*v);
            }
        }
        for (r, v) in col.into_iter().enumerate() {
            eigenvectors.set(r, c, v);
        }
    }
    Ok(SpectralData { eigenvalues: values[..k].to_vec(), eigenvectors })
}

/// `[RWSE | eigenvectors | eigenvalues]` per node; the spectral blocks are
/// zero-padded when the graph has fewer than `k` nodes.
pub fn build_pse_features(g: &MolGraph, cfg: &PseConfig) -> Result<Tensor, PseError> {
    cfg.validate()?;
    let n = g.node_count();
    let k = cfg.n_eigvecs;
    let avail = k.min(n);
    let rw = rwse(g, cfg.rw_steps);
    let spec = laplacian_eigs(g, avail)?;
    let width = cfg.width();
    let mut out = Tensor::zeros(&[n, width]);
    for i in 0..n {
        let row = out.row_mut(i);
        row[..cfg.rw_steps].copy_from_slice(rw.row(i));
        for j in 0..avail {
            row[cfg.rw_steps + j] = spec.eigenvectors.get(i, j);
            if cfg.include_eigenvalues {
                row[cfg.rw_steps + k + j] = spec.eigenvalues[j];
            }
        }
    }
    Ok(out)
}
