//! A minimal reverse-mode tape over the fixed op set the architectures use.
//!
//! Nodes are appended in evaluation order, so reverse iteration is already a
//! valid topological order for backpropagation.

use std::collections::HashMap;
use std::sync::Arc;

use super::attention::{attention_backward, attention_forward, AttentionLayout};
use super::layers::{
    layernorm_backward, layernorm_forward, linear_backward, linear_forward, relu_backward, relu_forward, LayerNormCache,
};
use super::{canonical_sum, NnError, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Var },
    Relu(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, cache: LayerNormCache },
    Mul { x: Var, factors: Vec<f64> },
    Add(Var, Var),
    Scale(Var, f64),
    Gather { x: Var, idx: Arc<[usize]> },
    ScatterSum { x: Var, idx: Arc<[usize]> },
    Concat(Vec<Var>),
    Attention { q: Var, k: Var, v: Var, bias: Var, layout: Arc<AttentionLayout>, weights: Vec<f64> },
    MaskedBce { logits: Var, targets: Arc<[f64]>, mask: Arc<[bool]>, count: usize },
    MaskedMae { pred: Var, targets: Arc<[f64]>, mask: Arc<[bool]>, count: usize },
    Mean(Vec<Var>),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// A constant input; no gradient flows to it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// An input whose gradient is tracked (used by gradient checks).
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Registers the named parameter once per tape; repeated lookups of the
    /// same path return the same leaf so shared tensors accumulate gradients.
    pub fn param(&mut self, store: &ParamStore, path: &str) -> Var {
        if let Some(&v) = self.params.get(path) {
            return v;
        }
        let p = store.get(path).unwrap_or_else(|| panic!("unknown parameter `{path}`"));
        let v = self.push(p.value.clone(), Op::Leaf, true);
        self.params.insert(path.to_owned(), v);
        v
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NnError> {
        let y = linear_forward(self.value(x), self.value(w), self.value(b))?;
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(y, Op::Linear { x, w, b }, ng))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = relu_forward(self.value(x));
        let ng = self.needs(x);
        self.push(y, Op::Relu(x), ng)
    }

    pub fn layernorm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, NnError> {
        let (y, cache) = layernorm_forward(self.value(x), self.value(gain), self.value(bias))?;
        let ng = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(y, Op::LayerNorm { x, gain, bias, cache }, ng))
    }

    /// Elementwise product with fixed factors (dropout masks).
    pub fn mul_const(&mut self, x: Var, factors: Vec<f64>) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.len(), factors.len(), "mask length");
        let data = xv.data().iter().zip(&factors).map(|(a, b)| a * b).collect();
        let y = Tensor::new(xv.shape().to_vec(), data).expect("mask shape");
        let ng = self.needs(x);
        self.push(y, Op::Mul { x, factors }, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(NnError::ShapeMismatch {
                context: "add".into(),
                expected: av.shape().to_vec(),
                found: bv.shape().to_vec(),
            });
        }
        let mut y = av.clone();
        y.add_assign(bv);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(y, Op::Add(a, b), ng))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let y = self.value(x).scale(factor);
        let ng = self.needs(x);
        self.push(y, Op::Scale(x, factor), ng)
    }

    pub fn gather(&mut self, x: Var, idx: Arc<[usize]>) -> Var {
        let y = self.value(x).select_rows(&idx);
        let ng = self.needs(x);
        self.push(y, Op::Gather { x, idx }, ng)
    }

    /// `out[idx[r]] += x[r]` over `out_rows` rows. Each output entry is a
    /// [`canonical_sum`] of its contributions, so it does not depend on the
    /// order of the rows of `x`.
    pub fn scatter_sum(&mut self, x: Var, idx: Arc<[usize]>, out_rows: usize) -> Var {
        let xv = self.value(x);
        let cols = xv.cols();
        let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); out_rows];
        for (r, &t) in idx.iter().enumerate() {
            buckets[t].push(r);
        }
        let mut y = Tensor::zeros(&[out_rows, cols]);
        let mut terms = Vec::new();
        for (t, rows) in buckets.iter().enumerate() {
            if rows.is_empty() {
                continue;
            }
            let out = y.row_mut(t);
            for (c, o) in out.iter_mut().enumerate() {
                terms.clear();
                terms.extend(rows.iter().map(|&r| xv.get(r, c)));
                *o = canonical_sum(&mut terms);
            }
        }
        let ng = self.needs(x);
        self.push(y, Op::ScatterSum { x, idx }, ng)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let refs: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let y = Tensor::hcat(&refs);
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(y, Op::Concat(parts.to_vec()), ng)
    }

    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        bias: Var,
        layout: Arc<AttentionLayout>,
    ) -> Result<Var, NnError> {
        let (y, weights) = attention_forward(self.value(q), self.value(k), self.value(v), self.value(bias), &layout)?;
        let ng = [q, k, v, bias].iter().any(|&x| self.needs(x));
        Ok(self.push(y, Op::Attention { q, k, v, bias, layout, weights }, ng))
    }

    /// Attention weights recorded by an attention node.
    pub fn attention_weights(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention { weights, .. } => Some(weights),
            _ => None,
        }
    }

    /// Mean binary cross-entropy on logits over unmasked entries. Returns
    /// `None` when nothing is unmasked.
    pub fn masked_bce(&mut self, logits: Var, targets: Arc<[f64]>, mask: Arc<[bool]>) -> Option<Var> {
        let z = self.value(logits);
        assert_eq!(z.len(), targets.len());
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return None;
        }
        let total: f64 = z
            .data()
            .iter()
            .zip(targets.iter())
            .zip(mask.iter())
            .filter(|(_, &m)| m)
            .map(|((&zi, &yi), _)| zi.max(0.0) - zi * yi + (-zi.abs()).exp().ln_1p())
            .sum();
        let ng = self.needs(logits);
        Some(self.push(Tensor::scalar(total / count as f64), Op::MaskedBce { logits, targets, mask, count }, ng))
    }

    /// Mean absolute error over unmasked entries.
    pub fn masked_mae(&mut self, pred: Var, targets: Arc<[f64]>, mask: Arc<[bool]>) -> Option<Var> {
        let p = self.value(pred);
        assert_eq!(p.len(), targets.len());
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return None;
        }
        let total: f64 = p
            .data()
            .iter()
            .zip(targets.iter())
            .zip(mask.iter())
            .filter(|(_, &m)| m)
            .map(|((&pi, &yi), _)| (pi - yi).abs())
            .sum();
        let ng = self.needs(pred);
        Some(self.push(Tensor::scalar(total / count as f64), Op::MaskedMae { pred, targets, mask, count }, ng))
    }

    /// Average of scalar nodes.
    pub fn mean(&mut self, scalars: &[Var]) -> Var {
        assert!(!scalars.is_empty(), "mean of nothing");
        let total: f64 = scalars.iter().map(|&s| self.value(s).data()[0]).sum();
        let ng = scalars.iter().any(|&s| self.needs(s));
        self.push(Tensor::scalar(total / scalars.len() as f64), Op::Mean(scalars.to_vec()), ng)
    }

    /// Backpropagates from `output`, seeded with `seed` (ones for a scalar
    /// loss).
    pub fn backward_with(&self, output: Var, seed: Tensor) -> Gradients {
        self.backward_seeded(vec![(output, seed)])
    }

    /// Backpropagates from several outputs at once; the result is the
    /// gradient of `Σ seedᵢ · outputᵢ`.
    pub fn backward_seeded(&self, seeds: Vec<(Var, Tensor)>) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let last = seeds.iter().map(|(v, _)| v.0).max().unwrap_or(0);
        for (v, s) in seeds {
            match &mut grads[v.0] {
                Some(g) => g.add_assign(&s),
                slot => *slot = Some(s),
            }
        }
        for idx in (0..=last.min(self.nodes.len().saturating_sub(1))).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads, params: self.params.clone() }
    }

    pub fn backward(&self, loss: Var) -> Gradients {
        let seed = Tensor::filled(self.value(loss).shape(), 1.0);
        self.backward_with(loss, seed)
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (gx, gw, gb) = linear_backward(self.value(*x), self.value(*w), g);
                self.acc(grads, *x, gx);
                self.acc(grads, *w, gw);
                self.acc(grads, *b, Tensor::new(self.value(*b).shape().to_vec(), gb.into_data()).unwrap());
            }
            Op::Relu(x) => self.acc(grads, *x, relu_backward(self.value(*x), g)),
            Op::LayerNorm { x, gain, bias, cache } => {
                let (gx, gg, gb) = layernorm_backward(cache, self.value(*gain), g);
                self.acc(grads, *x, gx);
                self.acc(grads, *gain, Tensor::new(self.value(*gain).shape().to_vec(), gg.into_data()).unwrap());
                self.acc(grads, *bias, Tensor::new(self.value(*bias).shape().to_vec(), gb.into_data()).unwrap());
            }
            Op::Mul { x, factors } => {
                let data = g.data().iter().zip(factors).map(|(a, b)| a * b).collect();
                self.acc(grads, *x, Tensor::new(g.shape().to_vec(), data).unwrap());
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Scale(x, f) => self.acc(grads, *x, g.scale(*f)),
            Op::Gather { x, idx } => {
                let xv = self.value(*x);
                let mut gx = Tensor::zeros(&[xv.rows(), xv.cols()]);
                for (r, &src) in idx.iter().enumerate() {
                    for (dst, v) in gx.row_mut(src).iter_mut().zip(g.row(r)) {
                        *dst += v;
                    }
                }
                self.acc(grads, *x, gx);
            }
            Op::ScatterSum { x, idx } => self.acc(grads, *x, g.select_rows(idx)),
            Op::Concat(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    let mut data = Vec::with_capacity(g.rows() * w);
                    for r in 0..g.rows() {
                        data.extend_from_slice(&g.row(r)[start..start + w]);
                    }
                    start += w;
                    self.acc(grads, p, Tensor::matrix(g.rows(), w, data));
                }
            }
            Op::Attention { q, k, v, bias, layout, weights } => {
                let ag = attention_backward(
                    self.value(*q),
                    self.value(*k),
                    self.value(*v),
                    self.value(*bias),
                    layout,
                    weights,
                    g,
                );
                self.acc(grads, *q, ag.q);
                self.acc(grads, *k, ag.k);
                self.acc(grads, *v, ag.v);
                self.acc(grads, *bias, ag.bias);
            }
            Op::MaskedBce { logits, targets, mask, count } => {
                let scale = g.data()[0] / *count as f64;
                let z = self.value(*logits);
                let data = z
                    .data()
                    .iter()
                    .zip(targets.iter())
                    .zip(mask.iter())
                    .map(|((&zi, &yi), &m)| if m { (sigmoid(zi) - yi) * scale } else { 0.0 })
                    .collect();
                self.acc(grads, *logits, Tensor::new(z.shape().to_vec(), data).unwrap());
            }
            Op::MaskedMae { pred, targets, mask, count } => {
                let scale = g.data()[0] / *count as f64;
                let p = self.value(*pred);
                let data = p
                    .data()
                    .iter()
                    .zip(targets.iter())
                    .zip(mask.iter())
                    .map(|((&pi, &yi), &m)| if !m || pi == yi { 0.0 } else { (pi - yi).signum() * scale })
                    .collect();
                self.acc(grads, *pred, Tensor::new(p.shape().to_vec(), data).unwrap());
            }
            Op::Mean(parts) => {
                let share = g.data()[0] / parts.len() as f64;
                for &p in parts {
                    self.acc(grads, p, Tensor::scalar(share));
                }
            }
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Gradients produced by one backward pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: HashMap<String, Var>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn param(&self, path: &str) -> Option<&Tensor> {
        self.params.get(path).and_then(|&v| self.wrt(v))
    }

    /// Adds every parameter gradient into the matching `Param::grad`.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for (path, &v) in &self.params {
            if let (Some(g), Some(p)) = (self.wrt(v), store.get_mut(path)) {
                p.grad.add_assign(g);
            }
        }
    }
}
