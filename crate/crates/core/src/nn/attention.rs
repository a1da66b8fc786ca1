//! Multi-head scaled dot-product attention with additive per-head bucket
//! biases, evaluated independently inside each graph of a batch.

use super::{canonical_sum, NnError, Tensor};

#[derive(Clone, Debug)]
pub struct AttentionLayout {
    /// Node offsets of each graph in the stacked batch; `len = graphs + 1`.
    pub offsets: Vec<usize>,
    /// Row-major `N_g × N_g` bias-bucket index per graph.
    pub buckets: Vec<Vec<usize>>,
    pub n_heads: usize,
    /// `true` marks a padded key position (indexed over the whole batch).
    pub key_padding: Option<Vec<bool>>,
}

impl AttentionLayout {
    pub fn single(n: usize, buckets: Vec<usize>, n_heads: usize) -> Self {
        Self { offsets: vec![0, n], buckets: vec![buckets], n_heads, key_padding: None }
    }

    fn padded(&self, idx: usize) -> bool {
        self.key_padding.as_ref().is_some_and(|p| p[idx])
    }

    pub fn graphs(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }
}

pub struct AttentionGrads {
    pub q: Tensor,
    pub k: Tensor,
    pub v: Tensor,
    pub bias: Tensor,
}

fn head_dim(width: usize, heads: usize) -> Result<usize, NnError> {
    if heads == 0 || !width.is_multiple_of(heads) {
        return Err(NnError::ShapeMismatch {
            context: "attention heads must divide width".into(),
            expected: vec![heads],
            found: vec![width],
        });
    }
    Ok(width / heads)
}

/// Returns the attended values and the attention weights, stored per graph,
/// per head, as row-major `N × N` blocks.
///
/// Softmax denominators and weighted value sums use [`canonical_sum`], so a
/// node relabeling permutes the output rows bitwise-exactly.
pub fn attention_forward(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    bias: &Tensor,
    layout: &AttentionLayout,
) -> Result<(Tensor, Vec<f64>), NnError> {
    let width = q.cols();
    if k.shape() != q.shape() || v.shape() != q.shape() {
        return Err(NnError::ShapeMismatch {
            context: "attention q/k/v".into(),
            expected: q.shape().to_vec(),
            found: k.shape().to_vec(),
        });
    }
    let heads = layout.n_heads;
    let dh = head_dim(width, heads)?;
    if bias.rows() != heads {
        return Err(NnError::ShapeMismatch {
            context: "attention bias table rows".into(),
            expected: vec![heads],
            found: bias.shape().to_vec(),
        });
    }
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Tensor::zeros(&[q.rows(), width]);
    let mut weights = Vec::new();
    let mut logits = Vec::new();
    let mut terms = Vec::new();
    for g in 0..layout.graphs() {
        let (s, e) = (layout.offsets[g], layout.offsets[g + 1]);
        let n = e - s;
        let buckets = &layout.buckets[g];
        debug_assert_eq!(buckets.len(), n * n);
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            for i in 0..n {
                let qi = &q.row(s + i)[cols.clone()];
                logits.clear();
                let mut max = f64::NEG_INFINITY;
                for j in 0..n {
                    let l = if layout.padded(s + j) {
                        f64::NEG_INFINITY
                    } else {
                        let kj = &k.row(s + j)[cols.clone()];
                        let dot: f64 = qi.iter().zip(kj).map(|(a, b)| a * b).sum();
                        dot * scale + bias.get(h, buckets[i * n + j])
                    };
                    max = max.max(l);
                    logits.push(l);
                }
                if max == f64::NEG_INFINITY {
                    return Err(NnError::AllPadded { row: s + i });
                }
                let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
                let mut scratch = exps.clone();
                let denom = canonical_sum(&mut scratch);
                let row_start = weights.len();
                weights.extend(exps.iter().map(|x| x / denom));
                let a = &weights[row_start..];
                let orow = out.row_mut(s + i);
                for (c, col) in cols.clone().enumerate() {
                    terms.clear();
                    terms.extend((0..n).map(|j| a[j] * v.get(s + j, col)));
                    orow[h * dh + c] = canonical_sum(&mut terms);
                }
            }
        }
    }
    Ok((out, weights))
}

pub fn attention_backward(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    bias: &Tensor,
    layout: &AttentionLayout,
    weights: &[f64],
    grad_out: &Tensor,
) -> AttentionGrads {
    let width = q.cols();
    let heads = layout.n_heads;
    let dh = width / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut gq = Tensor::zeros(q.shape());
    let mut gk = Tensor::zeros(k.shape());
    let mut gv = Tensor::zeros(v.shape());
    let mut gb = Tensor::zeros(bias.shape());
    let mut offset = 0;
    let mut ga = Vec::new();
    for g in 0..layout.graphs() {
        let (s, e) = (layout.offsets[g], layout.offsets[g + 1]);
        let n = e - s;
        let buckets = &layout.buckets[g];
        for h in 0..heads {
            let c0 = h * dh;
            for i in 0..n {
                let a = &weights[offset..offset + n];
                offset += n;
                let go = &grad_out.row(s + i)[c0..c0 + dh];
                ga.clear();
                for j in 0..n {
                    let vj = &v.row(s + j)[c0..c0 + dh];
                    ga.push(go.iter().zip(vj).map(|(x, y)| x * y).sum::<f64>());
                    if a[j] != 0.0 {
                        for (dst, gval) in gv.row_mut(s + j)[c0..c0 + dh].iter_mut().zip(go) {
                            *dst += a[j] * gval;
                        }
                    }
                }
                let weighted: f64 = a.iter().zip(&ga).map(|(x, y)| x * y).sum();
                for j in 0..n {
                    let gl = a[j] * (ga[j] - weighted);
                    if gl == 0.0 {
                        continue;
                    }
                    let b = buckets[i * n + j];
                    gb.set(h, b, gb.get(h, b) + gl);
                    let (qrow, krow) = (q.row(s + i)[c0..c0 + dh].to_vec(), k.row(s + j)[c0..c0 + dh].to_vec());
                    for (dst, kv) in gq.row_mut(s + i)[c0..c0 + dh].iter_mut().zip(&krow) {
                        *dst += scale * gl * kv;
                    }
                    for (dst, qv) in gk.row_mut(s + j)[c0..c0 + dh].iter_mut().zip(&qrow) {
                        *dst += scale * gl * qv;
                    }
                }
            }
        }
    }
    AttentionGrads { q: gq, k: gk, v: gv, bias: gb }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_node_attends_to_itself() {
        let q = Tensor::matrix(1, 4, vec![0.3, -1.0, 2.0, 0.1]);
        let v = Tensor::matrix(1, 4, vec![1., 2., 3., 4.]);
        let bias = Tensor::zeros(&[2, 7]);
        let (out, w) = attention_forward(&q, &q, &v, &bias, &AttentionLayout::single(1, vec![0], 2)).unwrap();
        assert_eq!(w, vec![1.0, 1.0]);
        assert_eq!(out, v);
    }

    #[test]
    fn identical_keys_give_uniform_weights() {
        let n = 5;
        let q = Tensor::matrix(n, 2, (0..2 * n).map(|i| i as f64 * 0.1).collect());
        let k = Tensor::matrix(n, 2, [0.4, -0.3].repeat(n));
        let v = Tensor::matrix(n, 2, (0..2 * n).map(|i| i as f64).collect());
        let layout = AttentionLayout::single(n, vec![1; n * n], 1);
        let (_, w) = attention_forward(&q, &k, &v, &Tensor::zeros(&[1, 7]), &layout).unwrap();
        for x in w {
            assert!((x - 1.0 / n as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn padded_keys_get_zero_weight_and_rows_sum_to_one() {
        let n = 4;
        let q = Tensor::matrix(n, 2, vec![0.1, 0.2, -0.5, 0.3, 1.0, 0.0, 0.7, -0.7]);
        let mut layout = AttentionLayout::single(n, (0..n * n).map(|i| i % 3).collect(), 1);
        layout.key_padding = Some(vec![false, true, false, false]);
        let bias = Tensor::matrix(1, 3, vec![0.5, -0.2, 0.1]);
        let (_, w) = attention_forward(&q, &q, &q, &bias, &layout).unwrap();
        for i in 0..n {
            let row = &w[i * n..(i + 1) * n];
            assert_eq!(row[1], 0.0);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn all_padded_is_an_error() {
        let q = Tensor::matrix(2, 2, vec![0.0; 4]);
        let mut layout = AttentionLayout::single(2, vec![0; 4], 1);
        layout.key_padding = Some(vec![true, true]);
        let err = attention_forward(&q, &q, &q, &Tensor::zeros(&[1, 2]), &layout).unwrap_err();
        assert!(matches!(err, NnError::AllPadded { row: 0 }));
    }
}
