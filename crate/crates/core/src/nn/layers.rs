//! Layer kernels and their exact reverse-mode derivatives.
//!
//! The free functions are the kernels shared with the autodiff tape; [`Layer`]
//! wraps them into the forward/backward pair used for standalone layer
//! evaluation.

use rand::Rng;

use super::{matmul, matmul_nt, matmul_tn, Mode, NnError, Tensor};

pub const LAYERNORM_EPS: f64 = 1e-5;

fn check_finite(x: &Tensor, context: &str) -> Result<(), NnError> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(NnError::NonFinite { context: context.into() })
    }
}

fn mismatch(context: &str, expected: &[usize], found: &[usize]) -> NnError {
    NnError::ShapeMismatch { context: context.into(), expected: expected.to_vec(), found: found.to_vec() }
}

/// `x · W + b` with `W: in×out`, `b: out`.
pub fn linear_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor, NnError> {
    if x.cols() != w.rows() {
        return Err(mismatch("linear input", &[x.rows(), w.rows()], x.shape()));
    }
    if b.len() != w.cols() {
        return Err(mismatch("linear bias", &[w.cols()], b.shape()));
    }
    let mut y = matmul(x, w);
    let bias = b.data();
    for r in 0..y.rows() {
        for (v, bb) in y.row_mut(r).iter_mut().zip(bias) {
            *v += bb;
        }
    }
    Ok(y)
}

/// Returns `(grad_x, grad_w, grad_b)`.
pub fn linear_backward(x: &Tensor, w: &Tensor, grad_out: &Tensor) -> (Tensor, Tensor, Tensor) {
    let gx = matmul_nt(grad_out, w);
    let gw = matmul_tn(x, grad_out);
    let mut gb = vec![0.0; w.cols()];
    for r in 0..grad_out.rows() {
        for (acc, g) in gb.iter_mut().zip(grad_out.row(r)) {
            *acc += g;
        }
    }
    (gx, gw, Tensor::vector(gb))
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Tensor {
    let data = x.data().iter().zip(grad_out.data()).map(|(&xv, &g)| if xv > 0.0 { g } else { 0.0 }).collect();
    Tensor::new(x.shape().to_vec(), data).expect("relu shapes")
}

#[derive(Clone, Debug)]
pub struct LayerNormCache {
    pub normalized: Tensor,
    pub inv_std: Vec<f64>,
}

/// Normalizes the last axis (population variance, epsilon [`LAYERNORM_EPS`]),
/// then applies per-feature gain and bias.
pub fn layernorm_forward(x: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<(Tensor, LayerNormCache), NnError> {
    let d = x.cols();
    if gain.len() != d || bias.len() != d {
        return Err(mismatch("layernorm parameters", &[d], gain.shape()));
    }
    let mut normalized = Tensor::zeros(x.shape());
    let mut y = Tensor::zeros(x.shape());
    let mut inv_std = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + LAYERNORM_EPS).sqrt();
        inv_std.push(inv);
        let nrow = normalized.row_mut(r);
        for (n, v) in nrow.iter_mut().zip(row) {
            *n = (v - mean) * inv;
        }
        let nrow = normalized.row(r).to_vec();
        for (j, out) in y.row_mut(r).iter_mut().enumerate() {
            *out = gain.data()[j] * nrow[j] + bias.data()[j];
        }
    }
    Ok((y, LayerNormCache { normalized, inv_std }))
}

/// Returns `(grad_x, grad_gain, grad_bias)`.
pub fn layernorm_backward(cache: &LayerNormCache, gain: &Tensor, grad_out: &Tensor) -> (Tensor, Tensor, Tensor) {
    let d = grad_out.cols();
    let mut gx = Tensor::zeros(grad_out.shape());
    let mut ggain = vec![0.0; d];
    let mut gbias = vec![0.0; d];
    let mut gxhat = vec![0.0; d];
    for r in 0..grad_out.rows() {
        let g = grad_out.row(r);
        let xhat = cache.normalized.row(r);
        for j in 0..d {
            gxhat[j] = g[j] * gain.data()[j];
            ggain[j] += g[j] * xhat[j];
            gbias[j] += g[j];
        }
        let mean_g = gxhat.iter().sum::<f64>() / d as f64;
        let mean_gx = gxhat.iter().zip(xhat).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        let inv = cache.inv_std[r];
        for (j, out) in gx.row_mut(r).iter_mut().enumerate() {
            *out = inv * (gxhat[j] - mean_g - xhat[j] * mean_gx);
        }
    }
    (gx, Tensor::vector(ggain), Tensor::vector(gbias))
}

/// Inverted-dropout multipliers: each entry is 0 with probability `p`,
/// otherwise `1 / (1 - p)`.
pub fn dropout_mask(p: f64, n: usize, rng: &mut impl Rng) -> Result<Vec<f64>, NnError> {
    if !(0.0..1.0).contains(&p) {
        return Err(NnError::DropoutProbability(p));
    }
    if p == 0.0 {
        return Ok(vec![1.0; n]);
    }
    let keep = 1.0 / (1.0 - p);
    Ok((0..n).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect())
}

/// The fixed layer set.
#[derive(Clone, Debug)]
pub enum Layer {
    Linear {
        weight: Tensor,
        bias: Tensor,
    },
    /// linear → relu → linear
    Mlp2 {
        w1: Tensor,
        b1: Tensor,
        w2: Tensor,
        b2: Tensor,
    },
    LayerNorm {
        gain: Tensor,
        bias: Tensor,
    },
    Relu,
    Dropout {
        p: f64,
    },
}

/// Whatever a forward call must hand to its matching backward call.
#[derive(Clone, Debug)]
pub enum Residuals {
    Linear { input: Tensor },
    Mlp2 { input: Tensor, pre: Tensor, hidden: Tensor },
    LayerNorm(LayerNormCache),
    Relu { input: Tensor },
    Dropout { mask: Vec<f64> },
}

impl Layer {
    pub fn forward(&self, x: &Tensor, mode: Mode, rng: &mut impl Rng) -> Result<(Tensor, Residuals), NnError> {
        check_finite(x, "layer input")?;
        match self {
            Layer::Linear { weight, bias } => {
                Ok((linear_forward(x, weight, bias)?, Residuals::Linear { input: x.clone() }))
            }
            Layer::Mlp2 { w1, b1, w2, b2 } => {
                let pre = linear_forward(x, w1, b1)?;
                let hidden = relu_forward(&pre);
                let y = linear_forward(&hidden, w2, b2)?;
                Ok((y, Residuals::Mlp2 { input: x.clone(), pre, hidden }))
            }
            Layer::LayerNorm { gain, bias } => {
                let (y, cache) = layernorm_forward(x, gain, bias)?;
                Ok((y, Residuals::LayerNorm(cache)))
            }
            Layer::Relu => Ok((relu_forward(x), Residuals::Relu { input: x.clone() })),
            Layer::Dropout { p } => {
                let mask = match mode {
                    Mode::Eval => vec![1.0; x.len()],
                    Mode::Train => dropout_mask(*p, x.len(), rng)?,
                };
                let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
                Ok((Tensor::new(x.shape().to_vec(), data)?, Residuals::Dropout { mask }))
            }
        }
    }

    /// Returns the input gradient and parameter gradients in the order of
    /// [`Layer::params`].
    pub fn backward(&self, grad_out: &Tensor, residuals: &Residuals) -> Result<(Tensor, Vec<Tensor>), NnError> {
        match (self, residuals) {
            (Layer::Linear { weight, .. }, Residuals::Linear { input }) => {
                if grad_out.rows() != input.rows() || grad_out.cols() != weight.cols() {
                    return Err(mismatch("linear backward", &[input.rows(), weight.cols()], grad_out.shape()));
                }
                let (gx, gw, gb) = linear_backward(input, weight, grad_out);
                Ok((gx, vec![gw, gb]))
            }
            (Layer::Mlp2 { w1, w2, .. }, Residuals::Mlp2 { input, pre, hidden }) => {
                if grad_out.rows() != input.rows() || grad_out.cols() != w2.cols() {
                    return Err(mismatch("mlp2 backward", &[input.rows(), w2.cols()], grad_out.shape()));
                }
                let (gh, gw2, gb2) = linear_backward(hidden, w2, grad_out);
                let gpre = relu_backward(pre, &gh);
                let (gx, gw1, gb1) = linear_backward(input, w1, &gpre);
                Ok((gx, vec![gw1, gb1, gw2, gb2]))
            }
            (Layer::LayerNorm { gain, .. }, Residuals::LayerNorm(cache)) => {
                if grad_out.shape() != cache.normalized.shape() {
                    return Err(mismatch("layernorm backward", cache.normalized.shape(), grad_out.shape()));
                }
                let (gx, gg, gb) = layernorm_backward(cache, gain, grad_out);
                Ok((gx, vec![gg, gb]))
            }
            (Layer::Relu, Residuals::Relu { input }) => {
                if grad_out.shape() != input.shape() {
                    return Err(mismatch("relu backward", input.shape(), grad_out.shape()));
                }
                Ok((relu_backward(input, grad_out), vec![]))
            }
            (Layer::Dropout { .. }, Residuals::Dropout { mask }) => {
                if grad_out.len() != mask.len() {
                    return Err(mismatch("dropout backward", &[mask.len()], &[grad_out.len()]));
                }
                let data = grad_out.data().iter().zip(mask).map(|(g, m)| g * m).collect();
                Ok((Tensor::new(grad_out.shape().to_vec(), data)?, vec![]))
            }
            _ => Err(NnError::ShapeMismatch {
                context: "residuals from a different layer kind".into(),
                expected: vec![],
                found: vec![],
            }),
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Linear { weight, bias } => vec![weight, bias],
            Layer::Mlp2 { w1, b1, w2, b2 } => vec![w1, b1, w2, b2],
            Layer::LayerNorm { gain, bias } => vec![gain, bias],
            Layer::Relu | Layer::Dropout { .. } => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Linear { weight, bias } => vec![weight, bias],
            Layer::Mlp2 { w1, b1, w2, b2 } => vec![w1, b1, w2, b2],
            Layer::LayerNorm { gain, bias } => vec![gain, bias],
            Layer::Relu | Layer::Dropout { .. } => vec![],
        }
    }
}
