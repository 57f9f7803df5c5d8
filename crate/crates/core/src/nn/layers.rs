//! Forward and backward kernels for the layer types the classifier uses.
//!
//! Convolutions are "valid" (no padding) with stride 1. Convolution sums are
//! accumulated in `f64` and rounded to `f32` once per output element.

use rand::{Rng, RngCore};

use super::{NnError, Tensor};

fn shape_err(msg: impl Into<String>) -> NnError {
    NnError::ShapeMismatch(msg.into())
}

fn to_f64(values: &[f32]) -> Vec<f64> {
    values.iter().map(|&v| v as f64).collect()
}

struct ConvDims {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
    ho: usize,
    wo: usize,
}

fn conv_dims(input: &Tensor, weights: &Tensor) -> Result<ConvDims, NnError> {
    let (c_in, h, w) = input.dims3()?;
    let [c_out, wc, k, k2] = weights.shape()[..] else {
        return Err(shape_err(format!(
            "conv weights must be rank 4, got {:?}",
            weights.shape()
        )));
    };
    if wc != c_in {
        return Err(shape_err(format!(
            "conv expects {wc} input channels, input has {c_in}"
        )));
    }
    if k != k2 {
        return Err(shape_err(format!("conv kernel must be square, got {k}x{k2}")));
    }
    if h < k || w < k {
        return Err(shape_err(format!(
            "input {h}x{w} smaller than {k}x{k} kernel"
        )));
    }
    Ok(ConvDims {
        c_in,
        h,
        w,
        c_out,
        k,
        ho: h - k + 1,
        wo: w - k + 1,
    })
}

/// `out[o,y,x] = bias[o] + Σ_{c,i,j} input[c,y+i,x+j] · weights[o,c,i,j]`.
pub fn conv2d_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor, NnError> {
    let d = conv_dims(input, weights)?;
    if bias.shape() != [d.c_out] {
        return Err(shape_err(format!(
            "conv bias must have shape [{}], got {:?}",
            d.c_out,
            bias.shape()
        )));
    }
    let x = to_f64(input.data());
    let wts = weights.data();
    let plane_in = d.h * d.w;
    let plane_out = d.ho * d.wo;
    let mut out = vec![0.0f32; d.c_out * plane_out];
    let mut acc = vec![0.0f64; d.wo];
    for o in 0..d.c_out {
        let w_o = &wts[o * d.c_in * d.k * d.k..(o + 1) * d.c_in * d.k * d.k];
        for y in 0..d.ho {
            acc.fill(bias.data()[o] as f64);
            for c in 0..d.c_in {
                let plane = &x[c * plane_in..(c + 1) * plane_in];
                for i in 0..d.k {
                    let row = &plane[(y + i) * d.w..(y + i + 1) * d.w];
                    for j in 0..d.k {
                        let wv = w_o[(c * d.k + i) * d.k + j] as f64;
                        for (a, s) in acc.iter_mut().zip(&row[j..j + d.wo]) {
                            *a += wv * s;
                        }
                    }
                }
            }
            let base = o * plane_out + y * d.wo;
            for (dst, a) in out[base..base + d.wo].iter_mut().zip(&acc) {
                *dst = *a as f32;
            }
        }
    }
    Tensor::new(vec![d.c_out, d.ho, d.wo], out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    /// `None` when the caller asked to skip the input gradient.
    pub input: Option<Tensor>,
    pub weights: Tensor,
    pub bias: Tensor,
}

pub fn conv2d_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
) -> Result<ConvGrads, NnError> {
    conv2d_backward_impl(input, weights, grad_out, true)
}

/// As [`conv2d_backward`] but optionally skips the input gradient, which the
/// first layer of a network never needs.
pub fn conv2d_backward_impl(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
    want_input_grad: bool,
) -> Result<ConvGrads, NnError> {
    let d = conv_dims(input, weights)?;
    if grad_out.shape() != [d.c_out, d.ho, d.wo] {
        return Err(shape_err(format!(
            "conv grad_out must have shape [{}, {}, {}], got {:?}",
            d.c_out,
            d.ho,
            d.wo,
            grad_out.shape()
        )));
    }
    let x = to_f64(input.data());
    let g = to_f64(grad_out.data());
    let wts = weights.data();
    let plane_in = d.h * d.w;
    let plane_out = d.ho * d.wo;
    let kk = d.k * d.k;

    let mut grad_w = vec![0.0f32; d.c_out * d.c_in * kk];
    let mut grad_b = vec![0.0f32; d.c_out];
    let mut grad_x = if want_input_grad {
        vec![0.0f64; d.c_in * plane_in]
    } else {
        Vec::new()
    };

    let mut wacc = vec![0.0f64; kk];
    for o in 0..d.c_out {
        let go = &g[o * plane_out..(o + 1) * plane_out];
        grad_b[o] = go.iter().sum::<f64>() as f32;
        for c in 0..d.c_in {
            let plane = &x[c * plane_in..(c + 1) * plane_in];
            let w_oc = &wts[(o * d.c_in + c) * kk..(o * d.c_in + c + 1) * kk];
            wacc.fill(0.0);
            for y in 0..d.ho {
                let gr = &go[y * d.wo..(y + 1) * d.wo];
                for i in 0..d.k {
                    let row = &plane[(y + i) * d.w..(y + i + 1) * d.w];
                    for j in 0..d.k {
                        wacc[i * d.k + j] += row[j..j + d.wo]
                            .iter()
                            .zip(gr)
                            .map(|(a, b)| a * b)
                            .sum::<f64>();
                    }
                }
                if want_input_grad {
                    let gx = &mut grad_x[c * plane_in..(c + 1) * plane_in];
                    for i in 0..d.k {
                        let row = &mut gx[(y + i) * d.w..(y + i + 1) * d.w];
                        for j in 0..d.k {
                            let wv = w_oc[i * d.k + j] as f64;
                            for (a, b) in row[j..j + d.wo].iter_mut().zip(gr) {
                                *a += wv * b;
                            }
                        }
                    }
                }
            }
            for (dst, a) in grad_w[(o * d.c_in + c) * kk..(o * d.c_in + c + 1) * kk]
                .iter_mut()
                .zip(&wacc)
            {
                *dst = *a as f32;
            }
        }
    }

    let input_grad = if want_input_grad {
        Some(Tensor::new(
            vec![d.c_in, d.h, d.w],
            grad_x.into_iter().map(|v| v as f32).collect(),
        )?)
    } else {
        None
    };
    Ok(ConvGrads {
        input: input_grad,
        weights: Tensor::new(weights.shape().to_vec(), grad_w)?,
        bias: Tensor::new(vec![d.c_out], grad_b)?,
    })
}

/// Non-overlapping `pool x pool` max pooling. Trailing rows/columns that do
/// not fill a window are dropped. Returns the pooled tensor and, per output
/// element, the flat input index that won (first in scan order on ties).
pub fn maxpool2d_forward(input: &Tensor, pool: usize) -> Result<(Tensor, Vec<usize>), NnError> {
    let (c, h, w) = input.dims3()?;
    if pool == 0 || h < pool || w < pool {
        return Err(shape_err(format!(
            "cannot max-pool {h}x{w} with window {pool}"
        )));
    }
    let (ho, wo) = (h / pool, w / pool);
    let x = input.data();
    let mut out = Vec::with_capacity(c * ho * wo);
    let mut argmax = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        for y in 0..ho {
            for xo in 0..wo {
                let mut best_idx = ch * h * w + (y * pool) * w + xo * pool;
                let mut best = x[best_idx];
                for i in 0..pool {
                    for j in 0..pool {
                        let idx = ch * h * w + (y * pool + i) * w + xo * pool + j;
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    Ok((Tensor::new(vec![c, ho, wo], out)?, argmax))
}

pub fn maxpool2d_backward(
    grad_out: &Tensor,
    argmax: &[usize],
    input_shape: &[usize],
) -> Result<Tensor, NnError> {
    if grad_out.len() != argmax.len() {
        return Err(shape_err(format!(
            "pool grad has {} values but {} routes were recorded",
            grad_out.len(),
            argmax.len()
        )));
    }
    let mut grad = Tensor::zeros(input_shape);
    let gi = grad.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        let slot = gi
            .get_mut(idx)
            .ok_or_else(|| shape_err("pool route outside the input"))?;
        *slot += g;
    }
    Ok(grad)
}

pub fn relu_forward(input: &Tensor) -> Tensor {
    let data = input.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::new(input.shape().to_vec(), data).expect("shape preserved")
}

/// Gradient through ReLU; the derivative at exactly 0 is taken as 0.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor, NnError> {
    if input.shape() != grad_out.shape() {
        return Err(shape_err(format!(
            "relu grad shape {:?} does not match input {:?}",
            grad_out.shape(),
            input.shape()
        )));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

fn dense_dims(input: &Tensor, weights: &Tensor) -> Result<(usize, usize), NnError> {
    let [out_dim, in_dim] = weights.shape()[..] else {
        return Err(shape_err(format!(
            "dense weights must be rank 2, got {:?}",
            weights.shape()
        )));
    };
    if input.len() != in_dim {
        return Err(shape_err(format!(
            "dense layer expects {in_dim} inputs, got {}",
            input.len()
        )));
    }
    Ok((out_dim, in_dim))
}

/// `out[o] = bias[o] + Σ_i weights[o,i] · input[i]`; `weights` is `[out, in]`.
pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor, NnError> {
    let (out_dim, in_dim) = dense_dims(input, weights)?;
    if bias.shape() != [out_dim] {
        return Err(shape_err(format!(
            "dense bias must have shape [{out_dim}], got {:?}",
            bias.shape()
        )));
    }
    let x = input.data();
    let out = (0..out_dim)
        .map(|o| {
            let row = &weights.data()[o * in_dim..(o + 1) * in_dim];
            let dot: f64 = row.iter().zip(x).map(|(&a, &b)| a as f64 * b as f64).sum();
            (bias.data()[o] as f64 + dot) as f32
        })
        .collect();
    Tensor::new(vec![out_dim], out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

pub fn dense_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
) -> Result<DenseGrads, NnError> {
    let (out_dim, in_dim) = dense_dims(input, weights)?;
    if grad_out.len() != out_dim {
        return Err(shape_err(format!(
            "dense grad_out must have {out_dim} values, got {}",
            grad_out.len()
        )));
    }
    let x = input.data();
    let g = grad_out.data();
    let mut grad_w = vec![0.0f32; out_dim * in_dim];
    let mut grad_x = vec![0.0f64; in_dim];
    for o in 0..out_dim {
        let go = g[o];
        let row = &weights.data()[o * in_dim..(o + 1) * in_dim];
        for ((gw, &xi), (gx, &w)) in grad_w[o * in_dim..(o + 1) * in_dim]
            .iter_mut()
            .zip(x)
            .zip(grad_x.iter_mut().zip(row))
        {
            *gw = go * xi;
            *gx += go as f64 * w as f64;
        }
    }
    Ok(DenseGrads {
        input: Tensor::new(
            input.shape().to_vec(),
            grad_x.into_iter().map(|v| v as f32).collect(),
        )?,
        weights: Tensor::new(vec![out_dim, in_dim], grad_w)?,
        bias: Tensor::new(vec![out_dim], g.to_vec())?,
    })
}

/// Inverted dropout. In training mode each element is zeroed with
/// probability `rate` and survivors are scaled by `1/(1-rate)`; the returned
/// mask holds the per-element multiplier. Without an RNG (inference) the
/// input passes through unchanged and no mask is produced.
pub fn dropout_forward(
    input: &Tensor,
    rate: f32,
    rng: Option<&mut dyn RngCore>,
) -> Result<(Tensor, Option<Vec<f32>>), NnError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NnError::InvalidLayer(format!(
            "dropout rate {rate} outside [0, 1)"
        )));
    }
    let Some(rng) = rng else {
        return Ok((input.clone(), None));
    };
    if rate == 0.0 {
        return Ok((input.clone(), None));
    }
    let keep_scale = 1.0 / (1.0 - rate);
    let mask: Vec<f32> = (0..input.len())
        .map(|_| {
            if rng.random::<f32>() < rate {
                0.0
            } else {
                keep_scale
            }
        })
        .collect();
    let data = input
        .data()
        .iter()
        .zip(&mask)
        .map(|(x, m)| x * m)
        .collect();
    Ok((Tensor::new(input.shape().to_vec(), data)?, Some(mask)))
}

pub fn dropout_backward(grad_out: &Tensor, mask: Option<&[f32]>) -> Result<Tensor, NnError> {
    match mask {
        None => Ok(grad_out.clone()),
        Some(mask) if mask.len() == grad_out.len() => Tensor::new(
            grad_out.shape().to_vec(),
            grad_out.data().iter().zip(mask).map(|(g, m)| g * m).collect(),
        ),
        Some(mask) => Err(shape_err(format!(
            "dropout mask has {} entries, grad has {}",
            mask.len(),
            grad_out.len()
        ))),
    }
}

pub fn flatten(input: &Tensor) -> Tensor {
    Tensor::new(vec![input.len()], input.data().to_vec()).expect("non-empty tensor")
}

/// Numerically stable softmax, computed in `f64`.
pub fn softmax(logits: &Tensor) -> Tensor {
    let max = logits
        .data()
        .iter()
        .fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let exps: Vec<f64> = logits.data().iter().map(|&v| (v as f64 - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Tensor::new(
        logits.shape().to_vec(),
        exps.iter().map(|e| (e / total) as f32).collect(),
    )
    .expect("shape preserved")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxCrossEntropy {
    pub loss: f64,
    pub grad_logits: Tensor,
    pub probs: Tensor,
}

/// Cross-entropy of `softmax(logits)` against `true_class`; gradient is
/// `probs - onehot(true_class)`.
pub fn softmax_cross_entropy(
    logits: &Tensor,
    true_class: usize,
) -> Result<SoftmaxCrossEntropy, NnError> {
    let k = logits.len();
    if true_class >= k {
        return Err(shape_err(format!(
            "class {true_class} out of range for {k} logits"
        )));
    }
    let max = logits
        .data()
        .iter()
        .fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let shifted: Vec<f64> = logits.data().iter().map(|&v| v as f64 - max).collect();
    let log_total = shifted.iter().map(|s| s.exp()).sum::<f64>().ln();
    let loss = log_total - shifted[true_class];
    let probs: Vec<f64> = shifted.iter().map(|s| (s - log_total).exp()).collect();
    let grad = probs
        .iter()
        .enumerate()
        .map(|(i, &p)| (if i == true_class { p - 1.0 } else { p }) as f32)
        .collect();
    Ok(SoftmaxCrossEntropy {
        loss,
        grad_logits: Tensor::new(logits.shape().to_vec(), grad)?,
        probs: Tensor::new(
            logits.shape().to_vec(),
            probs.into_iter().map(|p| p as f32).collect(),
        )?,
    })
}
