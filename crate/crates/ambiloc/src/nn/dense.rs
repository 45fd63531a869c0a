use rayon::prelude::*;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Row count below which linear layers stay single-threaded; splitting tiny
/// matmuls across workers costs more than it saves.
const PAR_ROW_MIN: usize = 8;
const PAR_WORK_MIN: usize = 1 << 15;

/// Affine map `y = W x + b` with `weight` stored `[out, in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LinearParams {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        LinearParams {
            weight: Tensor::zeros(&[out_dim, in_dim]),
            bias: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn zeros_like(&self) -> Self {
        LinearParams {
            weight: self.weight.zeros_like(),
            bias: self.bias.zeros_like(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Applies the affine map to each row of `input` (`[rows, in]`, or `[in]` for
/// a single vector).
pub fn linear_forward(input: &Tensor, params: &LinearParams) -> Result<Tensor> {
    let (rows, in_dim) = rows_and_width(input)?;
    if in_dim != params.in_dim() {
        return Err(Error::shape(format!(
            "linear expects input width {}, got {}",
            params.in_dim(),
            in_dim
        )));
    }
    let out_dim = params.out_dim();
    let w = params.weight.data();
    let b = params.bias.data();
    let x = input.data();

    let mut out = if input.rank() == 1 {
        Tensor::zeros(&[out_dim])
    } else {
        Tensor::zeros(&[rows, out_dim])
    };
    let run_row = |r: usize, out_row: &mut [f64]| {
        let x_row = &x[r * in_dim..(r + 1) * in_dim];
        for o in 0..out_dim {
            let w_row = &w[o * in_dim..(o + 1) * in_dim];
            let mut acc = b[o];
            for i in 0..in_dim {
                acc += w_row[i] * x_row[i];
            }
            out_row[o] = acc;
        }
    };
    if rows >= PAR_ROW_MIN && rows * in_dim * out_dim >= PAR_WORK_MIN {
        out.data_mut()
            .par_chunks_mut(out_dim)
            .enumerate()
            .for_each(|(r, out_row)| run_row(r, out_row));
    } else {
        for (r, out_row) in out.data_mut().chunks_mut(out_dim).enumerate() {
            run_row(r, out_row);
        }
    }
    Ok(out)
}

/// Backward pass of [`linear_forward`]; returns the input gradient and the
/// parameter gradients (same layout as [`LinearParams`]).
pub fn linear_backward(
    input: &Tensor,
    params: &LinearParams,
    grad_out: &Tensor,
) -> Result<(Tensor, LinearParams)> {
    let (rows, in_dim) = rows_and_width(input)?;
    let (g_rows, out_dim) = rows_and_width(grad_out)?;
    if g_rows != rows || out_dim != params.out_dim() || in_dim != params.in_dim() {
        return Err(Error::shape(format!(
            "linear backward shapes disagree: input {:?}, grad {:?}, weight {:?}",
            input.shape(),
            grad_out.shape(),
            params.weight.shape()
        )));
    }
    let w = params.weight.data();
    let x = input.data();
    let g = grad_out.data();

    let mut grad_input = input.zeros_like();
    let gi = grad_input.data_mut();
    let mut grads = params.zeros_like();
    {
        let gw = grads.weight.data_mut();
        for r in 0..rows {
            let x_row = &x[r * in_dim..(r + 1) * in_dim];
            let g_row = &g[r * out_dim..(r + 1) * out_dim];
            let gi_row = &mut gi[r * in_dim..(r + 1) * in_dim];
            for o in 0..out_dim {
                let go = g_row[o];
                if go == 0.0 {
                    continue;
                }
                let w_row = &w[o * in_dim..(o + 1) * in_dim];
                let gw_row = &mut gw[o * in_dim..(o + 1) * in_dim];
                for i in 0..in_dim {
                    gi_row[i] += w_row[i] * go;
                    gw_row[i] += x_row[i] * go;
                }
            }
        }
    }
    {
        let gb = grads.bias.data_mut();
        for r in 0..rows {
            let g_row = &g[r * out_dim..(r + 1) * out_dim];
            for o in 0..out_dim {
                gb[o] += g_row[o];
            }
        }
    }
    Ok((grad_input, grads))
}

fn rows_and_width(t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [w] => Ok((1, *w)),
        [r, w] => Ok((*r, *w)),
        other => Err(Error::shape(format!(
            "expected rank-1 or rank-2 tensor, got shape {other:?}"
        ))),
    }
}

/// Per-vector normalization over the last axis followed by gain and offset.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNormParams {
    pub gain: Tensor,
    pub offset: Tensor,
    pub epsilon: f64,
}

impl LayerNormParams {
    /// Identity-initialized parameters (gain 1, offset 0).
    pub fn identity(width: usize) -> Self {
        LayerNormParams {
            gain: Tensor::filled(&[width], 1.0),
            offset: Tensor::zeros(&[width]),
            epsilon: 1e-5,
        }
    }

    pub fn width(&self) -> usize {
        self.gain.len()
    }

    pub fn zeros_like(&self) -> Self {
        LayerNormParams {
            gain: self.gain.zeros_like(),
            offset: self.offset.zeros_like(),
            epsilon: self.epsilon,
        }
    }

    pub fn param_count(&self) -> usize {
        self.gain.len() + self.offset.len()
    }
}

pub struct LayerNormCache {
    /// Normalized input before gain/offset, same shape as the input.
    x_hat: Tensor,
    /// One `1/sqrt(var + eps)` per normalized vector.
    inv_std: Vec<f64>,
}

/// Normalizes every last-axis vector to zero mean and unit variance
/// (population variance, guarded by `epsilon`), then applies gain and offset.
pub fn layer_norm_forward(
    input: &Tensor,
    params: &LayerNormParams,
) -> Result<(Tensor, LayerNormCache)> {
    let width = *input
        .shape()
        .last()
        .ok_or_else(|| Error::shape("layer norm needs rank >= 1".to_string()))?;
    if width != params.width() {
        return Err(Error::shape(format!(
            "layer norm width {} does not match parameter width {}",
            width,
            params.width()
        )));
    }
    let n_vectors = input.len() / width;
    let mut x_hat = input.clone();
    let mut inv_std = Vec::with_capacity(n_vectors);
    for row in x_hat.data_mut().chunks_mut(width) {
        let mean = row.iter().sum::<f64>() / width as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width as f64;
        let is = 1.0 / (var + params.epsilon).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * is;
        }
        inv_std.push(is);
    }
    let mut out = x_hat.clone();
    let gain = params.gain.data();
    let offset = params.offset.data();
    for row in out.data_mut().chunks_mut(width) {
        for (i, v) in row.iter_mut().enumerate() {
            *v = *v * gain[i] + offset[i];
        }
    }
    Ok((out, LayerNormCache { x_hat, inv_std }))
}

/// Backward pass of [`layer_norm_forward`].
pub fn layer_norm_backward(
    cache: &LayerNormCache,
    params: &LayerNormParams,
    grad_out: &Tensor,
) -> (Tensor, LayerNormParams) {
    let width = params.width();
    debug_assert_eq!(grad_out.shape(), cache.x_hat.shape());
    let gain = params.gain.data();
    let x_hat = cache.x_hat.data();
    let g = grad_out.data();

    let mut grads = params.zeros_like();
    let mut grad_input = grad_out.zeros_like();
    {
        let gg = grads.gain.data_mut();
        let go = grads.offset.data_mut();
        let gi = grad_input.data_mut();
        for (r, is) in cache.inv_std.iter().enumerate() {
            let base = r * width;
            let xh = &x_hat[base..base + width];
            let gr = &g[base..base + width];
            let mut sum_dxhat = 0.0;
            let mut sum_dxhat_xhat = 0.0;
            for i in 0..width {
                gg[i] += gr[i] * xh[i];
                go[i] += gr[i];
                let dxh = gr[i] * gain[i];
                sum_dxhat += dxh;
                sum_dxhat_xhat += dxh * xh[i];
            }
            let inv_w = 1.0 / width as f64;
            let out_row = &mut gi[base..base + width];
            for i in 0..width {
                let dxh = gr[i] * gain[i];
                out_row[i] = is * (dxh - inv_w * sum_dxhat - xh[i] * inv_w * sum_dxhat_xhat);
            }
        }
    }
    (grad_input, grads)
}
