use rayon::prelude::*;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// 3x3 convolution parameters with kernels stored `[out, in, 3, 3]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2dParams {
    pub kernels: Tensor,
    pub bias: Tensor,
}

impl Conv2dParams {
    pub fn zeros(out_channels: usize, in_channels: usize) -> Self {
        Conv2dParams {
            kernels: Tensor::zeros(&[out_channels, in_channels, 3, 3]),
            bias: Tensor::zeros(&[out_channels]),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.shape()[1]
    }

    pub fn zeros_like(&self) -> Self {
        Conv2dParams {
            kernels: self.kernels.zeros_like(),
            bias: self.bias.zeros_like(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.kernels.len() + self.bias.len()
    }
}

fn conv_dims(input: &Tensor, params: &Conv2dParams) -> Result<(usize, usize, usize)> {
    let [c_in, h, w] = *input.shape() else {
        return Err(Error::shape(format!(
            "conv2d expects [channels, height, width], got {:?}",
            input.shape()
        )));
    };
    if c_in != params.in_channels() {
        return Err(Error::shape(format!(
            "conv2d expects {} input channels, got {}",
            params.in_channels(),
            c_in
        )));
    }
    Ok((c_in, h, w))
}

/// Accumulates `out[y][x] += weight * plane[y + dy][x + dx]` over the region
/// where the shifted index stays inside the plane (zero padding elsewhere).
fn add_shifted(out: &mut [f64], plane: &[f64], h: usize, w: usize, dy: isize, dx: isize, k: f64) {
    let y_start = (-dy).max(0) as usize;
    let y_end = (h as isize - dy).min(h as isize).max(0) as usize;
    let x_start = (-dx).max(0) as usize;
    let x_end = (w as isize - dx).min(w as isize).max(0) as usize;
    if x_start >= x_end {
        return;
    }
    for y in y_start..y_end {
        let src_row = ((y as isize + dy) as usize) * w;
        let dst_row = y * w;
        let src = &plane[src_row + ((x_start as isize + dx) as usize)
            ..src_row + ((x_end as isize + dx) as usize)];
        let dst = &mut out[dst_row + x_start..dst_row + x_end];
        for (d, s) in dst.iter_mut().zip(src) {
            *d += k * s;
        }
    }
}

/// Same-padded 3x3 convolution over `[channels, height, width]` input.
pub fn conv2d_forward(input: &Tensor, params: &Conv2dParams) -> Result<Tensor> {
    let (c_in, h, w) = conv_dims(input, params)?;
    let c_out = params.out_channels();
    let plane = h * w;
    let x = input.data();
    let k = params.kernels.data();
    let b = params.bias.data();

    let mut out = Tensor::zeros(&[c_out, h, w]);
    let run_channel = |co: usize, out_plane: &mut [f64]| {
        out_plane.fill(b[co]);
        for ci in 0..c_in {
            let in_plane = &x[ci * plane..(ci + 1) * plane];
            let k_base = (co * c_in + ci) * 9;
            for ky in 0..3usize {
                for kx in 0..3usize {
                    let weight = k[k_base + ky * 3 + kx];
                    add_shifted(
                        out_plane,
                        in_plane,
                        h,
                        w,
                        ky as isize - 1,
                        kx as isize - 1,
                        weight,
                    );
                }
            }
        }
    };
    if c_out * c_in * plane >= 1 << 15 && c_out > 1 {
        out.data_mut()
            .par_chunks_mut(plane)
            .enumerate()
            .for_each(|(co, p)| run_channel(co, p));
    } else {
        for (co, p) in out.data_mut().chunks_mut(plane).enumerate() {
            run_channel(co, p);
        }
    }
    Ok(out)
}

/// Backward pass of [`conv2d_forward`]; returns the input gradient and the
/// parameter gradients.
pub fn conv2d_backward(
    input: &Tensor,
    params: &Conv2dParams,
    grad_out: &Tensor,
) -> Result<(Tensor, Conv2dParams)> {
    let (c_in, h, w) = conv_dims(input, params)?;
    let c_out = params.out_channels();
    if grad_out.shape() != [c_out, h, w] {
        return Err(Error::shape(format!(
            "conv2d backward expects gradient shape [{c_out}, {h}, {w}], got {:?}",
            grad_out.shape()
        )));
    }
    let plane = h * w;
    let x = input.data();
    let k = params.kernels.data();
    let g = grad_out.data();

    let mut grad_input = input.zeros_like();
    let run_in_channel = |ci: usize, gi_plane: &mut [f64]| {
        for co in 0..c_out {
            let g_plane = &g[co * plane..(co + 1) * plane];
            let k_base = (co * c_in + ci) * 9;
            for ky in 0..3usize {
                for kx in 0..3usize {
                    // The input cell at (y, x) fed output (y - dy, x - dx).
                    let weight = k[k_base + ky * 3 + kx];
                    add_shifted(
                        gi_plane,
                        g_plane,
                        h,
                        w,
                        1 - ky as isize,
                        1 - kx as isize,
                        weight,
                    );
                }
            }
        }
    };
    if c_out * c_in * plane >= 1 << 15 && c_in > 1 {
        grad_input
            .data_mut()
            .par_chunks_mut(plane)
            .enumerate()
            .for_each(|(ci, p)| run_in_channel(ci, p));
    } else {
        for (ci, p) in grad_input.data_mut().chunks_mut(plane).enumerate() {
            run_in_channel(ci, p);
        }
    }

    let mut grads = params.zeros_like();
    {
        let gk = grads.kernels.data_mut();
        for co in 0..c_out {
            let g_plane = &g[co * plane..(co + 1) * plane];
            for ci in 0..c_in {
                let in_plane = &x[ci * plane..(ci + 1) * plane];
                let k_base = (co * c_in + ci) * 9;
                for ky in 0..3usize {
                    let dy = ky as isize - 1;
                    for kx in 0..3usize {
                        let dx = kx as isize - 1;
                        let y_start = (-dy).max(0) as usize;
                        let y_end = (h as isize - dy).min(h as isize).max(0) as usize;
                        let x_start = (-dx).max(0) as usize;
                        let x_end = (w as isize - dx).min(w as isize).max(0) as usize;
                        let mut acc = 0.0;
                        for y in y_start..y_end {
                            let src_row = ((y as isize + dy) as usize) * w;
                            let g_row = y * w;
                            let src = &in_plane[src_row + ((x_start as isize + dx) as usize)
                                ..src_row + ((x_end as isize + dx) as usize)];
                            let gs = &g_plane[g_row + x_start..g_row + x_end];
                            for (a, b) in gs.iter().zip(src) {
                                acc += a * b;
                            }
                        }
                        gk[k_base + ky * 3 + kx] = acc;
                    }
                }
            }
        }
        let gb = grads.bias.data_mut();
        for co in 0..c_out {
            gb[co] = g[co * plane..(co + 1) * plane].iter().sum();
        }
    }
    Ok((grad_input, grads))
}

/// Records which input column won each pooling window so the backward pass
/// can route gradients.
pub struct MaxPoolCache {
    input_shape: Vec<usize>,
    /// Flat input index of the maximum for every output element.
    argmax: Vec<usize>,
    pool: usize,
}

/// Max pooling with window `(1, pool)`: the height (time) axis is untouched
/// and the width (frequency) axis shrinks by `floor(w / pool)`, dropping any
/// remainder columns. Ties go to the leftmost column.
pub fn maxpool2d_forward(input: &Tensor, pool: usize) -> Result<(Tensor, MaxPoolCache)> {
    let [c, h, w] = *input.shape() else {
        return Err(Error::shape(format!(
            "maxpool expects [channels, height, width], got {:?}",
            input.shape()
        )));
    };
    if pool == 0 {
        return Err(Error::shape("pool width must be at least 1".to_string()));
    }
    if pool > w {
        return Err(Error::shape(format!(
            "pool width {pool} exceeds frequency extent {w}"
        )));
    }
    let w_out = w / pool;
    let x = input.data();
    let mut out = Tensor::zeros(&[c, h, w_out]);
    let mut argmax = vec![0usize; c * h * w_out];
    {
        let o = out.data_mut();
        for cy in 0..c * h {
            let row = &x[cy * w..(cy + 1) * w];
            let out_base = cy * w_out;
            for j in 0..w_out {
                let start = j * pool;
                let mut best = row[start];
                let mut best_i = start;
                for (off, v) in row[start..start + pool].iter().enumerate().skip(1) {
                    if *v > best {
                        best = *v;
                        best_i = start + off;
                    }
                }
                o[out_base + j] = best;
                argmax[out_base + j] = cy * w + best_i;
            }
        }
    }
    Ok((
        out,
        MaxPoolCache {
            input_shape: input.shape().to_vec(),
            argmax,
            pool,
        },
    ))
}

/// Backward pass of [`maxpool2d_forward`]: each output gradient flows to the
/// input element that won its window.
pub fn maxpool2d_backward(cache: &MaxPoolCache, grad_out: &Tensor) -> Result<Tensor> {
    if grad_out.len() != cache.argmax.len() {
        return Err(Error::shape(format!(
            "maxpool backward expects {} gradient elements, got {}",
            cache.argmax.len(),
            grad_out.len()
        )));
    }
    let mut grad_input = Tensor::zeros(&cache.input_shape);
    let gi = grad_input.data_mut();
    for (idx, g) in cache.argmax.iter().zip(grad_out.data()) {
        gi[*idx] += g;
    }
    Ok(grad_input)
}

impl MaxPoolCache {
    pub fn pool(&self) -> usize {
        self.pool
    }
}
