//! Self-attention layers and encoder blocks with hand-written gradients.
//!
//! Two attention variants operate over a sequence of `n` embeddings of
//! width `g`:
//!
//! * **Multi-head** — every head `h` matches its own queries against its own
//!   keys; attention weights normalize over positions `j` independently per
//!   head.
//! * **Cross-multi-head** — queries of head `h` are matched against the keys
//!   of *every* head `h'`, and the mixed vector draws on all heads' values.
//!   By default the weights normalize jointly over `(j, h')`; an alternative
//!   normalizes each `(h, h')` pair separately and averages the pairs.
//!
//! Both scale raw scores by `1/sqrt(g)` (the embedding width, not the head
//! width) and apply no positional encoding, so layers are permutation
//! equivariant. With a single head the two variants are exactly identical --
//! the cross variant's joint softmax degenerates to the per-head one.
//!
//! Head width is `g / heads` when `heads` divides `g`; otherwise every head
//! keeps the full width `g` and the output projection maps `heads * g` back
//! down to `g`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::{
    layer_norm_backward, layer_norm_forward, linear_backward, linear_forward, relu, relu_backward,
    softmax_slice, softmax_slice_backward, LayerNormCache, LayerNormParams, LinearParams, Tensor,
};

/// Which attention wiring an [`AttentionParams`] instance uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionVariant {
    MultiHead,
    CrossMultiHead,
}

/// Normalization of cross-multi-head scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CmhNorm {
    /// One softmax per query `(i, h)` over all `(j, h')` jointly.
    Joint,
    /// One softmax per `(i, h, h')` over `j`; the per-pair mixtures are
    /// averaged over `h'`.
    PerHeadPair,
}

/// Query, key, and value projections of one head, each `head_dim x g`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub query: LinearParams,
    pub key: LinearParams,
    pub value: LinearParams,
}

impl HeadParams {
    pub fn zeros(head_dim: usize, embed_dim: usize) -> Self {
        HeadParams {
            query: LinearParams::zeros(head_dim, embed_dim),
            key: LinearParams::zeros(head_dim, embed_dim),
            value: LinearParams::zeros(head_dim, embed_dim),
        }
    }

    pub fn zeros_like(&self) -> Self {
        HeadParams {
            query: self.query.zeros_like(),
            key: self.key.zeros_like(),
            value: self.value.zeros_like(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.query.param_count() + self.key.param_count() + self.value.param_count()
    }
}

/// Head width rule: split the embedding evenly when possible, otherwise run
/// every head at full width.
pub fn head_dim(embed_dim: usize, n_heads: usize) -> usize {
    if n_heads > 0 && embed_dim.is_multiple_of(n_heads) {
        embed_dim / n_heads
    } else {
        embed_dim
    }
}

/// A complete attention layer.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub variant: AttentionVariant,
    pub cmh_norm: CmhNorm,
    pub heads: Vec<HeadParams>,
    /// Maps the concatenated per-head mixtures (`heads * head_dim`) back to
    /// the embedding width.
    pub output: LinearParams,
}

impl AttentionParams {
    pub fn zeros(embed_dim: usize, n_heads: usize, variant: AttentionVariant) -> Result<Self> {
        if n_heads == 0 {
            return Err(Error::config("attention needs at least one head"));
        }
        let d = head_dim(embed_dim, n_heads);
        Ok(AttentionParams {
            variant,
            cmh_norm: CmhNorm::Joint,
            heads: (0..n_heads)
                .map(|_| HeadParams::zeros(d, embed_dim))
                .collect(),
            output: LinearParams::zeros(embed_dim, n_heads * d),
        })
    }

    pub fn n_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn embed_dim(&self) -> usize {
        self.heads[0].query.in_dim()
    }

    pub fn head_dim(&self) -> usize {
        self.heads[0].query.out_dim()
    }

    pub fn zeros_like(&self) -> Self {
        AttentionParams {
            variant: self.variant,
            cmh_norm: self.cmh_norm,
            heads: self.heads.iter().map(HeadParams::zeros_like).collect(),
            output: self.output.zeros_like(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.heads.iter().map(HeadParams::param_count).sum::<usize>()
            + self.output.param_count()
    }
}

/// Intermediate values retained for the backward pass.
pub struct AttentionCache {
    /// Per-head projections, each `[n, head_dim]`.
    q: Vec<Tensor>,
    k: Vec<Tensor>,
    v: Vec<Tensor>,
    /// Post-softmax attention weights: `[n, n, h]` indexed `(i, j, h)` for
    /// the multi-head variant, `[n, n, h, h]` indexed `(i, j, h, h')` for
    /// the cross variant.
    weights: Tensor,
    /// Concatenated per-head mixtures before the output projection,
    /// `[n, h * head_dim]`.
    mixed: Tensor,
}

impl AttentionCache {
    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn mixed(&self) -> &Tensor {
        &self.mixed
    }
}

fn check_input(input: &Tensor, params: &AttentionParams) -> Result<(usize, usize)> {
    let [n, g] = *input.shape() else {
        return Err(Error::shape(format!(
            "attention expects [n, embed] input, got {:?}",
            input.shape()
        )));
    };
    if g != params.embed_dim() {
        return Err(Error::shape(format!(
            "attention embed width {} does not match input width {g}",
            params.embed_dim()
        )));
    }
    Ok((n, g))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Attention layer forward pass returning the output and backward cache.
pub fn attention_forward_cached(
    input: &Tensor,
    params: &AttentionParams,
) -> Result<(Tensor, AttentionCache)> {
    let (n, g) = check_input(input, params)?;
    let h = params.n_heads();
    let d = params.head_dim();
    let scale = 1.0 / (g as f64).sqrt();

    let mut q = Vec::with_capacity(h);
    let mut k = Vec::with_capacity(h);
    let mut v = Vec::with_capacity(h);
    for hp in &params.heads {
        q.push(linear_forward(input, &hp.query)?);
        k.push(linear_forward(input, &hp.key)?);
        v.push(linear_forward(input, &hp.value)?);
    }

    let mut mixed = Tensor::zeros(&[n, h * d]);
    let weights = match params.variant {
        AttentionVariant::MultiHead => {
            let mut weights = Tensor::zeros(&[n, n, h]);
            mixed
                .data_mut()
                .par_chunks_mut(h * d)
                .zip(weights.data_mut().par_chunks_mut(n * h))
                .enumerate()
                .for_each(|(i, (mix_row, w_row))| {
                    let mut row = vec![0.0; n];
                    for head in 0..h {
                        let qd = q[head].data();
                        let kd = k[head].data();
                        let vd = v[head].data();
                        let qi = &qd[i * d..(i + 1) * d];
                        for (j, slot) in row.iter_mut().enumerate() {
                            *slot = dot(qi, &kd[j * d..(j + 1) * d]) * scale;
                        }
                        softmax_slice(&mut row);
                        let z = &mut mix_row[head * d..(head + 1) * d];
                        for (j, a) in row.iter().enumerate() {
                            let vj = &vd[j * d..(j + 1) * d];
                            for (t, zv) in z.iter_mut().enumerate() {
                                *zv += a * vj[t];
                            }
                            w_row[j * h + head] = *a;
                        }
                    }
                });
            weights
        }
        AttentionVariant::CrossMultiHead => {
            let mut weights = Tensor::zeros(&[n, n, h, h]);
            let pair_scale = match params.cmh_norm {
                CmhNorm::Joint => 1.0,
                CmhNorm::PerHeadPair => 1.0 / h as f64,
            };
            mixed
                .data_mut()
                .par_chunks_mut(h * d)
                .zip(weights.data_mut().par_chunks_mut(n * h * h))
                .enumerate()
                .for_each(|(i, (mix_row, w_row))| {
                    // Row layout (j, h') so the single-head case walks
                    // positions in the same order as the multi-head variant.
                    let mut row = vec![0.0; n * h];
                    for head in 0..h {
                        let qi = &q[head].data()[i * d..(i + 1) * d];
                        for j in 0..n {
                            for (h2, kh) in k.iter().enumerate() {
                                row[j * h + h2] =
                                    dot(qi, &kh.data()[j * d..(j + 1) * d]) * scale;
                            }
                        }
                        match params.cmh_norm {
                            CmhNorm::Joint => softmax_slice(&mut row),
                            CmhNorm::PerHeadPair => {
                                let mut scratch = vec![0.0; n];
                                for h2 in 0..h {
                                    for j in 0..n {
                                        scratch[j] = row[j * h + h2];
                                    }
                                    softmax_slice(&mut scratch);
                                    for j in 0..n {
                                        row[j * h + h2] = scratch[j];
                                    }
                                }
                            }
                        }
                        let z = &mut mix_row[head * d..(head + 1) * d];
                        for j in 0..n {
                            for (h2, vh) in v.iter().enumerate() {
                                let a = row[j * h + h2] * pair_scale;
                                let vj = &vh.data()[j * d..(j + 1) * d];
                                for (t, zv) in z.iter_mut().enumerate() {
                                    *zv += a * vj[t];
                                }
                            }
                        }
                        for j in 0..n {
                            for h2 in 0..h {
                                w_row[(j * h + head) * h + h2] = row[j * h + h2];
                            }
                        }
                    }
                });
            weights
        }
    };
    let out = linear_forward(&mixed, &params.output)?;
    Ok((
        out,
        AttentionCache {
            q,
            k,
            v,
            weights,
            mixed,
        },
    ))
}

/// Attention layer forward pass.
pub fn attention_forward(input: &Tensor, params: &AttentionParams) -> Result<Tensor> {
    Ok(attention_forward_cached(input, params)?.0)
}

/// Backward pass of [`attention_forward_cached`]; returns the input gradient
/// and parameter gradients.
pub fn attention_backward(
    input: &Tensor,
    params: &AttentionParams,
    cache: &AttentionCache,
    grad_out: &Tensor,
) -> Result<(Tensor, AttentionParams)> {
    let (n, g) = check_input(input, params)?;
    if grad_out.shape() != [n, g] {
        return Err(Error::shape(format!(
            "attention backward expects [{n}, {g}] gradient, got {:?}",
            grad_out.shape()
        )));
    }
    let h = params.n_heads();
    let d = params.head_dim();
    let scale = 1.0 / (g as f64).sqrt();

    let (d_mixed, d_output) = linear_backward(&cache.mixed, &params.output, grad_out)?;

    let mut dq: Vec<Tensor> = (0..h).map(|_| Tensor::zeros(&[n, d])).collect();
    let mut dk: Vec<Tensor> = (0..h).map(|_| Tensor::zeros(&[n, d])).collect();
    let mut dv: Vec<Tensor> = (0..h).map(|_| Tensor::zeros(&[n, d])).collect();
    let dm = d_mixed.data();
    let wts = cache.weights.data();

    match params.variant {
        AttentionVariant::MultiHead => {
            for i in 0..n {
                for head in 0..h {
                    let zgrad = &dm[i * h * d + head * d..i * h * d + (head + 1) * d];
                    let kd = cache.k[head].data();
                    let vd = cache.v[head].data();
                    let qi = &cache.q[head].data()[i * d..(i + 1) * d];
                    let mut a_row = vec![0.0; n];
                    let mut da_row = vec![0.0; n];
                    for j in 0..n {
                        a_row[j] = wts[(i * n + j) * h + head];
                        da_row[j] = dot(zgrad, &vd[j * d..(j + 1) * d]);
                        let dv_j = &mut dv[head].data_mut()[j * d..(j + 1) * d];
                        for t in 0..d {
                            dv_j[t] += a_row[j] * zgrad[t];
                        }
                    }
                    let mut ds_row = vec![0.0; n];
                    softmax_slice_backward(&a_row, &da_row, &mut ds_row);
                    let dq_i = &mut dq[head].data_mut()[i * d..(i + 1) * d];
                    for (j, ds) in ds_row.iter().enumerate() {
                        let sj = ds * scale;
                        let kj = &kd[j * d..(j + 1) * d];
                        for t in 0..d {
                            dq_i[t] += sj * kj[t];
                        }
                    }
                    for (j, ds) in ds_row.iter().enumerate() {
                        let sj = ds * scale;
                        let dk_j = &mut dk[head].data_mut()[j * d..(j + 1) * d];
                        for t in 0..d {
                            dk_j[t] += sj * qi[t];
                        }
                    }
                }
            }
        }
        AttentionVariant::CrossMultiHead => {
            let pair_scale = match params.cmh_norm {
                CmhNorm::Joint => 1.0,
                CmhNorm::PerHeadPair => 1.0 / h as f64,
            };
            for i in 0..n {
                for head in 0..h {
                    let zgrad = &dm[i * h * d + head * d..i * h * d + (head + 1) * d];
                    let qi = &cache.q[head].data()[i * d..(i + 1) * d];
                    let mut a_row = vec![0.0; n * h];
                    let mut da_row = vec![0.0; n * h];
                    for j in 0..n {
                        for h2 in 0..h {
                            let a = wts[((i * n + j) * h + head) * h + h2];
                            a_row[j * h + h2] = a;
                            let vd = cache.v[h2].data();
                            da_row[j * h + h2] =
                                pair_scale * dot(zgrad, &vd[j * d..(j + 1) * d]);
                            let dv_j = &mut dv[h2].data_mut()[j * d..(j + 1) * d];
                            let w = pair_scale * a;
                            for t in 0..d {
                                dv_j[t] += w * zgrad[t];
                            }
                        }
                    }
                    let mut ds_row = vec![0.0; n * h];
                    match params.cmh_norm {
                        CmhNorm::Joint => {
                            softmax_slice_backward(&a_row, &da_row, &mut ds_row)
                        }
                        CmhNorm::PerHeadPair => {
                            let mut a_s = vec![0.0; n];
                            let mut da_s = vec![0.0; n];
                            let mut ds_s = vec![0.0; n];
                            for h2 in 0..h {
                                for j in 0..n {
                                    a_s[j] = a_row[j * h + h2];
                                    da_s[j] = da_row[j * h + h2];
                                }
                                softmax_slice_backward(&a_s, &da_s, &mut ds_s);
                                for j in 0..n {
                                    ds_row[j * h + h2] = ds_s[j];
                                }
                            }
                        }
                    }
                    let dq_i = &mut dq[head].data_mut()[i * d..(i + 1) * d];
                    for j in 0..n {
                        for h2 in 0..h {
                            let sj = ds_row[j * h + h2] * scale;
                            let kd = cache.k[h2].data();
                            let kj = &kd[j * d..(j + 1) * d];
                            for t in 0..d {
                                dq_i[t] += sj * kj[t];
                            }
                            let dk_j = &mut dk[h2].data_mut()[j * d..(j + 1) * d];
                            for t in 0..d {
                                dk_j[t] += sj * qi[t];
                            }
                        }
                    }
                }
            }
        }
    }

    let mut grad_input = input.zeros_like();
    let mut grads = params.zeros_like();
    grads.output = d_output;
    for head in 0..h {
        let (gi_q, g_q) = linear_backward(input, &params.heads[head].query, &dq[head])?;
        let (gi_k, g_k) = linear_backward(input, &params.heads[head].key, &dk[head])?;
        let (gi_v, g_v) = linear_backward(input, &params.heads[head].value, &dv[head])?;
        grad_input.add_assign(&gi_q);
        grad_input.add_assign(&gi_k);
        grad_input.add_assign(&gi_v);
        grads.heads[head] = HeadParams {
            query: g_q,
            key: g_k,
            value: g_v,
        };
    }
    Ok((grad_input, grads))
}

/// One encoder block: attention with a residual connection and layer norm,
/// then a two-layer feed-forward (ReLU on the second layer's output) with
/// another residual connection and layer norm. All widths equal the
/// embedding width.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub attention: AttentionParams,
    pub norm1: LayerNormParams,
    pub ffn1: LinearParams,
    pub ffn2: LinearParams,
    pub norm2: LayerNormParams,
}

impl EncoderParams {
    pub fn zeros(embed_dim: usize, n_heads: usize, variant: AttentionVariant) -> Result<Self> {
        Ok(EncoderParams {
            attention: AttentionParams::zeros(embed_dim, n_heads, variant)?,
            norm1: LayerNormParams::identity(embed_dim),
            ffn1: LinearParams::zeros(embed_dim, embed_dim),
            ffn2: LinearParams::zeros(embed_dim, embed_dim),
            norm2: LayerNormParams::identity(embed_dim),
        })
    }

    pub fn zeros_like(&self) -> Self {
        EncoderParams {
            attention: self.attention.zeros_like(),
            norm1: self.norm1.zeros_like(),
            ffn1: self.ffn1.zeros_like(),
            ffn2: self.ffn2.zeros_like(),
            norm2: self.norm2.zeros_like(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.attention.param_count()
            + self.norm1.param_count()
            + self.ffn1.param_count()
            + self.ffn2.param_count()
            + self.norm2.param_count()
    }
}

pub struct EncoderCache {
    input: Tensor,
    attn: AttentionCache,
    ln1: LayerNormCache,
    /// Output of the first layer norm (FFN input).
    y1: Tensor,
    /// First FFN layer output.
    f1: Tensor,
    /// Second FFN layer output, before the ReLU.
    f2: Tensor,
    ln2: LayerNormCache,
}

/// Encoder block forward pass with cache.
pub fn encoder_forward_cached(
    input: &Tensor,
    params: &EncoderParams,
) -> Result<(Tensor, EncoderCache)> {
    let (attn_out, attn_cache) = attention_forward_cached(input, &params.attention)?;
    let mut sum1 = input.clone();
    sum1.add_assign(&attn_out);
    let (y1, ln1) = layer_norm_forward(&sum1, &params.norm1)?;
    let f1 = linear_forward(&y1, &params.ffn1)?;
    let f2 = linear_forward(&f1, &params.ffn2)?;
    let r = relu(&f2);
    let mut sum2 = y1.clone();
    sum2.add_assign(&r);
    let (y2, ln2) = layer_norm_forward(&sum2, &params.norm2)?;
    Ok((
        y2,
        EncoderCache {
            input: input.clone(),
            attn: attn_cache,
            ln1,
            y1,
            f1,
            f2,
            ln2,
        },
    ))
}

/// Encoder block forward pass.
pub fn encoder_forward(input: &Tensor, params: &EncoderParams) -> Result<Tensor> {
    Ok(encoder_forward_cached(input, params)?.0)
}

/// Backward pass of [`encoder_forward_cached`].
pub fn encoder_backward(
    params: &EncoderParams,
    cache: &EncoderCache,
    grad_out: &Tensor,
) -> Result<(Tensor, EncoderParams)> {
    let (d_sum2, d_norm2) = layer_norm_backward(&cache.ln2, &params.norm2, grad_out);
    // sum2 = y1 + relu(f2): the gradient reaches y1 directly and f2 through
    // the ReLU mask.
    let d_f2 = relu_backward(&cache.f2, &d_sum2);
    let (d_f1, d_ffn2) = linear_backward(&cache.f1, &params.ffn2, &d_f2)?;
    let (d_y1_ffn, d_ffn1) = linear_backward(&cache.y1, &params.ffn1, &d_f1)?;
    let mut d_y1 = d_sum2;
    d_y1.add_assign(&d_y1_ffn);
    let (d_sum1, d_norm1) = layer_norm_backward(&cache.ln1, &params.norm1, &d_y1);
    // sum1 = input + attention(input).
    let (d_input_attn, d_attention) =
        attention_backward(&cache.input, &params.attention, &cache.attn, &d_sum1)?;
    let mut d_input = d_sum1;
    d_input.add_assign(&d_input_attn);
    Ok((
        d_input,
        EncoderParams {
            attention: d_attention,
            norm1: d_norm1,
            ffn1: d_ffn1,
            ffn2: d_ffn2,
            norm2: d_norm2,
        },
    ))
}

/// Forward pass through a stack of encoder blocks, keeping every cache.
pub fn stack_forward_cached(
    input: &Tensor,
    stack: &[EncoderParams],
) -> Result<(Tensor, Vec<EncoderCache>)> {
    let mut x = input.clone();
    let mut caches = Vec::with_capacity(stack.len());
    for params in stack {
        let (y, cache) = encoder_forward_cached(&x, params)?;
        caches.push(cache);
        x = y;
    }
    Ok((x, caches))
}

/// Forward pass through a stack of encoder blocks.
pub fn stack_forward(input: &Tensor, stack: &[EncoderParams]) -> Result<Tensor> {
    Ok(stack_forward_cached(input, stack)?.0)
}

/// Backward pass through a stack of encoder blocks.
pub fn stack_backward(
    stack: &[EncoderParams],
    caches: &[EncoderCache],
    grad_out: &Tensor,
) -> Result<(Tensor, Vec<EncoderParams>)> {
    if stack.len() != caches.len() {
        return Err(Error::shape(format!(
            "stack has {} blocks but {} caches",
            stack.len(),
            caches.len()
        )));
    }
    let mut grad = grad_out.clone();
    let mut grads = Vec::with_capacity(stack.len());
    for (params, cache) in stack.iter().zip(caches).rev() {
        let (g_in, g_params) = encoder_backward(params, cache, &grad)?;
        grad = g_in;
        grads.push(g_params);
    }
    grads.reverse();
    Ok((grad, grads))
}
