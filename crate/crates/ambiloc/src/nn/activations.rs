use super::tensor::Tensor;

/// Elementwise rectified linear unit.
pub fn relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Gradient of [`relu`]. Uses the pre-activation input; the subgradient at 0
/// is taken to be 0.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Tensor {
    debug_assert_eq!(input.shape(), grad_out.shape());
    let mut grad = grad_out.clone();
    for (g, &x) in grad.data_mut().iter_mut().zip(input.data()) {
        if x <= 0.0 {
            *g = 0.0;
        }
    }
    grad
}

/// Elementwise logistic sigmoid.
pub fn sigmoid(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    for v in out.data_mut() {
        *v = 1.0 / (1.0 + (-*v).exp());
    }
    out
}

/// Gradient of [`sigmoid`], expressed through the forward output.
pub fn sigmoid_backward(output: &Tensor, grad_out: &Tensor) -> Tensor {
    debug_assert_eq!(output.shape(), grad_out.shape());
    let mut grad = grad_out.clone();
    for (g, &y) in grad.data_mut().iter_mut().zip(output.data()) {
        *g *= y * (1.0 - y);
    }
    grad
}

/// Numerically stable softmax of one contiguous slice, written in place.
///
/// The max is subtracted before exponentiation; the normalizing sum runs in
/// slice order so results do not depend on any parallel scheduling above.
pub fn softmax_slice(values: &mut [f64]) {
    let max = values.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut sum = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in values.iter_mut() {
        *v /= sum;
    }
}

/// Gradient of [`softmax_slice`]: `d logits = s ⊙ (d s − ⟨s, d s⟩)`.
pub fn softmax_slice_backward(softmax_out: &[f64], grad_out: &[f64], grad_logits: &mut [f64]) {
    debug_assert_eq!(softmax_out.len(), grad_out.len());
    let dot: f64 = softmax_out
        .iter()
        .zip(grad_out.iter())
        .map(|(s, g)| s * g)
        .sum();
    for ((gl, &s), &g) in grad_logits
        .iter_mut()
        .zip(softmax_out.iter())
        .zip(grad_out.iter())
    {
        *gl = s * (g - dot);
    }
}

/// Softmax over the last axis of a tensor.
pub fn softmax_last_axis(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    let width = *out.shape().last().expect("softmax needs at least rank 1");
    for row in out.data_mut().chunks_mut(width) {
        softmax_slice(row);
    }
    out
}
