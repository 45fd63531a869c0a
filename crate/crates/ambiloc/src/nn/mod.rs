//! Minimal dense tensor type and differentiable primitive layers.
//!
//! Everything here is a plain function pair: a forward pass that returns its
//! output (plus whatever cache the backward pass needs) and a backward pass
//! that maps the upstream gradient to input and parameter gradients. There is
//! no autodiff tape; composite networks chain these pairs by hand, which keeps
//! every gradient checkable against finite differences.
//!
//! All arithmetic is `f64`. Gradient checks need the headroom, and at the
//! scales this crate trains at the speed difference versus `f32` does not
//! matter.

mod activations;
mod conv;
mod dense;
mod gradcheck;
mod tensor;

pub use activations::{
    relu, relu_backward, sigmoid, sigmoid_backward, softmax_last_axis, softmax_slice,
    softmax_slice_backward,
};
pub use conv::{
    conv2d_backward, conv2d_forward, maxpool2d_backward, maxpool2d_forward, Conv2dParams,
    MaxPoolCache,
};
pub use dense::{
    layer_norm_backward, layer_norm_forward, linear_backward, linear_forward, LayerNormCache,
    LayerNormParams, LinearParams,
};
pub use gradcheck::finite_diff_gradient;
pub use tensor::Tensor;
