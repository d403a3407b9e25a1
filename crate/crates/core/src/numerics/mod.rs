//! Dense tensors, activations, normalization, dropout, Adam and a
//! finite-difference gradient checker.

mod adam;
mod gradcheck;
mod ops;
mod rng;
mod tensor;

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use gradcheck::{accumulate, grad_check, join, GradCheckReport, ParamSet, Visit};
pub use ops::{
    activation, dense, dense_backward, dropout, gelu, gelu_grad, layer_norm, layer_norm_backward,
    layer_norm_with_cache, sigmoid, softmax, softmax_backward, Activation, DropoutMask,
    LayerNormCache, Mode, LAYER_NORM_EPS,
};
pub(crate) use ops::softmax_slice;
pub use rng::RngStream;
pub use tensor::Tensor;
