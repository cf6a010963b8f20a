//! Dense kernels shared by every layer: tensors, masked attention, layer
//! normalization, the SwiGLU fast-weight network and a finite-difference
//! gradient checker.

mod attention;
mod fd;
mod norm;
mod rng;
mod swiglu;
pub(crate) mod tensor;

pub use attention::{attention_weights, masked_attention, AttentionMask, MultiHeadAttention};
pub use fd::{finite_diff_grad, relative_error};
pub use norm::{layer_norm, LayerNorm, LAYER_NORM_EPS};
pub use rng::RngState;
pub use swiglu::{silu, swiglu_forward, swiglu_grad, swiglu_loss, LossKind, SwigluGrad, SwigluParams};
pub use tensor::Tensor;
