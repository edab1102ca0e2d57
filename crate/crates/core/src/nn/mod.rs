//! Dense layers with hand-written forward and backward passes.

mod activation;
mod attention;
mod conv;
pub mod gradcheck;
mod linear;
mod loss;
pub mod module;

pub use activation::{
    relu, relu_mask, shifted_relu, shifted_relu_backward, shifted_relu_scalar, sigmoid, sigmoid_backward,
    sigmoid_scalar, softmax, softmax_backward, softmax_slice,
};
pub use attention::{AttentionCache, MultiHeadAttention};
pub use conv::{same_padding, Conv1d, Conv1dCache, MaxPool1d, MaxPoolCache};
pub use gradcheck::GradReport;
pub use linear::{Linear, Mlp3, Mlp3Cache};
pub use loss::{bce_grad, bce_loss, BCE_EPS};
pub use module::Module;
