//! Pure forward/backward kernels. The autodiff tape records calls to these.

pub mod activation;
pub mod conv;
pub mod linear;
pub(crate) mod matmul;
pub mod norm;
pub mod shape;

pub use activation::{gelu, gelu_backward, softmax, softmax_backward};
pub use conv::{conv2d, conv2d_backward, conv_transpose2d, conv_transpose2d_backward, ConvGrads, ConvSpec};
pub use linear::{linear, linear_backward};
pub use norm::{layer_norm, layer_norm_backward, DEFAULT_LN_EPS};
