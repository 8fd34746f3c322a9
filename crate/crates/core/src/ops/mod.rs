//! Neural primitives over [`Tensor`](crate::tensor::Tensor).

pub mod act;
pub mod conv;
pub(crate) mod gemm;
pub mod linear;
pub mod norm;
pub mod shape;

pub use act::{gelu, silu, softplus, Activation};
pub use conv::{conv1d_depthwise_same, conv2d, ConvSpec};
pub use linear::{linear, LinearParams};
pub use norm::{batchnorm2d, BatchNormParams};
pub use shape::{concat_channels, global_avg_pool, split_channels};
