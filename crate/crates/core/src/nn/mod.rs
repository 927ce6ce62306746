//! Layer primitives: convolutions, batch normalization, activations, pooling
//! and dense layers. Every function here records onto a [`Tape`](crate::tensor::Tape).

mod activation;
mod conv;
mod dense;
mod norm;
mod pool;

pub use activation::{activate, relu, sigmoid, sigmoid_scalar, Activation};
pub use conv::{
    conv2d, dense_conv_parameter_count, depthwise_conv2d, depthwise_separable_conv2d, output_extent,
    separable_conv_parameter_count, Conv2dGeometry, Conv2dParams, DepthwiseSeparableParams,
};
pub use dense::{dense, DenseParams};
pub use norm::{
    batch_norm_infer, batch_norm_train, BatchNormParams, BatchStats, NormMode, DEFAULT_EPSILON, DEFAULT_MOMENTUM,
};
pub use pool::global_avg_pool;
