//! Forward and backward kernels on plain tensors.

pub mod activation;
pub mod conv;
pub mod deform;
mod gemm;
pub mod resample;

pub use conv::{conv2d, conv2d_backward, conv2d_with, ConvAlgo, ConvGrads, ConvParams};
pub use deform::{bilinear_sample, deform_conv2d, deform_conv2d_backward, DeformGrads, DeformParams};
pub use resample::{upsample2x, upsample2x_backward};
