//! Deformable, dual-resolution HDR fusion network with a small reverse-mode
//! autodiff engine, a cost profiler, synthetic data and a trainer.

pub mod autodiff;
pub mod dataset;
pub mod error;
pub mod graph;
pub mod imaging;
pub mod ops;
pub mod profiler;
pub mod synth;
pub mod tensor;
pub mod train;

pub use autodiff::{Tape, Var};
pub use error::{Error, ErrorClass, Result};
pub use graph::{GraphSpec, NetworkConfig, Variant, Weights};
pub use imaging::ExposureStack;
pub use profiler::{count_macs, count_params, CostReport, MacConvention};
pub use tensor::{Shape, Tensor};
pub use train::{TrainConfig, TrainReport};
