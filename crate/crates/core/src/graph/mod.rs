//! Network descriptions, constructors and the executor.

pub mod builders;
pub mod exec;
pub mod init;
pub mod spec;

pub use builders::{drdb_graph, AttentionWidth, NetworkConfig, SkipStyle, Variant, INPUTS, INPUT_CHANNELS};
pub use exec::{bind_params, check_weights, forward_eval, forward_on_tape};
pub use init::{count_weight_values, init_weights, zero_weights, Weights};
pub use spec::{GraphSpec, Init, InputSpec, LayerKind, LayerSpec, Resolution, ValueShape, WeightSpec};
