//! Optimisation: loss, learning-rate schedule, Adam, checkpoints and the
//! training loop.

pub mod adam;
pub mod checkpoint;
pub mod fit;
pub mod loss;
pub mod schedule;

pub use adam::Adam;
pub use checkpoint::{load_weights, save_weights, TrainState};
pub use fit::{fit, validate, EpochRecord, FitOptions, FitOutcome, TrainConfig, TrainReport, ValMetrics};
pub use loss::{l1_tonemapped_loss, l1_tonemapped_value};
pub use schedule::ScheduleSpec;
