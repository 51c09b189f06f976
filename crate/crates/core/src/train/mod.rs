//! Meta-training of the learned optimizer: unrolled segments, meta losses,
//! truncated backpropagation, Adam, the epoch schedule and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod loss;
pub mod trainer;
pub mod unroll;

pub use adam::{adam_step, clip_gradient, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use loss::{frame_accumulated, frame_independent, LossKind, MetaLoss, LOG_EPS};
pub use trainer::{evaluate, EpochRecord, Schedule, TrainConfig, TrainOutcome, Trainer};
pub use unroll::{meta_gradient, segment_value, unroll_forward, CarryState, UnrollOutput};
