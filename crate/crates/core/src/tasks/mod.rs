//! Task harnesses: how each application wires signals into an adaptive
//! filter, what the filter minimizes, and how results are scored.

pub mod beam;
pub mod optimizee;
pub mod prepare;
pub mod run;
pub mod spec;

pub use beam::{export_beampattern, linear_array, steering, write_beampattern_csv};
pub use optimizee::{stack_time, FilterState, FrameCotangents, FrameData, FrameOutput, Optimizee};
pub use prepare::{
    blocking_matrix, gsc_estimate_steering, gsc_frames, ols_frames, ola_synthesize, prepare_frames,
    principal_component, wpe_frames, GscState, WpeState,
};
pub use run::{inverse_magnitude, run_frames, run_scene, score_scene, tune_classic, RunOutput, TaskScore};
pub use spec::{Filtering, TaskKind, TaskSpec};
