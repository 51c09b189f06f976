//! Classical per-frequency adaptive filter optimizers: LMS, NLMS, RMSProp and
//! RLS, plus a grid-search tuner.

mod optimizer;
mod steps;
mod tune;

pub use optimizer::{ClassicConfig, ClassicKind, ClassicOptimizer};
pub use steps::{lms_step, nlms_step, rls_step, rmsprop_step, RlsBin, RlsStatus, EPS};
pub use tune::{grid_search, Grid, TuneEntry, TuneReport};
