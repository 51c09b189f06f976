//! Block frequency-domain adaptive filters with classical update rules and a
//! meta-learned complex recurrent optimizer.

pub mod classic;
pub mod dsp;
pub mod error;
pub mod metrics;
pub mod neural;
pub mod scenes;
pub mod signals;
pub mod tasks;
pub mod train;

pub use error::{Error, Result};
pub use rustfft::num_complex::Complex64;
