//! STFT framing and block frequency-domain filtering (overlap-save and
//! overlap-add). Forward transforms are unnormalized, inverses carry `1/K`.
//! Spectra are one-sided: a length-`K` frame has `K/2 + 1` bins.

pub mod fft;
pub mod filter;
pub mod frame;

pub use fft::RealFft;
pub use filter::{
    antialias_project, ola_apply, ols_apply, project_spectrum, project_spectrum_adjoint,
    FilterWeights, OlaState,
};
pub use frame::{frame_segment, frame_stream, sqrt_hann, FrameSpec, FreqBuffer, FreqFrame, WindowKind};
