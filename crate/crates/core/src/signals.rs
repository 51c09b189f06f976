//! Per-frame signals handed to an optimizer, shared by the classical and
//! learned update rules.

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// How filter taps combine with their inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    /// `y = sum x_p w_p` (convolutional filters).
    Plain,
    /// `y = sum conj(w_p) x_p` (prediction and beamforming filters).
    Hermitian,
}

/// Assignment of filter taps to outputs. Tap `p` reads input `x[:, p]` and
/// contributes to output `tap_output[p]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TapLayout {
    pub outputs: usize,
    pub tap_output: Vec<usize>,
    pub convention: Convention,
}

impl TapLayout {
    /// `channels` independent outputs, each with `depth` buffered taps.
    /// Taps are ordered channel-major.
    pub fn diagonal(channels: usize, depth: usize, convention: Convention) -> Self {
        Self {
            outputs: channels,
            tap_output: (0..channels * depth).map(|p| p / depth).collect(),
            convention,
        }
    }

    /// A single output fed by `taps` inputs.
    pub fn single(taps: usize, convention: Convention) -> Self {
        Self {
            outputs: 1,
            tap_output: vec![0; taps],
            convention,
        }
    }

    pub fn taps(&self) -> usize {
        self.tap_output.len()
    }

    pub fn taps_of(&self, output: usize) -> Vec<usize> {
        self.tap_output
            .iter()
            .enumerate()
            .filter(|(_, &o)| o == output)
            .map(|(p, _)| p)
            .collect()
    }

    /// Product of a tap input with its weight under this convention.
    #[inline]
    pub fn apply(&self, x: Complex64, w: Complex64) -> Complex64 {
        match self.convention {
            Convention::Plain => x * w,
            Convention::Hermitian => x * w.conj(),
        }
    }

    /// Descent-direction gradient of `weight * |e|^2` for one tap.
    #[inline]
    pub fn grad(&self, x: Complex64, e: Complex64, weight: f64) -> Complex64 {
        match self.convention {
            Convention::Plain => -(x.conj() * e) * weight,
            Convention::Hermitian => -(x * e.conj()) * weight,
        }
    }
}

/// Everything an optimizer may read at one frame. Shapes: `grad`, `x` are
/// `bins x taps`; `d`, `y` are `bins x outputs`; `weight` has one entry per
/// bin (the AF-loss normalizer, 1 unless the task normalizes).
#[derive(Debug, Clone)]
pub struct FrameSignals {
    pub grad: Array2<Complex64>,
    pub x: Array2<Complex64>,
    pub d: Array2<Complex64>,
    pub y: Array2<Complex64>,
    pub weight: Vec<f64>,
}

impl FrameSignals {
    pub fn bins(&self) -> usize {
        self.grad.nrows()
    }

    pub fn error(&self) -> Array2<Complex64> {
        &self.d - &self.y
    }
}

/// Anything that maps per-frame signals to a filter update `Δ`
/// (`bins × taps`).
pub trait UpdateRule {
    fn update(&mut self, sig: &FrameSignals) -> crate::Result<Array2<Complex64>>;
}

impl UpdateRule for crate::classic::ClassicOptimizer {
    fn update(&mut self, sig: &FrameSignals) -> crate::Result<Array2<Complex64>> {
        Ok(self.step(sig))
    }
}
