//! Multi-frame, multichannel block frequency-domain filters applied with
//! overlap-save or overlap-add.

use ndarray::{Array2, Array3};
use rustfft::num_complex::Complex64;

use super::fft::RealFft;
use super::frame::{FrameSpec, FreqBuffer, FreqFrame, WindowKind};
use crate::error::{config_err, shape_err, Result};

/// Filter weights `bins x channels x B`. When `constrained`, the anti-aliasing
/// projection is applied before every product (overlap-save proper).
#[derive(Debug, Clone, PartialEq)]
pub struct FilterWeights {
    pub w: Array3<Complex64>,
    pub constrained: bool,
}

impl FilterWeights {
    pub fn zeros(bins: usize, channels: usize, depth: usize, constrained: bool) -> Self {
        Self {
            w: Array3::zeros((bins, channels, depth)),
            constrained,
        }
    }

    pub fn bins(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn depth(&self) -> usize {
        self.w.shape()[2]
    }
}

/// Zeroes the last `R` time-domain taps of one spectrum in place.
pub fn project_spectrum(spec: &mut [Complex64], hop: usize, fft: &RealFft) {
    let k = fft.len();
    let mut t = fft.inverse(spec);
    for v in &mut t[k - hop..] {
        *v = 0.0;
    }
    spec.copy_from_slice(&fft.forward(&t));
}

/// Adjoint of [`project_spectrum`] under the real inner product.
pub fn project_spectrum_adjoint(g: &mut [Complex64], hop: usize, fft: &RealFft) {
    let k = fft.len();
    let mut t = fft.forward_adjoint(g);
    for v in &mut t[k - hop..] {
        *v = 0.0;
    }
    g.copy_from_slice(&fft.inverse_adjoint(&t));
}

/// Anti-aliasing projection `F T_R' T_R F^-1` applied to every channel and
/// buffered frame of `w`.
pub fn antialias_project(w: &FilterWeights, spec: &FrameSpec) -> FilterWeights {
    let fft = RealFft::new(spec.fft_len());
    let mut out = w.clone();
    for m in 0..w.channels() {
        for b in 0..w.depth() {
            let mut col: Vec<Complex64> = w.w.slice(ndarray::s![.., m, b]).to_vec();
            project_spectrum(&mut col, spec.hop, &fft);
            for (k, v) in col.into_iter().enumerate() {
                out.w[[k, m, b]] = v;
            }
        }
    }
    out
}

fn check_shapes(u: &FreqBuffer, w: &FilterWeights, spec: &FrameSpec) -> Result<()> {
    let shape = u.frames().shape();
    if shape[0] != spec.bins() || w.bins() != spec.bins() {
        return Err(shape_err(format!(
            "expected {} bins, got input {} and filter {}",
            spec.bins(),
            shape[0],
            w.bins()
        )));
    }
    if shape[1] != w.depth() || shape[2] != w.channels() || w.channels() != spec.channels {
        return Err(shape_err(format!(
            "input buffer {:?} incompatible with filter {:?}",
            shape,
            w.w.shape()
        )));
    }
    Ok(())
}

/// Per-channel product `(u ⊙ w) 1`: output channel `m` uses input channel `m`.
fn diagonal_product(u: &FreqBuffer, w: &Array3<Complex64>) -> FreqFrame {
    let frames = u.frames();
    let (bins, depth, channels) = frames.dim();
    Array2::from_shape_fn((bins, channels), |(k, m)| {
        (0..depth).map(|b| frames[[k, b, m]] * w[[k, m, b]]).sum()
    })
}

/// Overlap-save filtering. Returns the circular product spectrum and the last
/// `R` samples of its inverse transform per channel.
pub fn ols_apply(
    u: &FreqBuffer,
    w: &FilterWeights,
    spec: &FrameSpec,
) -> Result<(FreqFrame, Array2<f64>)> {
    check_shapes(u, w, spec)?;
    let fft = RealFft::new(spec.fft_len());
    let effective = if w.constrained {
        antialias_project(w, spec).w
    } else {
        w.w.clone()
    };
    let y = diagonal_product(u, &effective);
    let k = spec.fft_len();
    let r = spec.hop;
    let mut y_time = Array2::zeros((r, spec.channels));
    for m in 0..spec.channels {
        let col: Vec<Complex64> = y.column(m).to_vec();
        let t = fft.inverse(&col);
        for i in 0..r {
            y_time[[i, m]] = t[k - r + i];
        }
    }
    Ok((y, y_time))
}

/// Overlap-add carry buffer, `K x channels`.
#[derive(Debug, Clone, PartialEq)]
pub struct OlaState {
    pub b: Array2<f64>,
}

impl OlaState {
    pub fn new(spec: &FrameSpec) -> Result<Self> {
        spec.validate()?;
        if spec.window != WindowKind::Hann || 2 * spec.hop != spec.window_len {
            return Err(config_err(
                "overlap-add requires hann analysis/synthesis with R = N/2",
            ));
        }
        Ok(Self {
            b: Array2::zeros((spec.fft_len(), spec.channels)),
        })
    }
}

/// Overlap-add filtering: `y = u ⊙ w`, time output is the head of the
/// synthesis-windowed inverse plus the carried tail of the previous frame.
pub fn ola_apply(
    u: &FreqBuffer,
    w: &FilterWeights,
    state: &OlaState,
    spec: &FrameSpec,
) -> Result<(FreqFrame, Array2<f64>, OlaState)> {
    check_shapes(u, w, spec)?;
    if state.b.dim() != (spec.fft_len(), spec.channels) {
        return Err(shape_err("overlap-add state does not match frame spec"));
    }
    // Validates the window/hop pairing.
    OlaState::new(spec)?;
    let fft = RealFft::new(spec.fft_len());
    let syn = spec.synthesis_window();
    let y = diagonal_product(u, &w.w);
    let k = spec.fft_len();
    let r = spec.hop;
    let mut y_time = Array2::zeros((r, spec.channels));
    let mut next = Array2::zeros((k, spec.channels));
    for m in 0..spec.channels {
        let col: Vec<Complex64> = y.column(m).to_vec();
        let t = fft.inverse(&col);
        for i in 0..k {
            next[[i, m]] = t[i] * syn[i];
        }
        // Shifted carry: the last K-R samples of b move to the front.
        for i in 0..k - r {
            next[[i, m]] += state.b[[r + i, m]];
        }
        for i in 0..r {
            y_time[[i, m]] = t[i] * syn[i] + state.b[[k - r + i, m]];
        }
    }
    Ok((y, y_time, OlaState { b: next }))
}
