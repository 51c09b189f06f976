//! The filter being adapted: one frame of filtering, the instantaneous
//! loss gradient handed to the optimizer, and the exact reverse pass of both
//! (used for meta-training).
//!
//! Overlap-save (`y = Σ x w`):
//!
//! ```text
//! Yc = Σ x θ                 circular product
//! y  = last R of irfft(Yc)   valid output samples
//! Yv = rfft([0; y])          E = Dv - Yv with Dv = rfft([0; d])
//! ∇  = Z(-conj(x) E λ)       Z only when constrained
//! ```
//!
//! Overlap-add (`y = Σ x conj(w)`):
//!
//! ```text
//! Y = Σ x conj(θ),  E = D - Y,  ∇ = -x conj(E) λ
//! y = head R of (win ⊙ irfft(Y)) + carried tail
//! ```

use ndarray::Array2;
use rustfft::num_complex::Complex64;

use super::spec::{Filtering, TaskSpec};
use crate::dsp::{project_spectrum, project_spectrum_adjoint, RealFft};
use crate::error::{shape_err, Result};
use crate::signals::{FrameSignals, TapLayout, UpdateRule};

type C = Complex64;

/// Data for one frame, independent of the filter.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameData {
    /// Tap inputs, `bins × taps`.
    pub x: Array2<C>,
    /// Desired spectrum seen by the adaptive filter loss, `bins × outputs`.
    pub d: Array2<C>,
    /// Desired spectrum for the frame-independent meta loss.
    pub d_loss: Array2<C>,
    /// Desired time samples emitted with this frame, `R × outputs`.
    pub d_time: Array2<f64>,
    /// Per-bin loss weight.
    pub weight: Vec<f64>,
}

/// Adaptive filter weights plus the overlap-add carry.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    /// `bins × taps`
    pub theta: Array2<C>,
    /// `R × outputs`
    pub tail: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct FrameOutput {
    /// Output samples, `R × outputs`.
    pub y_time: Array2<f64>,
    /// Spectrum compared with `d_loss` by the frame-independent meta loss.
    pub y_loss: Array2<C>,
    /// Inputs for the optimizer.
    pub signals: FrameSignals,
    /// Carry for the next frame (overlap-add only).
    pub tail: Array2<f64>,
}

impl FrameOutput {
    /// `d - y` in the time domain: the residual (echo-cancelled, dereverberated
    /// or beamformed signal, depending on the task).
    pub fn e_time(&self, fd: &FrameData) -> Array2<f64> {
        &fd.d_time - &self.y_time
    }
}

/// Cotangents flowing into one frame's outputs.
#[derive(Debug, Clone)]
pub struct FrameCotangents {
    /// Of `signals.grad`.
    pub grad: Array2<C>,
    /// Of the error `signals.d - signals.y`.
    pub e: Array2<C>,
    /// Of `signals.y`.
    pub y: Array2<C>,
    /// Of `y_loss`.
    pub y_loss: Array2<C>,
    /// Of `y_time`.
    pub y_time: Array2<f64>,
    /// Of the returned tail.
    pub tail: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct Optimizee {
    pub layout: TapLayout,
    pub filtering: Filtering,
    pub bins: usize,
    pub hop: usize,
    fft: RealFft,
    synthesis: Vec<f64>,
}

impl Optimizee {
    pub fn new(spec: &TaskSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            layout: spec.layout(),
            filtering: spec.filtering(),
            bins: spec.frame.bins(),
            hop: spec.frame.hop,
            fft: RealFft::new(spec.frame.fft_len()),
            synthesis: spec.frame.synthesis_window(),
        })
    }

    pub fn taps(&self) -> usize {
        self.layout.taps()
    }

    pub fn outputs(&self) -> usize {
        self.layout.outputs
    }

    pub fn fft(&self) -> &RealFft {
        &self.fft
    }

    pub fn initial_state(&self) -> FilterState {
        FilterState {
            theta: Array2::zeros((self.bins, self.taps())),
            tail: Array2::zeros((self.hop, self.outputs())),
        }
    }

    fn check(&self, st: &FilterState, fd: &FrameData) -> Result<()> {
        let (b, p, o, r) = (self.bins, self.taps(), self.outputs(), self.hop);
        if st.theta.dim() != (b, p)
            || fd.x.dim() != (b, p)
            || fd.d.dim() != (b, o)
            || fd.d_loss.dim() != (b, o)
            || fd.d_time.dim() != (r, o)
            || fd.weight.len() != b
        {
            return Err(shape_err(format!(
                "frame data does not fit a filter with {b} bins, {p} taps, {o} outputs"
            )));
        }
        Ok(())
    }

    /// Spectrum of `[0; t]` with `t` placed in the last `R` samples.
    fn padded_forward(&self, t: ndarray::ArrayView1<'_, f64>) -> Vec<C> {
        let k = self.fft.len();
        let mut buf = vec![0.0; k];
        for (i, v) in t.iter().enumerate() {
            buf[k - self.hop + i] = *v;
        }
        self.fft.forward(&buf)
    }

    /// Filters one frame with the current weights.
    pub fn forward(&self, st: &FilterState, fd: &FrameData) -> Result<FrameOutput> {
        self.check(st, fd)?;
        let (bins, taps, outs, r) = (self.bins, self.taps(), self.outputs(), self.hop);
        let k = self.fft.len();
        let mut yf: Array2<C> = Array2::zeros((bins, outs));
        for kk in 0..bins {
            for p in 0..taps {
                let o = self.layout.tap_output[p];
                yf[[kk, o]] += self.layout.apply(fd.x[[kk, p]], st.theta[[kk, p]]);
            }
        }
        let mut y_time = Array2::zeros((r, outs));
        let mut tail = Array2::zeros((r, outs));
        let y_sig = match self.filtering {
            Filtering::Ols { .. } => {
                let mut yv = Array2::zeros((bins, outs));
                for o in 0..outs {
                    let t = self.fft.inverse(&yf.column(o).to_vec());
                    for i in 0..r {
                        y_time[[i, o]] = t[k - r + i];
                    }
                    for (kk, v) in self.padded_forward(y_time.column(o)).into_iter().enumerate() {
                        yv[[kk, o]] = v;
                    }
                }
                yv
            }
            Filtering::Ola => {
                for o in 0..outs {
                    let t = self.fft.inverse(&yf.column(o).to_vec());
                    for i in 0..r {
                        y_time[[i, o]] = t[i] * self.synthesis[i] + st.tail[[i, o]];
                        tail[[i, o]] = t[r + i] * self.synthesis[r + i];
                    }
                }
                yf.clone()
            }
        };
        let e = &fd.d - &y_sig;
        let mut grad = Array2::zeros((bins, taps));
        for kk in 0..bins {
            for p in 0..taps {
                let o = self.layout.tap_output[p];
                grad[[kk, p]] = self.layout.grad(fd.x[[kk, p]], e[[kk, o]], fd.weight[kk]);
            }
        }
        if let Filtering::Ols { constrained: true } = self.filtering {
            for p in 0..taps {
                let mut col = grad.column(p).to_vec();
                project_spectrum(&mut col, r, &self.fft);
                grad.column_mut(p).assign(&ndarray::Array1::from(col));
            }
        }
        Ok(FrameOutput {
            y_time,
            y_loss: yf,
            signals: FrameSignals {
                grad,
                x: fd.x.clone(),
                d: fd.d.clone(),
                y: y_sig,
                weight: fd.weight.clone(),
            },
            tail,
        })
    }

    /// `θ ← θ + Δ`, re-projected when the filter is constrained.
    pub fn apply_update(&self, theta: &mut Array2<C>, delta: &Array2<C>) {
        *theta += delta;
        if let Filtering::Ols { constrained: true } = self.filtering {
            self.project(theta);
        }
    }

    pub fn project(&self, theta: &mut Array2<C>) {
        for p in 0..theta.ncols() {
            let mut col = theta.column(p).to_vec();
            project_spectrum(&mut col, self.hop, &self.fft);
            theta.column_mut(p).assign(&ndarray::Array1::from(col));
        }
    }

    /// Transpose of [`Optimizee::project`].
    pub fn project_adjoint(&self, g: &mut Array2<C>) {
        for p in 0..g.ncols() {
            let mut col = g.column(p).to_vec();
            project_spectrum_adjoint(&mut col, self.hop, &self.fft);
            g.column_mut(p).assign(&ndarray::Array1::from(col));
        }
    }

    /// Filters one frame, asks `rule` for an update, applies it.
    pub fn step(&self, st: &mut FilterState, fd: &FrameData, rule: &mut dyn UpdateRule) -> Result<FrameOutput> {
        let out = self.forward(st, fd)?;
        let delta = rule.update(&out.signals)?;
        if delta.dim() != st.theta.dim() {
            return Err(shape_err("optimizer update does not match the filter"));
        }
        self.apply_update(&mut st.theta, &delta);
        st.tail.assign(&out.tail);
        Ok(out)
    }

    /// Reverse pass of [`Optimizee::forward`]: returns the cotangents of the
    /// weights and of the incoming tail.
    pub fn backward(&self, fd: &FrameData, cot: &FrameCotangents) -> (Array2<C>, Array2<f64>) {
        let (bins, taps, outs, r) = (self.bins, self.taps(), self.outputs(), self.hop);
        let k = self.fft.len();
        let mut g_grad = cot.grad.clone();
        if let Filtering::Ols { constrained: true } = self.filtering {
            self.project_adjoint(&mut g_grad);
        }
        // ∇ → E
        let mut g_e = cot.e.clone();
        for kk in 0..bins {
            let w = fd.weight[kk];
            for p in 0..taps {
                let o = self.layout.tap_output[p];
                let x = fd.x[[kk, p]];
                g_e[[kk, o]] += match self.filtering {
                    // ∇ = -conj(x) E w
                    Filtering::Ols { .. } => -(x * w) * g_grad[[kk, p]],
                    // ∇ = -x conj(E) w
                    Filtering::Ola => g_grad[[kk, p]].conj() * (-(x * w)),
                };
            }
        }
        // E = D - Y_sig
        let g_ysig = &cot.y - &g_e;
        let mut g_theta = Array2::zeros((bins, taps));
        let mut g_tail_in = Array2::zeros((r, outs));
        let mut g_yf = cot.y_loss.clone();
        match self.filtering {
            Filtering::Ols { .. } => {
                for o in 0..outs {
                    let back = self.fft.forward_adjoint(&g_ysig.column(o).to_vec());
                    let mut g_t = vec![0.0; k];
                    for i in 0..r {
                        g_t[k - r + i] = back[k - r + i] + cot.y_time[[i, o]];
                    }
                    for (kk, v) in self.fft.inverse_adjoint(&g_t).into_iter().enumerate() {
                        g_yf[[kk, o]] += v;
                    }
                }
            }
            Filtering::Ola => {
                g_yf += &g_ysig;
                for o in 0..outs {
                    let mut g_t = vec![0.0; k];
                    for i in 0..r {
                        g_t[i] = cot.y_time[[i, o]] * self.synthesis[i];
                        g_t[r + i] = cot.tail[[i, o]] * self.synthesis[r + i];
                        g_tail_in[[i, o]] = cot.y_time[[i, o]];
                    }
                    for (kk, v) in self.fft.inverse_adjoint(&g_t).into_iter().enumerate() {
                        g_yf[[kk, o]] += v;
                    }
                }
            }
        }
        for kk in 0..bins {
            for p in 0..taps {
                let o = self.layout.tap_output[p];
                let x = fd.x[[kk, p]];
                g_theta[[kk, p]] = match self.filtering {
                    Filtering::Ols { .. } => x.conj() * g_yf[[kk, o]],
                    Filtering::Ola => g_yf[[kk, o]].conj() * x,
                };
            }
        }
        (g_theta, g_tail_in)
    }
}

/// Output of one frame's valid samples over the whole stream, `frames·R × outputs`.
pub fn stack_time(parts: &[Array2<f64>]) -> Array2<f64> {
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    if views.is_empty() {
        return Array2::zeros((0, 0));
    }
    ndarray::concatenate(ndarray::Axis(0), &views).expect("frames share a column count")
}
