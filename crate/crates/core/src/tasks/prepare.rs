//! Turns time signals into per-frame filter inputs for each task.

use std::collections::VecDeque;

use ndarray::{Array2, ArrayView2};
use rustfft::num_complex::Complex64;

use super::optimizee::FrameData;
use super::spec::{TaskKind, TaskSpec};
use crate::classic::EPS;
use crate::dsp::{frame_segment, frame_stream, FreqBuffer, FreqFrame, RealFft};
use crate::error::{shape_err, Error, Result};
use crate::scenes::Scene;

type C = Complex64;

/// Frames for any task.
pub fn prepare_frames(spec: &TaskSpec, scene: &Scene) -> Result<Vec<FrameData>> {
    spec.validate()?;
    match spec.kind {
        TaskKind::SystemId | TaskKind::Aec | TaskKind::Eq => ols_frames(spec, scene.u.view(), scene.d.view()),
        TaskKind::Wpe => wpe_frames(spec, scene.d.view()),
        TaskKind::Gsc => {
            let clean = scene
                .refs
                .clean
                .as_ref()
                .ok_or_else(|| Error::Config("beamforming needs the clean source image".into()))?;
            gsc_frames(spec, scene.u.view(), clean.view()).map(|(f, _)| f)
        }
    }
}

/// Overlap-save frames: tap inputs are the last `B` input spectra per
/// channel, the desired signal is the matching window of `d`.
pub fn ols_frames(spec: &TaskSpec, u: ArrayView2<'_, f64>, d: ArrayView2<'_, f64>) -> Result<Vec<FrameData>> {
    let fs = &spec.frame;
    if u.dim() != d.dim() {
        return Err(shape_err(format!("input {:?} and desired {:?} differ", u.dim(), d.dim())));
    }
    let frames = frame_stream(u, fs)?;
    if let Some((i, _)) = d.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite(format!("desired sample {i}")));
    }
    let fft = RealFft::new(fs.fft_len());
    let (bins, m, depth, r, k) = (fs.bins(), fs.channels, spec.depth, fs.hop, fs.fft_len());
    let mut buf = FreqBuffer::new(bins, depth, m);
    let mut out = Vec::with_capacity(frames.len());
    for (tau, f) in frames.iter().enumerate() {
        buf.push(f);
        let b = buf.frames();
        let x = Array2::from_shape_fn((bins, m * depth), |(kk, p)| b[[kk, p % depth, p / depth]]);
        let mut dv = Array2::zeros((bins, m));
        let mut dl = Array2::zeros((bins, m));
        let mut dt = Array2::zeros((r, m));
        for ch in 0..m {
            let win = frame_segment(d, ch, tau, fs);
            for (kk, v) in fft.forward(&win).into_iter().enumerate() {
                dl[[kk, ch]] = v;
            }
            let mut padded = vec![0.0; k];
            padded[k - r..].copy_from_slice(&win[k - r..]);
            for i in 0..r {
                dt[[i, ch]] = win[k - r + i];
            }
            for (kk, v) in fft.forward(&padded).into_iter().enumerate() {
                dv[[kk, ch]] = v;
            }
        }
        out.push(FrameData {
            x,
            d: dv,
            d_loss: dl,
            d_time: dt,
            weight: vec![1.0; bins],
        });
    }
    Ok(out)
}

/// Overlap-add synthesis of a sequence of single-output spectra.
pub fn ola_synthesize(spec: &TaskSpec, spectra: &[Vec<C>]) -> Vec<Array2<f64>> {
    let fs = &spec.frame;
    let fft = RealFft::new(fs.fft_len());
    let syn = fs.synthesis_window();
    let r = fs.hop;
    let mut tail = vec![0.0; r];
    spectra
        .iter()
        .map(|s| {
            let t = fft.inverse(s);
            let mut y = Array2::zeros((r, 1));
            for i in 0..r {
                y[[i, 0]] = t[i] * syn[i] + tail[i];
                tail[i] = t[r + i] * syn[r + i];
            }
            y
        })
        .collect()
}

/// Delayed-frame buffer and running power for dereverberation. Prediction
/// taps read frames `τ-D-B+1 ..= τ-D` of every channel; the loss weight is
/// `1/λ²` with `λ²` the mean power over the `B+D` most recent frames.
#[derive(Debug, Clone)]
pub struct WpeState {
    depth: usize,
    delay: usize,
    channels: usize,
    /// Previous `B+D-1` frames, oldest first.
    history: VecDeque<FreqFrame>,
}

impl WpeState {
    pub fn new(bins: usize, channels: usize, depth: usize, delay: usize) -> Self {
        let n = depth + delay - 1;
        Self {
            depth,
            delay,
            channels,
            history: (0..n).map(|_| Array2::zeros((bins, channels))).collect(),
        }
    }

    /// Consumes the current frame; returns tap inputs (`bins × M·B`, tap
    /// `m·B + b`), the reference-channel frame, and the power `λ²` per bin.
    pub fn push(&mut self, frame: &FreqFrame) -> (Array2<C>, Array2<C>, Vec<f64>) {
        let (bins, m, depth) = (frame.nrows(), self.channels, self.depth);
        let x = Array2::from_shape_fn((bins, m * depth), |(k, p)| self.history[p % depth][[k, p / depth]]);
        let norm = (m * (depth + self.delay)) as f64;
        let lambda2: Vec<f64> = (0..bins)
            .map(|k| {
                let past: f64 = self
                    .history
                    .iter()
                    .map(|f| f.row(k).iter().map(|v| v.norm_sqr()).sum::<f64>())
                    .sum();
                let now: f64 = frame.row(k).iter().map(|v| v.norm_sqr()).sum();
                (past + now) / norm
            })
            .collect();
        let d = frame.slice(ndarray::s![.., 0..1]).to_owned();
        if !self.history.is_empty() {
            self.history.pop_front();
            self.history.push_back(frame.clone());
        }
        (x, d, lambda2)
    }
}

pub fn wpe_frames(spec: &TaskSpec, d: ArrayView2<'_, f64>) -> Result<Vec<FrameData>> {
    let fs = &spec.frame;
    let frames = frame_stream(d, fs)?;
    let mut st = WpeState::new(fs.bins(), fs.channels, spec.depth, spec.delay);
    let mut out = Vec::with_capacity(frames.len());
    let mut refs = Vec::with_capacity(frames.len());
    for f in &frames {
        let (x, dref, lambda2) = st.push(f);
        refs.push(dref.column(0).to_vec());
        out.push(FrameData {
            x,
            d_loss: dref.clone(),
            d: dref,
            d_time: Array2::zeros((fs.hop, 1)),
            weight: lambda2.iter().map(|l| 1.0 / l.max(EPS)).collect(),
        });
    }
    for (fd, t) in out.iter_mut().zip(ola_synthesize(spec, &refs)) {
        fd.d_time = t;
    }
    Ok(out)
}

/// Principal eigenvector of a Hermitian PSD matrix (`m × m`, row-major) by
/// power iteration, normalized so its first element is 1.
pub fn principal_component(phi: &[C], m: usize, init: Option<&[C]>, iters: usize, tol: f64) -> Result<Vec<C>> {
    let mut x: Vec<C> = match init {
        Some(v) => v.to_vec(),
        None => vec![C::new(1.0, 0.0); m],
    };
    let norm = |v: &[C]| v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    let n0 = norm(&x);
    if n0 == 0.0 {
        x = vec![C::new(1.0, 0.0); m];
    }
    let n0 = norm(&x);
    x.iter_mut().for_each(|v| *v /= n0);
    for _ in 0..iters {
        let y: Vec<C> = (0..m).map(|i| (0..m).map(|j| phi[i * m + j] * x[j]).sum()).collect();
        let ny = norm(&y);
        if ny == 0.0 || !ny.is_finite() {
            return Err(Error::Config("source covariance is zero or non-finite".into()));
        }
        let y: Vec<C> = y.into_iter().map(|v| v / ny).collect();
        let diff = norm(&y.iter().zip(&x).map(|(a, b)| a - b).collect::<Vec<_>>());
        x = y;
        if diff < tol {
            break;
        }
    }
    let first = x[0];
    if first.norm() < 1e-300 {
        return Err(Error::Divergence("steering vector has a zero reference element".into()));
    }
    Ok(x.into_iter().map(|v| v / first).collect())
}

/// `B = [-conj(v_1..)/conj(v_0); I]`, `m × (m-1)`, so that `vᴴ B = 0`.
pub fn blocking_matrix(v: &[C]) -> Array2<C> {
    let m = v.len();
    let mut b = Array2::zeros((m, m - 1));
    for j in 0..m - 1 {
        b[[0, j]] = -v[j + 1].conj() / v[0].conj();
        b[[j + 1, j]] = C::new(1.0, 0.0);
    }
    b
}

/// Steering vector and blocking matrix from a source covariance.
pub fn gsc_estimate_steering(phi: &[C], m: usize, init: Option<&[C]>) -> Result<(Vec<C>, Array2<C>)> {
    let v = principal_component(phi, m, init, 50, 1e-10)?;
    let b = blocking_matrix(&v);
    Ok((v, b))
}

/// Recursive source covariance per bin:
/// `Φ ← γ Φ + (1-γ)(s sᴴ + λ I)`.
#[derive(Debug, Clone)]
pub struct GscState {
    pub forget: f64,
    pub reg: f64,
    pub channels: usize,
    /// Per bin, row-major `M × M`.
    pub phi: Vec<Vec<C>>,
    /// Latest steering vector per bin.
    pub v: Vec<Vec<C>>,
}

impl GscState {
    pub fn new(bins: usize, channels: usize, forget: f64, reg: f64) -> Self {
        Self {
            forget,
            reg,
            channels,
            phi: vec![vec![C::new(0.0, 0.0); channels * channels]; bins],
            v: vec![vec![C::new(1.0, 0.0); channels]; bins],
        }
    }

    /// Folds in one clean-source frame (`bins × M`) and refreshes the
    /// steering vectors.
    pub fn update(&mut self, s: &FreqFrame) -> Result<()> {
        let m = self.channels;
        for (k, phi) in self.phi.iter_mut().enumerate() {
            for i in 0..m {
                for j in 0..m {
                    let mut add = s[[k, i]] * s[[k, j]].conj();
                    if i == j {
                        add += self.reg;
                    }
                    phi[i * m + j] = self.forget * phi[i * m + j] + (1.0 - self.forget) * add;
                }
            }
            self.v[k] = principal_component(phi, m, Some(&self.v[k]), 50, 1e-10)?;
        }
        Ok(())
    }
}

/// Beamforming frames: tap inputs `Bᴴu`, desired `vᴴu`. Also returns the
/// steering vectors used at the last frame.
pub fn gsc_frames(
    spec: &TaskSpec,
    u: ArrayView2<'_, f64>,
    clean: ArrayView2<'_, f64>,
) -> Result<(Vec<FrameData>, Vec<Vec<C>>)> {
    let fs = &spec.frame;
    let uf = frame_stream(u, fs)?;
    let sf = frame_stream(clean, fs)?;
    let (bins, m) = (fs.bins(), fs.channels);
    let mut st = GscState::new(bins, m, spec.gsc_forget, spec.gsc_reg);
    let mut out = Vec::with_capacity(uf.len());
    let mut refs = Vec::with_capacity(uf.len());
    for (uframe, sframe) in uf.iter().zip(&sf) {
        st.update(sframe)?;
        let mut x = Array2::zeros((bins, m - 1));
        let mut d = Array2::zeros((bins, 1));
        for k in 0..bins {
            let v = &st.v[k];
            let u0 = uframe[[k, 0]];
            for j in 0..m - 1 {
                x[[k, j]] = uframe[[k, j + 1]] - (v[j + 1] / v[0]) * u0;
            }
            d[[k, 0]] = (0..m).map(|i| v[i].conj() * uframe[[k, i]]).sum();
        }
        refs.push(d.column(0).to_vec());
        out.push(FrameData {
            x,
            d_loss: d.clone(),
            d,
            d_time: Array2::zeros((fs.hop, 1)),
            weight: vec![1.0; bins],
        });
    }
    for (fd, t) in out.iter_mut().zip(ola_synthesize(spec, &refs)) {
        fd.d_time = t;
    }
    Ok((out, st.v))
}
