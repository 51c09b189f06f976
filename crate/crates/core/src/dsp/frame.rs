//! Framing of multichannel time signals into one-sided spectra.

use ndarray::{Array2, Array3, ArrayView2, Axis};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::fft::RealFft;
use crate::error::{config_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    Rectangular,
    Hann,
}

/// Window length `N`, hop `R`, channel count `M`. The FFT length equals `N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSpec {
    pub window_len: usize,
    pub hop: usize,
    pub window: WindowKind,
    pub channels: usize,
}

impl FrameSpec {
    pub fn new(window_len: usize, hop: usize, window: WindowKind, channels: usize) -> Result<Self> {
        let spec = Self {
            window_len,
            hop,
            window,
            channels,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.hop > self.window_len {
            return Err(config_err(format!(
                "hop {} must satisfy 0 < R <= N = {}",
                self.hop, self.window_len
            )));
        }
        if self.window_len < 2 || self.window_len % 2 != 0 {
            return Err(config_err("window length must be even"));
        }
        if self.channels == 0 {
            return Err(config_err("at least one channel required"));
        }
        if self.window == WindowKind::Hann && 2 * self.hop != self.window_len {
            return Err(config_err(
                "hann windows require R = N/2 for constant overlap-add",
            ));
        }
        Ok(())
    }

    pub fn fft_len(&self) -> usize {
        self.window_len
    }

    pub fn bins(&self) -> usize {
        self.window_len / 2 + 1
    }

    /// Analysis window. Hann framing uses the square root of a periodic Hann
    /// window so that analysis times synthesis sums to one at 50% overlap.
    pub fn analysis_window(&self) -> Vec<f64> {
        match self.window {
            WindowKind::Rectangular => vec![1.0; self.window_len],
            WindowKind::Hann => sqrt_hann(self.window_len),
        }
    }

    pub fn synthesis_window(&self) -> Vec<f64> {
        self.analysis_window()
    }

    /// Number of frames produced for a signal of `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        len / self.hop
    }
}

pub fn sqrt_hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let h = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos();
            h.sqrt()
        })
        .collect()
}

/// One frequency-domain frame: `bins x channels`.
pub type FreqFrame = Array2<Complex64>;

/// Time samples covered by frame `tau`: `[(tau+1)R - N, (tau+1)R)`, zero
/// outside the signal.
pub fn frame_segment(x: ArrayView2<'_, f64>, channel: usize, tau: usize, spec: &FrameSpec) -> Vec<f64> {
    let n = spec.window_len;
    let end = (tau + 1) * spec.hop;
    let len = x.nrows();
    (0..n)
        .map(|i| {
            let t = end as isize - n as isize + i as isize;
            if t >= 0 && (t as usize) < len {
                x[[t as usize, channel]]
            } else {
                0.0
            }
        })
        .collect()
}

/// Splits `x` (`T x M`) into windowed one-sided spectra. Frame `tau` holds
/// the `N` samples ending at `(tau+1)R - 1`; the head is zero-padded.
pub fn frame_stream(x: ArrayView2<'_, f64>, spec: &FrameSpec) -> Result<Vec<FreqFrame>> {
    spec.validate()?;
    if x.ncols() != spec.channels {
        return Err(Error::Shape(format!(
            "signal has {} channels, spec expects {}",
            x.ncols(),
            spec.channels
        )));
    }
    if let Some((idx, _)) = x.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite(format!("input sample {idx}")));
    }
    let fft = RealFft::new(spec.fft_len());
    let win = spec.analysis_window();
    let frames = spec.frame_count(x.nrows());
    let mut out = Vec::with_capacity(frames);
    for tau in 0..frames {
        let mut frame = Array2::zeros((spec.bins(), spec.channels));
        for m in 0..spec.channels {
            let mut seg = frame_segment(x, m, tau, spec);
            for (s, w) in seg.iter_mut().zip(&win) {
                *s *= w;
            }
            for (k, v) in fft.forward(&seg).into_iter().enumerate() {
                frame[[k, m]] = v;
            }
        }
        out.push(frame);
    }
    Ok(out)
}

/// The last `B` frames, oldest first: `bins x B x channels`.
#[derive(Debug, Clone)]
pub struct FreqBuffer {
    frames: Array3<Complex64>,
}

impl FreqBuffer {
    pub fn new(bins: usize, depth: usize, channels: usize) -> Self {
        assert!(depth >= 1, "buffer depth must be at least one frame");
        Self {
            frames: Array3::zeros((bins, depth, channels)),
        }
    }

    pub fn depth(&self) -> usize {
        self.frames.len_of(Axis(1))
    }

    /// Drops the oldest frame and appends `frame` as newest.
    pub fn push(&mut self, frame: &FreqFrame) {
        let depth = self.depth();
        for b in 1..depth {
            let (src, mut dst) = (
                self.frames.index_axis(Axis(1), b).to_owned(),
                self.frames.index_axis_mut(Axis(1), b - 1),
            );
            dst.assign(&src);
        }
        self.frames.index_axis_mut(Axis(1), depth - 1).assign(frame);
    }

    pub fn frames(&self) -> &Array3<Complex64> {
        &self.frames
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dft(x: &[f64]) -> Vec<Complex64> {
        let n = x.len();
        (0..=n / 2)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(t, &v)| Complex64::from_polar(v, -2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64))
                    .sum()
            })
            .collect()
    }

    #[test]
    fn head_padded_frames_match_definition() {
        let x = Array2::from_shape_vec((6, 1), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let spec = FrameSpec::new(4, 2, WindowKind::Rectangular, 1).unwrap();
        let frames = frame_stream(x.view(), &spec).unwrap();
        let expected = [[0.0, 0.0, 1.0, 2.0], [1.0, 2.0, 3.0, 4.0], [3.0, 4.0, 5.0, 6.0]];
        assert_eq!(frames.len(), 3);
        for (f, seg) in frames.iter().zip(expected.iter()) {
            let want = dft(seg);
            for k in 0..3 {
                assert!((f[[k, 0]] - want[k]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_signal_gives_zero_frames() {
        let x = Array2::zeros((64, 2));
        let spec = FrameSpec::new(8, 4, WindowKind::Hann, 2).unwrap();
        for f in frame_stream(x.view(), &spec).unwrap() {
            assert!(f.iter().all(|c| c.norm() == 0.0));
        }
    }

    #[test]
    fn short_signal_gives_no_frames() {
        let x = Array2::zeros((3, 1));
        let spec = FrameSpec::new(8, 4, WindowKind::Rectangular, 1).unwrap();
        assert!(frame_stream(x.view(), &spec).unwrap().is_empty());
    }

    #[test]
    fn non_finite_input_rejected() {
        let mut x = Array2::zeros((16, 1));
        x[[5, 0]] = f64::NAN;
        let spec = FrameSpec::new(8, 4, WindowKind::Rectangular, 1).unwrap();
        assert!(matches!(frame_stream(x.view(), &spec), Err(Error::NonFinite(_))));
    }

    #[test]
    fn inverse_recovers_windowed_segments() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Array2::from_shape_fn((64, 1), |_| rng.gen_range(-1.0..1.0));
        for window in [WindowKind::Rectangular, WindowKind::Hann] {
            let spec = FrameSpec::new(8, 4, window, 1).unwrap();
            let frames = frame_stream(x.view(), &spec).unwrap();
            let fft = RealFft::new(8);
            let win = spec.analysis_window();
            for (tau, f) in frames.iter().enumerate() {
                let col: Vec<Complex64> = f.column(0).to_vec();
                let back = fft.inverse(&col);
                let seg = frame_segment(x.view(), 0, tau, &spec);
                let num: f64 = back
                    .iter()
                    .zip(seg.iter().zip(&win))
                    .map(|(b, (s, w))| (b - s * w).powi(2))
                    .sum();
                let den: f64 = seg.iter().map(|s| s * s).sum::<f64>().max(1e-300);
                assert!((num / den).sqrt() <= 1e-12);
            }
        }
    }

    #[test]
    fn hann_requires_half_overlap() {
        assert!(FrameSpec::new(8, 2, WindowKind::Hann, 1).is_err());
        assert!(FrameSpec::new(8, 0, WindowKind::Rectangular, 1).is_err());
        assert!(FrameSpec::new(8, 9, WindowKind::Rectangular, 1).is_err());
    }

    #[test]
    fn buffer_shifts_oldest_out() {
        let mut buf = FreqBuffer::new(2, 3, 1);
        for v in 1..=4 {
            let f = Array2::from_elem((2, 1), Complex64::new(v as f64, 0.0));
            buf.push(&f);
        }
        let got: Vec<f64> = (0..3).map(|b| buf.frames()[[0, b, 0]].re).collect();
        assert_eq!(got, vec![2.0, 3.0, 4.0]);
    }
}
