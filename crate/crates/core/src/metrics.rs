//! Evaluation metrics: segmental SNR, ERLE, SRR, SNR of system magnitudes,
//! SI-SDR, and the energy-threshold VAD used to select frames for averaging.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::dsp::FrameSpec;
use crate::error::{Error, Result};

/// Metric values are clamped to `[-CLAMP_DB, CLAMP_DB]`.
pub const CLAMP_DB: f64 = 100.0;

/// Default VAD threshold relative to the loudest frame.
pub const VAD_THRESHOLD_DB: f64 = -40.0;

/// `10 log10(num / den)`, clamped. A zero denominator is a perfect score.
pub fn ratio_db(num: f64, den: f64) -> f64 {
    if den <= 0.0 {
        return if num > 0.0 { CLAMP_DB } else { 0.0 };
    }
    if num <= 0.0 {
        return -CLAMP_DB;
    }
    (10.0 * (num / den).log10()).clamp(-CLAMP_DB, CLAMP_DB)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub values: Vec<f64>,
    pub active: Vec<bool>,
    /// Mean over active frames (all frames when none is active).
    pub mean: f64,
}

impl MetricSeries {
    pub fn new(values: Vec<f64>, active: Vec<bool>) -> Self {
        debug_assert_eq!(values.len(), active.len());
        let picked: Vec<f64> = values
            .iter()
            .zip(&active)
            .filter(|(_, &a)| a)
            .map(|(v, _)| *v)
            .collect();
        let pool = if picked.is_empty() { &values } else { &picked };
        let mean = if pool.is_empty() {
            0.0
        } else {
            pool.iter().sum::<f64>() / pool.len() as f64
        };
        Self {
            values,
            active,
            mean,
        }
    }

    /// Highest mean over any window of `span` consecutive frames, counting
    /// only active frames inside the window. Captures converged performance.
    pub fn peak(&self, span: usize) -> f64 {
        let span = span.max(1).min(self.values.len().max(1));
        let mut best = f64::NEG_INFINITY;
        for start in 0..=self.values.len().saturating_sub(span) {
            let (mut sum, mut n) = (0.0, 0usize);
            for i in start..start + span {
                if self.active[i] {
                    sum += self.values[i];
                    n += 1;
                }
            }
            if n > 0 {
                best = best.max(sum / n as f64);
            }
        }
        if best.is_finite() {
            best
        } else {
            self.mean
        }
    }
}

/// Frame boundaries `[tau R, tau R + N)` over a signal of `len` samples. A
/// signal shorter than one window yields a single frame.
fn frame_bounds(len: usize, spec: &FrameSpec) -> Vec<(usize, usize)> {
    let (n, r) = (spec.window_len, spec.hop);
    if len == 0 {
        return Vec::new();
    }
    if len < n {
        return vec![(0, len)];
    }
    (0..)
        .map(|tau| tau * r)
        .take_while(|&s| s + n <= len)
        .map(|s| (s, s + n))
        .collect()
}

fn energy(x: ArrayView2<'_, f64>, (a, b): (usize, usize)) -> f64 {
    x.slice(ndarray::s![a..b, ..]).iter().map(|v| v * v).sum()
}

fn diff_energy(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, (a, b): (usize, usize)) -> f64 {
    x.slice(ndarray::s![a..b, ..])
        .iter()
        .zip(y.slice(ndarray::s![a..b, ..]).iter())
        .map(|(p, q)| (p - q) * (p - q))
        .sum()
}

/// Frame is active when its energy exceeds `threshold_db` relative to the
/// loudest frame.
pub fn energy_vad(x: ArrayView2<'_, f64>, spec: &FrameSpec, threshold_db: f64) -> Vec<bool> {
    let bounds = frame_bounds(x.nrows(), spec);
    let energies: Vec<f64> = bounds.iter().map(|&b| energy(x, b)).collect();
    let max = energies.iter().cloned().fold(0.0, f64::max);
    let floor = max * 10f64.powf(threshold_db / 10.0);
    energies.iter().map(|&e| e > 0.0 && e > floor).collect()
}

fn check_len(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("signals differ in shape: {:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

fn segmental(
    reference: ArrayView2<'_, f64>,
    estimate: ArrayView2<'_, f64>,
    spec: &FrameSpec,
    vad: Option<&[bool]>,
    numerator_is_estimate: bool,
) -> Result<MetricSeries> {
    check_len(reference, estimate)?;
    let bounds = frame_bounds(reference.nrows(), spec);
    let values: Vec<f64> = bounds
        .iter()
        .map(|&b| {
            let num = if numerator_is_estimate {
                energy(estimate, b)
            } else {
                energy(reference, b)
            };
            ratio_db(num, diff_energy(reference, estimate, b))
        })
        .collect();
    let active = match vad {
        Some(v) if v.len() == values.len() => v.to_vec(),
        Some(v) => {
            return Err(Error::Shape(format!(
                "vad mask has {} frames, metric has {}",
                v.len(),
                values.len()
            )))
        }
        None => energy_vad(reference, spec, VAD_THRESHOLD_DB),
    };
    Ok(MetricSeries::new(values, active))
}

/// Segmental `10 log10(‖d‖² / ‖d - y‖²)`.
pub fn segmental_snr(
    d: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    spec: &FrameSpec,
    vad: Option<&[bool]>,
) -> Result<MetricSeries> {
    segmental(d, y, spec, vad, false)
}

/// Segmental echo-return loss enhancement against the noiseless echo `d_u`.
pub fn erle(
    d_u: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    spec: &FrameSpec,
    vad: Option<&[bool]>,
) -> Result<MetricSeries> {
    segmental(d_u, y, spec, vad, false)
}

/// Segmental `10 log10(‖d̂‖² / ‖d - d̂‖²)`; lower means more energy removed.
pub fn srr(
    d: ArrayView2<'_, f64>,
    d_hat: ArrayView2<'_, f64>,
    spec: &FrameSpec,
    vad: Option<&[bool]>,
) -> Result<MetricSeries> {
    segmental(d, d_hat, spec, vad, true)
}

/// SNR between estimated and true inverse-system magnitudes (phase ignored).
pub fn snr_w(w_hat_mag: &[f64], w_mag: &[f64]) -> Result<f64> {
    if w_hat_mag.len() != w_mag.len() {
        return Err(Error::Shape("magnitude responses differ in length".into()));
    }
    let num: f64 = w_hat_mag.iter().map(|v| v * v).sum();
    let den: f64 = w_hat_mag.iter().zip(w_mag).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(ratio_db(num, den))
}

/// Scale-invariant SDR with the projection `a = ŝᵀs / ‖s‖²`.
pub fn si_sdr(s: &[f64], s_hat: &[f64]) -> Result<f64> {
    if s.len() != s_hat.len() {
        return Err(Error::Shape("reference and estimate differ in length".into()));
    }
    let ss: f64 = s.iter().map(|v| v * v).sum();
    if ss <= 0.0 {
        return Err(Error::Config("SI-SDR reference is all zeros".into()));
    }
    let a = s.iter().zip(s_hat).map(|(p, q)| p * q).sum::<f64>() / ss;
    let target: f64 = a * a * ss;
    let resid: f64 = s.iter().zip(s_hat).map(|(p, q)| (a * p - q).powi(2)).sum();
    Ok(ratio_db(target, resid))
}
