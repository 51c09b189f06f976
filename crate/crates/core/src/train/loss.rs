//! Meta losses over one unrolled segment, with their cotangents.
//!
//! Cotangents follow the real-pair convention used throughout the crate: for
//! a complex `y` the cotangent is `∂L/∂Re y + j ∂L/∂Im y`.

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};

/// Added to the mean error power before taking the log.
pub const LOG_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Per-frame spectral error, averaged over the segment.
    FrameIndependent,
    /// Error of the concatenated time-domain output.
    #[default]
    FrameAccumulated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaLoss {
    pub kind: LossKind,
    pub log: bool,
}

impl Default for MetaLoss {
    fn default() -> Self {
        Self {
            kind: LossKind::FrameAccumulated,
            log: true,
        }
    }
}

impl std::str::FromStr for MetaLoss {
    type Err = crate::Error;

    /// `frame_independent`, `frame_accumulated`, optionally suffixed with
    /// `_log` or `_linear` (log is the default).
    fn from_str(s: &str) -> Result<Self> {
        let (base, log) = if let Some(b) = s.strip_suffix("_linear") {
            (b, false)
        } else if let Some(b) = s.strip_suffix("_log") {
            (b, true)
        } else {
            (s, true)
        };
        let kind = match base {
            "frame_independent" => LossKind::FrameIndependent,
            "frame_accumulated" => LossKind::FrameAccumulated,
            other => return Err(crate::error::config_err(format!("unknown meta loss '{other}'"))),
        };
        Ok(Self { kind, log })
    }
}

/// Turns a mean error power and its cotangent scale into the final loss.
/// Returns `(loss, dloss/dmean)`.
fn finish(mean: f64, log: bool) -> (f64, f64) {
    if log {
        ((mean + LOG_EPS).ln(), 1.0 / (mean + LOG_EPS))
    } else {
        (mean, 1.0)
    }
}

/// Mean of `|d - y|²` over frames, bins and channels. Returns the loss and
/// the cotangent of every `y` frame.
pub fn frame_independent(
    d: &[&Array2<Complex64>],
    y: &[&Array2<Complex64>],
    log: bool,
) -> Result<(f64, Vec<Array2<Complex64>>)> {
    if d.len() != y.len() || d.iter().zip(y).any(|(a, b)| a.dim() != b.dim()) {
        return Err(shape_err("meta loss frames differ in shape"));
    }
    let count: usize = d.iter().map(|a| a.len()).sum();
    if count == 0 {
        return Err(shape_err("meta loss over an empty segment"));
    }
    let sum: f64 = d
        .iter()
        .zip(y)
        .map(|(a, b)| a.iter().zip(b.iter()).map(|(p, q)| (p - q).norm_sqr()).sum::<f64>())
        .sum();
    let (loss, scale) = finish(sum / count as f64, log);
    let c = -2.0 * scale / count as f64;
    let grads = d.iter().zip(y).map(|(a, b)| (*a - *b) * c).collect();
    Ok((loss, grads))
}

/// Mean of `(d̄ - ȳ)²` over the concatenated time samples.
pub fn frame_accumulated(d: &Array2<f64>, y: &Array2<f64>, log: bool) -> Result<(f64, Array2<f64>)> {
    if d.dim() != y.dim() {
        return Err(shape_err(format!(
            "accumulated meta loss: desired {:?} vs output {:?}",
            d.dim(),
            y.dim()
        )));
    }
    if d.is_empty() {
        return Err(shape_err("meta loss over an empty segment"));
    }
    let n = d.len() as f64;
    let diff = d - y;
    let (loss, scale) = finish(diff.iter().map(|v| v * v).sum::<f64>() / n, log);
    Ok((loss, diff * (-2.0 * scale / n)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_fit_is_log_eps() {
        let d = Array2::from_elem((3, 2), Complex64::new(0.5, -1.0));
        let (l, g) = frame_independent(&[&d, &d], &[&d, &d], true).unwrap();
        assert_eq!(l, LOG_EPS.ln());
        assert!(g.iter().all(|a| a.iter().all(|v| v.norm() == 0.0)));
        let t = Array2::from_elem((4, 1), 0.25);
        assert_eq!(frame_accumulated(&t, &t, true).unwrap().0, LOG_EPS.ln());
    }

    #[test]
    fn unit_error_is_near_zero() {
        let d = Array2::from_elem((3, 1), Complex64::new(1.0, 0.0));
        let y = Array2::from_elem((3, 1), Complex64::new(0.0, 1.0) + Complex64::new(1.0, 0.0));
        assert!(frame_independent(&[&d], &[&y], true).unwrap().0.abs() < 1e-8);
        let t = Array2::from_shape_vec((2, 1), vec![1.0, -1.0]).unwrap();
        assert!(frame_accumulated(&t, &Array2::zeros((2, 1)), true).unwrap().0.abs() < 1e-8);
    }

    #[test]
    fn log_is_ln_of_linear() {
        let d = Array2::from_shape_vec((3, 1), vec![0.3, -1.2, 2.0]).unwrap();
        let y = Array2::from_shape_vec((3, 1), vec![0.1, 0.4, -0.7]).unwrap();
        let lin = frame_accumulated(&d, &y, false).unwrap().0;
        let log = frame_accumulated(&d, &y, true).unwrap().0;
        assert_eq!(log, (lin + LOG_EPS).ln());
    }

    #[test]
    fn length_mismatch_is_error() {
        assert!(frame_accumulated(&Array2::zeros((3, 1)), &Array2::zeros((2, 1)), true).is_err());
    }

    #[test]
    fn parses_names() {
        let l: MetaLoss = "frame_independent_linear".parse().unwrap();
        assert_eq!(l, MetaLoss { kind: LossKind::FrameIndependent, log: false });
        assert_eq!("frame_accumulated".parse::<MetaLoss>().unwrap(), MetaLoss::default());
        assert!("frame_magic".parse::<MetaLoss>().is_err());
    }
}
