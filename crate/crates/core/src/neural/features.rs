//! Optimizer input features and their magnitude compression.

use serde::{Deserialize, Serialize};

use super::cmat::CMat;
use crate::error::{shape_err, Result};
use crate::signals::{FrameSignals, TapLayout};

/// Which signals the learned optimizer sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    /// `{∇, u, e, y}`, each tap-aligned.
    #[default]
    Full,
    /// `∇` only.
    GradOnly,
}

impl FeatureSet {
    pub fn width(self, taps: usize) -> usize {
        match self {
            Self::Full => 4 * taps,
            Self::GradOnly => taps,
        }
    }
}

impl std::str::FromStr for FeatureSet {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "grad_only" => Ok(Self::GradOnly),
            other => Err(crate::error::config_err(format!("unknown feature set '{other}'"))),
        }
    }
}

/// Below this magnitude the series form of `ln(1 + r) / r` is used.
const SMALL: f64 = 1e-6;

#[inline]
fn gain(r: f64) -> (f64, f64) {
    // g(r) = ln(1 + r) / r and g'(r)
    if r < SMALL {
        (1.0 - r / 2.0 + r * r / 3.0, -0.5 + 2.0 * r / 3.0)
    } else {
        let g = r.ln_1p() / r;
        (g, (1.0 / (1.0 + r) - g) / r)
    }
}

/// `ln(1 + |z|) e^{j∠z}` element-wise.
pub fn whiten(z: &CMat) -> CMat {
    let mut out = z.clone();
    ndarray::Zip::from(&mut out.re)
        .and(&mut out.im)
        .for_each(|re, im| {
            let g = gain(re.hypot(*im)).0;
            *re *= g;
            *im *= g;
        });
    out
}

/// Cotangent of [`whiten`] at `z` (real-pair convention).
pub fn whiten_backward(z: &CMat, g_out: &CMat) -> CMat {
    let mut out = CMat::zeros(z.rows(), z.cols());
    ndarray::Zip::from(&mut out.re)
        .and(&mut out.im)
        .and(&z.re)
        .and(&z.im)
        .and(&g_out.re)
        .and(&g_out.im)
        .for_each(|or, oi, &zr, &zi, &gr, &gi| {
            let r = zr.hypot(zi);
            let (g, dg) = gain(r);
            // w = g(r) z  ⇒  g_z = g g_w + (g'(r)/r) Re(conj(g_w) z) z
            let coef = if r > 0.0 { dg / r * (gr * zr + gi * zi) } else { 0.0 };
            *or = g * gr + coef * zr;
            *oi = g * gi + coef * zi;
        });
    out
}

/// Stacks the raw (unwhitened) features, `bins × width`. Each tap sees its
/// gradient, its input, and the current error and output of the output it
/// feeds.
pub fn raw_features(sig: &FrameSignals, layout: &TapLayout, set: FeatureSet) -> Result<CMat> {
    let (bins, taps) = sig.grad.dim();
    if taps != layout.taps() || sig.x.dim() != (bins, taps) {
        return Err(shape_err(format!(
            "feature inputs: grad {:?}, x {:?}, layout taps {}",
            sig.grad.dim(),
            sig.x.dim(),
            layout.taps()
        )));
    }
    if sig.d.dim() != (bins, layout.outputs) || sig.y.dim() != (bins, layout.outputs) {
        return Err(shape_err(format!(
            "feature inputs: d {:?}, y {:?}, outputs {}",
            sig.d.dim(),
            sig.y.dim(),
            layout.outputs
        )));
    }
    let mut out = CMat::zeros(bins, set.width(taps));
    for k in 0..bins {
        for p in 0..taps {
            out.set(k, p, sig.grad[[k, p]]);
            if set == FeatureSet::Full {
                let o = layout.tap_output[p];
                out.set(k, taps + p, sig.x[[k, p]]);
                out.set(k, 2 * taps + p, sig.d[[k, o]] - sig.y[[k, o]]);
                out.set(k, 3 * taps + p, sig.y[[k, o]]);
            }
        }
    }
    Ok(out)
}

/// Whitened optimizer input.
pub fn assemble_features(sig: &FrameSignals, layout: &TapLayout, set: FeatureSet) -> Result<CMat> {
    Ok(whiten(&raw_features(sig, layout, set)?))
}

/// Cotangents of the raw features folded back onto the signals that depend
/// on the filter: `grad` (`bins × taps`), `e` and `y` (`bins × outputs`).
/// The input `u` is data, so its cotangent is dropped.
#[derive(Debug, Clone)]
pub struct FeatureGrads {
    pub grad: CMat,
    pub e: CMat,
    pub y: CMat,
}

pub fn raw_features_backward(g_raw: &CMat, layout: &TapLayout, set: FeatureSet) -> FeatureGrads {
    let bins = g_raw.rows();
    let taps = layout.taps();
    let mut fg = FeatureGrads {
        grad: g_raw.cols_slice(0, taps),
        e: CMat::zeros(bins, layout.outputs),
        y: CMat::zeros(bins, layout.outputs),
    };
    if set == FeatureSet::Full {
        for k in 0..bins {
            for p in 0..taps {
                let o = layout.tap_output[p];
                fg.e.re[[k, o]] += g_raw.re[[k, 2 * taps + p]];
                fg.e.im[[k, o]] += g_raw.im[[k, 2 * taps + p]];
                fg.y.re[[k, o]] += g_raw.re[[k, 3 * taps + p]];
                fg.y.im[[k, o]] += g_raw.im[[k, 3 * taps + p]];
            }
        }
    }
    fg
}
