//! Far-field beam patterns of a generalized sidelobe canceller.

use std::f64::consts::PI;
use std::io::Write;

use ndarray::Array2;
use rustfft::num_complex::Complex64;

use crate::error::{shape_err, Result};

pub const SPEED_OF_SOUND: f64 = 343.0;

/// Mic positions along a line, meters.
pub fn linear_array(mics: usize, spacing_m: f64) -> Vec<f64> {
    (0..mics).map(|m| m as f64 * spacing_m).collect()
}

/// Plane-wave response `a_m = e^{-jω x_m sin(φ)/c}`.
pub fn steering(positions: &[f64], freq_hz: f64, angle_rad: f64) -> Vec<Complex64> {
    let w = 2.0 * PI * freq_hz;
    positions
        .iter()
        .map(|x| Complex64::from_polar(1.0, -w * x * angle_rad.sin() / SPEED_OF_SOUND))
        .collect()
}

/// `|(v - Bθ)ᴴ a(φ)|²` in dB over `points` angles uniformly covering
/// [-90°, 90°]. Returns `(angle_deg, gain_db)` rows.
pub fn export_beampattern(
    v: &[Complex64],
    b: &Array2<Complex64>,
    theta: &[Complex64],
    positions: &[f64],
    freq_hz: f64,
    points: usize,
) -> Result<Vec<(f64, f64)>> {
    let m = v.len();
    if b.nrows() != m || b.ncols() != theta.len() || positions.len() != m {
        return Err(shape_err("beamformer parts disagree on the number of mics"));
    }
    let w: Vec<Complex64> = (0..m)
        .map(|i| v[i] - (0..theta.len()).map(|j| b[[i, j]] * theta[j]).sum::<Complex64>())
        .collect();
    let points = points.max(2);
    Ok((0..points)
        .map(|i| {
            let deg = -90.0 + 180.0 * i as f64 / (points - 1) as f64;
            let a = steering(positions, freq_hz, deg.to_radians());
            let g: Complex64 = w.iter().zip(&a).map(|(wi, ai)| wi.conj() * ai).sum();
            (deg, 10.0 * g.norm_sqr().max(1e-20).log10())
        })
        .collect())
}

pub fn write_beampattern_csv<W: Write>(rows: &[(f64, f64)], mut out: W) -> Result<()> {
    writeln!(out, "angle_deg,gain_db")?;
    for (a, g) in rows {
        writeln!(out, "{a},{g}")?;
    }
    Ok(())
}
