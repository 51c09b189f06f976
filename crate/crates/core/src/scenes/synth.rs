//! Signal generators: decaying random impulse responses, speech-like noise
//! with pauses, mixing at a target ratio, and abrupt path changes.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{config_err, Result};

/// Random FIR: a unit spike at lag 0 followed by Gaussian noise under the
/// envelope `e^{-t/decay}` (decay in samples), normalized to unit energy.
pub fn synth_rir(len: usize, decay: f64, seed: u64) -> Vec<f64> {
    assert!(len >= 1, "impulse response needs at least one tap");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = vec![0.0; len];
    r[0] = 1.0;
    for (t, v) in r.iter_mut().enumerate().skip(1) {
        let env = if decay > 0.0 { (-(t as f64) / decay).exp() } else { 0.0 };
        let n: f64 = StandardNormal.sample(&mut rng);
        *v = n * env;
    }
    normalize_energy(&mut r);
    r
}

pub(crate) fn normalize_energy(r: &mut [f64]) {
    let e = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    if e > 0.0 {
        r.iter_mut().for_each(|v| *v /= e);
    }
}

/// Windowed-sinc fractional delay of `delay` samples, `len` taps.
pub fn fractional_delay(delay: f64, len: usize) -> Vec<f64> {
    let half = 8.0;
    (0..len)
        .map(|t| {
            let x = t as f64 - delay;
            if x.abs() > half {
                return 0.0;
            }
            let sinc = if x.abs() < 1e-12 { 1.0 } else { (PI * x).sin() / (PI * x) };
            // Hann taper over ±half samples
            sinc * 0.5 * (1.0 + (PI * x / half).cos())
        })
        .collect()
}

pub fn white_noise(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Amplitude-modulated, low-pass filtered noise with silent pauses,
/// normalized to peak 0.5. Talk spurts last 0.4–1.2 s and pauses 0.2–0.5 s;
/// at least one pause is always present.
pub fn synth_speechlike(duration_s: f64, sample_rate: u32, seed: u64) -> Vec<f64> {
    let fs = sample_rate as f64;
    let len = (duration_s * fs).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Talk/pause gate with 10 ms ramps.
    let mut gate = vec![0.0; len];
    let mut t = 0usize;
    let mut talking = true;
    let mut pauses = 0;
    while t < len {
        let dur = if talking {
            rng.gen_range(0.4..1.2)
        } else {
            pauses += 1;
            rng.gen_range(0.2..0.5)
        };
        let mut n = (dur * fs) as usize;
        if talking && pauses == 0 && t + n >= len {
            // Leave room for one pause in the middle of short signals.
            n = len / 2 - t.min(len / 2);
        }
        if talking {
            let ramp = ((0.01 * fs) as usize).max(1).min(n / 2 + 1);
            for i in 0..n.min(len - t) {
                let a = (i.min(n - 1 - i) as f64 / ramp as f64).min(1.0);
                gate[t + i] = a;
            }
        }
        t += n.max(1);
        talking = !talking;
    }
    // Two-pole resonance around a random formant plus a slow syllabic envelope.
    let f0 = rng.gen_range(300.0..900.0);
    let rad: f64 = 0.97;
    let (a1, a2) = (2.0 * rad * (2.0 * PI * f0 / fs).cos(), -rad * rad);
    let rate = rng.gen_range(3.0..6.0);
    let phase = rng.gen_range(0.0..2.0 * PI);
    let (mut y1, mut y2, mut lp) = (0.0, 0.0, 0.0);
    let mut out = vec![0.0; len];
    for (i, o) in out.iter_mut().enumerate() {
        let n: f64 = StandardNormal.sample(&mut rng);
        let y = n + a1 * y1 + a2 * y2;
        y2 = y1;
        y1 = y;
        lp = 0.7 * lp + 0.3 * n;
        let syll = 0.6 + 0.4 * (2.0 * PI * rate * i as f64 / fs + phase).sin();
        *o = (0.2 * y + lp) * syll * gate[i];
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= 0.5 / peak);
    }
    out
}

/// Linear convolution truncated to the length of `x`.
pub fn convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for (t, yt) in y.iter_mut().enumerate() {
        let kmax = h.len().min(t + 1);
        let mut acc = 0.0;
        for k in 0..kmax {
            acc += h[k] * x[t - k];
        }
        *yt = acc;
    }
    y
}

/// Mean square over the signal's nonzero samples.
pub fn active_power(x: &[f64]) -> f64 {
    let (sum, n) = x
        .iter()
        .filter(|v| **v != 0.0)
        .fold((0.0, 0usize), |(s, n), v| (s + v * v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Scales `s` so that `active_power(s') / active_power(echo) = 10^(ser/10)`.
pub fn mix_at_ser(echo: &[f64], s: &[f64], ser_db: f64) -> Result<Vec<f64>> {
    let (pe, ps) = (active_power(echo), active_power(s));
    if ps <= 0.0 {
        return Err(config_err("cannot scale a silent signal"));
    }
    if pe <= 0.0 {
        return Err(config_err("reference signal is silent"));
    }
    let g = (pe * 10f64.powf(ser_db / 10.0) / ps).sqrt();
    Ok(s.iter().map(|v| v * g).collect())
}

/// A system that switches from `w_a` to `w_b` at sample `t_star`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathChange {
    pub w_a: Vec<f64>,
    pub w_b: Vec<f64>,
    pub t_star: usize,
}

impl PathChange {
    /// Output of the switching system: `x * w_a` before `t_star`, `x * w_b`
    /// from then on.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let a = convolve(x, &self.w_a);
        let b = convolve(x, &self.w_b);
        a.into_iter()
            .zip(b)
            .enumerate()
            .map(|(t, (va, vb))| if t < self.t_star { va } else { vb })
            .collect()
    }
}

/// Draws the switch time uniformly from `t_range` (samples, inclusive).
pub fn splice_path_change(w_a: Vec<f64>, w_b: Vec<f64>, t_range: (usize, usize), seed: u64) -> PathChange {
    let (lo, hi) = (t_range.0.min(t_range.1), t_range.0.max(t_range.1));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t_star = if lo == hi { lo } else { rng.gen_range(lo..=hi) };
    PathChange { w_a, w_b, t_star }
}

/// Memoryless soft clipper `tanh(αx) / tanh(α)`.
pub fn soft_clip(x: &[f64], alpha: f64) -> Vec<f64> {
    let norm = alpha.tanh();
    x.iter().map(|v| (alpha * v).tanh() / norm).collect()
}
