//! Per-frequency update rules. Every function maps (inputs, state) to an
//! update and the next state; nothing else is read or written.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Regularizer used in every division.
pub const EPS: f64 = 1e-8;

/// `Δ = -λ ∇`.
pub fn lms_step(grad: &[Complex64], step_size: f64) -> Vec<Complex64> {
    grad.iter().map(|g| -g * step_size).collect()
}

/// Input-power normalized LMS. `power` is the running estimate of `‖u‖²`.
pub fn nlms_step(
    grad: &[Complex64],
    input: &[Complex64],
    step_size: f64,
    forget: f64,
    power: &mut f64,
) -> Vec<Complex64> {
    let energy: f64 = input.iter().map(|u| u.norm_sqr()).sum();
    *power = forget * *power + (1.0 - forget) * energy;
    let scale = step_size / (*power + EPS);
    grad.iter().map(|g| -g * scale).collect()
}

/// RMSProp with a per-element running gradient power.
///
/// The normalizer is `sqrt(ν)`; the printed formula divides by `ν` itself but
/// describes the adaptive rate as `λ / sqrt(ν)`, which is what this computes.
pub fn rmsprop_step(
    grad: &[Complex64],
    step_size: f64,
    forget: f64,
    power: &mut [f64],
) -> Vec<Complex64> {
    grad.iter()
        .zip(power.iter_mut())
        .map(|(g, nu)| {
            *nu = forget * *nu + (1.0 - forget) * g.norm_sqr();
            -g * (step_size / (nu.sqrt() + EPS))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RlsStatus {
    Ok,
    /// The precision matrix went non-finite; it was reset to its initial value.
    Diverged,
}

/// Precision matrix for one RLS problem, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RlsBin {
    pub n: usize,
    pub p: Vec<Complex64>,
    pub delta: f64,
}

impl RlsBin {
    /// `P = δ⁻¹ I`.
    pub fn new(n: usize, delta: f64) -> Self {
        let mut bin = Self {
            n,
            p: vec![Complex64::new(0.0, 0.0); n * n],
            delta,
        };
        bin.reset();
        bin
    }

    pub fn reset(&mut self) {
        let n = self.n;
        self.p.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        for i in 0..n {
            self.p[i * n + i] = Complex64::new(1.0 / self.delta, 0.0);
        }
    }
}

/// One RLS iteration for the model `y = wᴴ x`:
///
/// ```text
/// K = P x / (γ + xᴴ P x)
/// P = (P - K xᴴ P) / γ
/// Δ = K conj(d - y)
/// ```
pub fn rls_step(
    x: &[Complex64],
    d: Complex64,
    y: Complex64,
    forget: f64,
    state: &mut RlsBin,
) -> (Vec<Complex64>, RlsStatus) {
    let n = state.n;
    debug_assert_eq!(x.len(), n);
    let p = &state.p;
    // px = P x
    let px: Vec<Complex64> = (0..n)
        .map(|i| (0..n).map(|j| p[i * n + j] * x[j]).sum())
        .collect();
    // xhp = xᴴ P
    let xhp: Vec<Complex64> = (0..n)
        .map(|j| (0..n).map(|i| x[i].conj() * p[i * n + j]).sum())
        .collect();
    let denom: Complex64 = forget + x.iter().zip(&px).map(|(a, b)| a.conj() * b).sum::<Complex64>();
    if !denom.re.is_finite() || denom.re <= 0.0 {
        state.reset();
        return (vec![Complex64::new(0.0, 0.0); n], RlsStatus::Diverged);
    }
    let gain: Vec<Complex64> = px.iter().map(|v| v / denom).collect();
    let mut next = vec![Complex64::new(0.0, 0.0); n * n];
    for i in 0..n {
        for j in 0..n {
            next[i * n + j] = (p[i * n + j] - gain[i] * xhp[j]) / forget;
        }
    }
    // Keep P exactly Hermitian against round-off drift.
    for i in 0..n {
        next[i * n + i].im = 0.0;
        for j in i + 1..n {
            let avg = (next[i * n + j] + next[j * n + i].conj()) * 0.5;
            next[i * n + j] = avg;
            next[j * n + i] = avg.conj();
        }
    }
    if next.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        state.reset();
        return (vec![Complex64::new(0.0, 0.0); n], RlsStatus::Diverged);
    }
    state.p = next;
    let err = (d - y).conj();
    (gain.iter().map(|k| k * err).collect(), RlsStatus::Ok)
}
