//! One-sided real FFT with the unnormalized-forward / `1/K`-inverse convention,
//! plus the real-linear adjoints of both directions used by reverse-mode
//! differentiation.
//!
//! A length-`K` real frame maps to `K/2 + 1` bins. The inverse discards the
//! imaginary parts of the DC and Nyquist bins, so the adjoints below are the
//! exact transposes of the maps actually computed.

use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

#[derive(Clone)]
pub struct RealFft {
    len: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for RealFft {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RealFft").field("len", &self.len).finish()
    }
}

impl RealFft {
    /// Plans transforms for an even length `len`.
    pub fn new(len: usize) -> Self {
        assert!(len >= 2 && len % 2 == 0, "fft length must be even and >= 2");
        let mut planner = FftPlanner::new();
        Self {
            len,
            fwd: planner.plan_fft_forward(len),
            inv: planner.plan_fft_inverse(len),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of one-sided bins, `K/2 + 1`.
    pub fn bins(&self) -> usize {
        self.len / 2 + 1
    }

    pub fn forward(&self, x: &[f64]) -> Vec<Complex64> {
        debug_assert_eq!(x.len(), self.len);
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fwd.process(&mut buf);
        buf.truncate(self.bins());
        buf
    }

    pub fn inverse(&self, spec: &[Complex64]) -> Vec<f64> {
        debug_assert_eq!(spec.len(), self.bins());
        let k = self.len;
        let mut buf = vec![Complex64::new(0.0, 0.0); k];
        buf[0] = Complex64::new(spec[0].re, 0.0);
        buf[k / 2] = Complex64::new(spec[k / 2].re, 0.0);
        for i in 1..k / 2 {
            buf[i] = spec[i];
            buf[k - i] = spec[i].conj();
        }
        self.inv.process(&mut buf);
        let scale = 1.0 / k as f64;
        buf.iter().map(|c| c.re * scale).collect()
    }

    /// Transpose of [`RealFft::forward`] under the real inner product
    /// `<a, b> = sum Re(conj(a) b)`.
    pub fn forward_adjoint(&self, g: &[Complex64]) -> Vec<f64> {
        debug_assert_eq!(g.len(), self.bins());
        let mut buf = vec![Complex64::new(0.0, 0.0); self.len];
        buf[..g.len()].copy_from_slice(g);
        self.inv.process(&mut buf);
        buf.iter().map(|c| c.re).collect()
    }

    /// Transpose of [`RealFft::inverse`].
    pub fn inverse_adjoint(&self, g: &[f64]) -> Vec<Complex64> {
        debug_assert_eq!(g.len(), self.len);
        let k = self.len;
        let mut spec = self.forward(g);
        let inv_k = 1.0 / k as f64;
        for (i, s) in spec.iter_mut().enumerate() {
            let c = if i == 0 || i == k / 2 { inv_k } else { 2.0 * inv_k };
            *s *= c;
        }
        spec
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_dft(x: &[f64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(t, &v)| {
                        let a = -2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64;
                        Complex64::new(v * a.cos(), v * a.sin())
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn forward_matches_direct_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fast = RealFft::new(16).forward(&x);
        let slow = naive_dft(&x);
        for k in 0..9 {
            assert!((fast[k] - slow[k]).norm() < 1e-12);
        }
    }

    #[test]
    fn inverse_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = RealFft::new(32);
        let back = f.inverse(&f.forward(&x));
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn adjoints_satisfy_inner_product_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = RealFft::new(8);
        let x: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g: Vec<Complex64> = (0..5)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        // <g, F x> == <F* g, x>
        let fx = f.forward(&x);
        let lhs: f64 = g.iter().zip(&fx).map(|(a, b)| (a.conj() * b).re).sum();
        let rhs: f64 = f.forward_adjoint(&g).iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);

        // <h, G s> == <G* h, s> with G the inverse transform
        let h: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let gs = f.inverse(&g);
        let lhs: f64 = h.iter().zip(&gs).map(|(a, b)| a * b).sum();
        let rhs: f64 = f
            .inverse_adjoint(&h)
            .iter()
            .zip(&g)
            .map(|(a, b)| (a.conj() * b).re)
            .sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
