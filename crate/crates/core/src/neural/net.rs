//! The recurrent update network, shared across frequency bins.
//!
//! Layer stack per bin: linear → split-ReLU → GRU → GRU → linear →
//! split-ReLU → linear. The last layer has no activation so updates can take
//! any complex value. Every bin is a row of the batch; rows never interact.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::cmat::CMat;
use crate::error::{shape_err, Error, Result};

/// Layer sizes. `features` is the input width, `taps` the output width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub features: usize,
    pub taps: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    /// `3H × in`, gate blocks ordered (reset, update, candidate).
    pub w_i: CMat,
    /// `3H × H`
    pub w_h: CMat,
    pub b_i: CMat,
    pub b_h: CMat,
}

impl GruParams {
    fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_i: CMat::zeros(3 * hidden, input),
            w_h: CMat::zeros(3 * hidden, hidden),
            b_i: CMat::zeros(1, 3 * hidden),
            b_h: CMat::zeros(1, 3 * hidden),
        }
    }
}

/// All network weights. Also used as the container for their gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub shape: NetShape,
    pub w_in: CMat,
    pub b_in: CMat,
    pub gru: [GruParams; 2],
    pub w_mid: CMat,
    pub b_mid: CMat,
    pub w_out: CMat,
    pub b_out: CMat,
}

/// Tensor names in serialization order.
pub const TENSOR_NAMES: [&str; 14] = [
    "w_in", "b_in", "gru0.w_i", "gru0.w_h", "gru0.b_i", "gru0.b_h", "gru1.w_i", "gru1.w_h",
    "gru1.b_i", "gru1.b_h", "w_mid", "b_mid", "w_out", "b_out",
];

impl Params {
    pub fn zeros(shape: NetShape) -> Self {
        let NetShape { features, taps, hidden } = shape;
        Self {
            shape,
            w_in: CMat::zeros(hidden, features),
            b_in: CMat::zeros(1, hidden),
            gru: [GruParams::zeros(hidden, hidden), GruParams::zeros(hidden, hidden)],
            w_mid: CMat::zeros(hidden, hidden),
            b_mid: CMat::zeros(1, hidden),
            w_out: CMat::zeros(taps, hidden),
            b_out: CMat::zeros(1, taps),
        }
    }

    pub fn tensors(&self) -> [&CMat; 14] {
        let [g0, g1] = &self.gru;
        [
            &self.w_in, &self.b_in, &g0.w_i, &g0.w_h, &g0.b_i, &g0.b_h, &g1.w_i, &g1.w_h, &g1.b_i,
            &g1.b_h, &self.w_mid, &self.b_mid, &self.w_out, &self.b_out,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut CMat; 14] {
        let [g0, g1] = &mut self.gru;
        [
            &mut self.w_in,
            &mut self.b_in,
            &mut g0.w_i,
            &mut g0.w_h,
            &mut g0.b_i,
            &mut g0.b_h,
            &mut g1.w_i,
            &mut g1.w_h,
            &mut g1.b_i,
            &mut g1.b_h,
            &mut self.w_mid,
            &mut self.b_mid,
            &mut self.w_out,
            &mut self.b_out,
        ]
    }

    /// Number of real scalars (two per complex weight).
    pub fn num_real(&self) -> usize {
        self.tensors().iter().map(|t| 2 * t.len()).sum()
    }

    /// Tensors in order; each contributes its real plane then its imaginary
    /// plane, row-major.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_real());
        for t in self.tensors() {
            out.extend(t.re.iter());
            out.extend(t.im.iter());
        }
        out
    }

    pub fn from_flat(shape: NetShape, flat: &[f64]) -> Result<Self> {
        let mut p = Self::zeros(shape);
        if flat.len() != p.num_real() {
            return Err(shape_err(format!(
                "expected {} parameters, got {}",
                p.num_real(),
                flat.len()
            )));
        }
        let mut it = flat.iter();
        for t in p.tensors_mut() {
            for v in t.re.iter_mut().chain(t.im.iter_mut()) {
                *v = *it.next().expect("length checked");
            }
        }
        Ok(p)
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: f64, other: &Params) {
        for (t, o) in self.tensors_mut().into_iter().zip(other.tensors()) {
            t.re.scaled_add(a, &o.re);
            t.im.scaled_add(a, &o.im);
        }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.tensors().iter().map(|t| t.norm_sqr()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.re.iter().chain(t.im.iter()).all(|v| v.is_finite()))
    }

    /// Zeroes the final layer so every update is exactly zero.
    pub fn zero_output_layer(&mut self) {
        self.w_out = CMat::zeros(self.shape.taps, self.shape.hidden);
        self.b_out = CMat::zeros(1, self.shape.taps);
    }
}

/// Deterministic initialization: complex weights with magnitude
/// `U(0, 1) √3 / √fan_in` and uniform phase, so `E|w|² = 1 / fan_in`.
/// Biases start at zero.
pub fn init_params(seed: u64, shape: NetShape) -> Params {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Params::zeros(shape);
    for (name, t) in TENSOR_NAMES.iter().zip(p.tensors_mut()) {
        if name.starts_with("b_") || name.contains(".b_") {
            continue;
        }
        let scale = 3f64.sqrt() / (t.cols() as f64).sqrt();
        ndarray::Zip::from(&mut t.re).and(&mut t.im).for_each(|re, im| {
            let mag = rng.gen::<f64>() * scale;
            let phase = rng.gen::<f64>() * 2.0 * PI;
            *re = mag * phase.cos();
            *im = mag * phase.sin();
        });
    }
    p
}

/// Per-bin recurrent state: one `bins × H` matrix per GRU layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NetState {
    pub h: [CMat; 2],
}

impl NetState {
    pub fn zeros(bins: usize, hidden: usize) -> Self {
        Self {
            h: [CMat::zeros(bins, hidden), CMat::zeros(bins, hidden)],
        }
    }

    pub fn bins(&self) -> usize {
        self.h[0].rows()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        Self {
            h: [self.h[0].select_rows(idx), self.h[1].select_rows(idx)],
        }
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// `ReLU(Re z) + j ReLU(Im z)`
pub fn split_relu(z: &CMat) -> CMat {
    z.map_parts(|v| v.max(0.0))
}

fn split_relu_backward(pre: &CMat, g: &CMat) -> CMat {
    CMat {
        re: ndarray::Zip::from(&pre.re).and(&g.re).map_collect(|&a, &g| if a > 0.0 { g } else { 0.0 }),
        im: ndarray::Zip::from(&pre.im).and(&g.im).map_collect(|&a, &g| if a > 0.0 { g } else { 0.0 }),
    }
}

/// Intermediate values of one GRU cell kept for the reverse pass.
#[derive(Debug, Clone)]
pub struct GruCache {
    x: CMat,
    h: CMat,
    r: CMat,
    z: CMat,
    n: CMat,
    gh_n: CMat,
}

/// Complex GRU cell with split activations:
///
/// ```text
/// r  = σ(gi_r + gh_r)          σ applied to real and imaginary parts
/// z  = σ(gi_z + gh_z)
/// n  = tanh(gi_n + r ⊙ gh_n)   tanh applied to real and imaginary parts
/// h' = (1 - z) ⊙ n + z ⊙ h     complex products
/// ```
///
/// with `gi = x W_iᵀ + b_i` and `gh = h W_hᵀ + b_h`.
pub fn gru_cell(x: &CMat, h: &CMat, p: &GruParams) -> (CMat, GruCache) {
    let hid = h.cols();
    let mut gi = x.mul_t(&p.w_i);
    gi.add_row(&p.b_i);
    let mut gh = h.mul_t(&p.w_h);
    gh.add_row(&p.b_h);
    let r = gi.cols_slice(0, hid).add(&gh.cols_slice(0, hid)).map_parts(sigmoid);
    let z = gi
        .cols_slice(hid, 2 * hid)
        .add(&gh.cols_slice(hid, 2 * hid))
        .map_parts(sigmoid);
    let gh_n = gh.cols_slice(2 * hid, 3 * hid);
    let n = gi.cols_slice(2 * hid, 3 * hid).add(&r.hadamard(&gh_n)).map_parts(f64::tanh);
    // h' = n + z ⊙ (h - n)
    let h_new = n.add(&z.hadamard(&h.sub(&n)));
    let cache = GruCache {
        x: x.clone(),
        h: h.clone(),
        r,
        z,
        n,
        gh_n,
    };
    (h_new, cache)
}

/// Reverse pass of [`gru_cell`]. Accumulates weight cotangents into `grads`
/// and returns the cotangents of `x` and `h`.
fn gru_backward(c: &GruCache, p: &GruParams, g: &CMat, grads: &mut GruParams) -> (CMat, CMat) {
    let mut one_minus_z = c.z.map_parts(|v| -v);
    one_minus_z.re += 1.0;
    let g_n = one_minus_z.conj_hadamard(g);
    let g_z = c.h.sub(&c.n).conj_hadamard(g);
    let mut g_h = c.z.conj_hadamard(g);

    let g_an = CMat {
        re: ndarray::Zip::from(&g_n.re).and(&c.n.re).map_collect(|&g, &n| g * (1.0 - n * n)),
        im: ndarray::Zip::from(&g_n.im).and(&c.n.im).map_collect(|&g, &n| g * (1.0 - n * n)),
    };
    let g_r = c.gh_n.conj_hadamard(&g_an);
    let g_ghn = c.r.conj_hadamard(&g_an);
    let dsig = |gate: &CMat, g: &CMat| CMat {
        re: ndarray::Zip::from(&g.re).and(&gate.re).map_collect(|&g, &s| g * s * (1.0 - s)),
        im: ndarray::Zip::from(&g.im).and(&gate.im).map_collect(|&g, &s| g * s * (1.0 - s)),
    };
    let g_ar = dsig(&c.r, &g_r);
    let g_az = dsig(&c.z, &g_z);
    let g_gi = CMat::hcat(&[&g_ar, &g_az, &g_an]);
    let g_gh = CMat::hcat(&[&g_ar, &g_az, &g_ghn]);

    grads.w_i.add_assign(&g_gi.t_mul_conj(&c.x));
    grads.b_i.add_assign(&g_gi.col_sum());
    grads.w_h.add_assign(&g_gh.t_mul_conj(&c.h));
    grads.b_h.add_assign(&g_gh.col_sum());
    let g_x = g_gi.mul_conj(&p.w_i);
    g_h.add_assign(&g_gh.mul_conj(&p.w_h));
    (g_x, g_h)
}

/// Everything the reverse pass needs from one forward call.
#[derive(Debug, Clone)]
pub struct NetCache {
    xi: CMat,
    a0: CMat,
    gru: [GruCache; 2],
    h2: CMat,
    a2: CMat,
    h3: CMat,
}

/// One network step for all bins: `(update, next state, cache)`.
pub fn net_forward(p: &Params, xi: &CMat, state: &NetState) -> Result<(CMat, NetState, NetCache)> {
    let s = p.shape;
    if xi.cols() != s.features || state.bins() != xi.rows() || state.h[0].cols() != s.hidden {
        return Err(shape_err(format!(
            "network input {:?} / state {:?} do not fit shape {:?}",
            xi.dim(),
            state.h[0].dim(),
            s
        )));
    }
    let mut a0 = xi.mul_t(&p.w_in);
    a0.add_row(&p.b_in);
    let h0 = split_relu(&a0);
    let (h1, c1) = gru_cell(&h0, &state.h[0], &p.gru[0]);
    let (h2, c2) = gru_cell(&h1, &state.h[1], &p.gru[1]);
    let mut a2 = h2.mul_t(&p.w_mid);
    a2.add_row(&p.b_mid);
    let h3 = split_relu(&a2);
    let mut delta = h3.mul_t(&p.w_out);
    delta.add_row(&p.b_out);
    let next = NetState { h: [h1, h2.clone()] };
    let cache = NetCache {
        xi: xi.clone(),
        a0,
        gru: [c1, c2],
        h2,
        a2,
        h3,
    };
    Ok((delta, next, cache))
}

/// Reverse pass of [`net_forward`]. `g_state` holds the cotangents of the
/// returned state. Returns the cotangents of `xi` and of the incoming state.
pub fn net_backward(
    p: &Params,
    c: &NetCache,
    g_delta: &CMat,
    g_state: &NetState,
    grads: &mut Params,
) -> (CMat, NetState) {
    grads.w_out.add_assign(&g_delta.t_mul_conj(&c.h3));
    grads.b_out.add_assign(&g_delta.col_sum());
    let g_h3 = g_delta.mul_conj(&p.w_out);
    let g_a2 = split_relu_backward(&c.a2, &g_h3);
    grads.w_mid.add_assign(&g_a2.t_mul_conj(&c.h2));
    grads.b_mid.add_assign(&g_a2.col_sum());
    let mut g_h2 = g_a2.mul_conj(&p.w_mid);
    g_h2.add_assign(&g_state.h[1]);

    let [gg0, gg1] = &mut grads.gru;
    let (mut g_h1, g_h2_prev) = gru_backward(&c.gru[1], &p.gru[1], &g_h2, gg1);
    g_h1.add_assign(&g_state.h[0]);
    let (g_h0, g_h1_prev) = gru_backward(&c.gru[0], &p.gru[0], &g_h1, gg0);

    let g_a0 = split_relu_backward(&c.a0, &g_h0);
    grads.w_in.add_assign(&g_a0.t_mul_conj(&c.xi));
    grads.b_in.add_assign(&g_a0.col_sum());
    let g_xi = g_a0.mul_conj(&p.w_in);
    (g_xi, NetState { h: [g_h1_prev, g_h2_prev] })
}

/// Inference-only forward returning complex updates; fails on the first
/// bin whose update is not finite.
pub fn optimizer_forward(p: &Params, xi: &CMat, state: &NetState) -> Result<(Array2<Complex64>, NetState)> {
    let (delta, next, _) = net_forward(p, xi, state)?;
    if let Some(k) = delta.first_non_finite_row() {
        return Err(Error::NonFinite(format!("optimizer update at frequency bin {k}")));
    }
    Ok((delta.to_complex(), next))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape() -> NetShape {
        NetShape {
            features: 4,
            taps: 1,
            hidden: 3,
        }
    }

    #[test]
    fn zero_gru_scales_state() {
        let p = GruParams::zeros(2, 2);
        let mut h = CMat::zeros(1, 2);
        h.set(0, 0, Complex64::new(1.0, 2.0));
        h.set(0, 1, Complex64::new(-0.5, 0.0));
        let (h1, _) = gru_cell(&CMat::zeros(1, 2), &h, &p);
        let zg = Complex64::new(0.5, 0.5);
        for j in 0..2 {
            assert!((h1.get(0, j) - zg * h.get(0, j)).norm() < 1e-15);
        }
        let (h0, _) = gru_cell(&CMat::zeros(1, 2), &CMat::zeros(1, 2), &p);
        assert_eq!(h0.norm_sqr(), 0.0);
    }

    #[test]
    fn split_relu_examples() {
        let mut z = CMat::zeros(1, 3);
        z.set(0, 0, Complex64::new(1.0, -2.0));
        z.set(0, 1, Complex64::new(-1.0, -1.0));
        z.set(0, 2, Complex64::new(3.0, 4.0));
        let r = split_relu(&z);
        assert_eq!(r.get(0, 0), Complex64::new(1.0, 0.0));
        assert_eq!(r.get(0, 1), Complex64::new(0.0, 0.0));
        assert_eq!(r.get(0, 2), Complex64::new(3.0, 4.0));
    }

    #[test]
    fn flat_round_trip() {
        let p = init_params(9, shape());
        let q = Params::from_flat(shape(), &p.to_flat()).unwrap();
        assert_eq!(p, q);
        assert!(Params::from_flat(shape(), &[0.0]).is_err());
    }

    #[test]
    fn zero_output_layer_gives_zero_update() {
        let mut p = init_params(1, shape());
        p.zero_output_layer();
        let mut xi = CMat::zeros(2, 4);
        xi.re.fill(0.7);
        let (d, next) = optimizer_forward(&p, &xi, &NetState::zeros(2, 3)).unwrap();
        assert!(d.iter().all(|v| v.norm() == 0.0));
        assert!(next.h[0].norm_sqr() > 0.0);
    }
}
