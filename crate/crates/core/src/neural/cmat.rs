//! Planar complex matrices (separate real and imaginary planes) so batched
//! complex products run on real gemm kernels.

use ndarray::{s, Array2, Axis};
use rustfft::num_complex::Complex64;

/// Row-major contents of a plane. Every plane this module builds is in
/// standard layout; anything else is copied.
fn plane(a: &Array2<f64>) -> std::borrow::Cow<'_, [f64]> {
    match a.as_slice() {
        Some(s) => std::borrow::Cow::Borrowed(s),
        None => std::borrow::Cow::Owned(a.iter().copied().collect()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CMat {
    pub re: Array2<f64>,
    pub im: Array2<f64>,
}

impl CMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            re: Array2::zeros((rows, cols)),
            im: Array2::zeros((rows, cols)),
        }
    }

    pub fn from_complex(a: &Array2<Complex64>) -> Self {
        Self {
            re: a.mapv(|v| v.re),
            im: a.mapv(|v| v.im),
        }
    }

    pub fn to_complex(&self) -> Array2<Complex64> {
        let mut out = Array2::zeros(self.re.dim());
        ndarray::Zip::from(&mut out)
            .and(&self.re)
            .and(&self.im)
            .for_each(|o, &r, &i| *o = Complex64::new(r, i));
        out
    }

    pub fn rows(&self) -> usize {
        self.re.nrows()
    }

    pub fn cols(&self) -> usize {
        self.re.ncols()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.re.dim()
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        Complex64::new(self.re[[i, j]], self.im[[i, j]])
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        self.re[[i, j]] = v.re;
        self.im[[i, j]] = v.im;
    }

    /// Column block `[from, to)`.
    pub fn cols_slice(&self, from: usize, to: usize) -> CMat {
        CMat {
            re: self.re.slice(s![.., from..to]).to_owned(),
            im: self.im.slice(s![.., from..to]).to_owned(),
        }
    }

    /// Rows selected by index, in order.
    pub fn select_rows(&self, idx: &[usize]) -> CMat {
        CMat {
            re: self.re.select(Axis(0), idx),
            im: self.im.select(Axis(0), idx),
        }
    }

    /// Column-wise concatenation, in standard layout.
    pub fn hcat(parts: &[&CMat]) -> CMat {
        let rows = parts.first().map_or(0, |p| p.rows());
        let cols: usize = parts.iter().map(|p| p.cols()).sum();
        let mut out = CMat::zeros(rows, cols);
        let mut at = 0;
        for p in parts {
            assert_eq!(p.rows(), rows, "row counts differ");
            let c = p.cols();
            out.re.slice_mut(s![.., at..at + c]).assign(&p.re);
            out.im.slice_mut(s![.., at..at + c]).assign(&p.im);
            at += c;
        }
        out
    }

    /// `self · wᵀ` for `self: n × in`, `w: out × in`.
    pub fn mul_t(&self, w: &CMat) -> CMat {
        let (n, inp) = self.dim();
        let out = w.rows();
        assert_eq!(w.cols(), inp, "inner dimensions differ");
        let (xr, xi) = (plane(&self.re), plane(&self.im));
        // Wᵀ rows are contiguous, so the inner loop is a complex axpy.
        let wr = w.re.t().as_standard_layout().into_owned();
        let wi = w.im.t().as_standard_layout().into_owned();
        let (wr, wi) = (plane(&wr), plane(&wi));
        let mut re = vec![0.0; n * out];
        let mut im = vec![0.0; n * out];
        for r in 0..n {
            let cr = &mut re[r * out..(r + 1) * out];
            let ci = &mut im[r * out..(r + 1) * out];
            for k in 0..inp {
                let (a, b) = (xr[r * inp + k], xi[r * inp + k]);
                let br = &wr[k * out..(k + 1) * out];
                let bi = &wi[k * out..(k + 1) * out];
                for (((cr, ci), br), bi) in cr.iter_mut().zip(ci.iter_mut()).zip(br).zip(bi) {
                    *cr += a * br - b * bi;
                    *ci += a * bi + b * br;
                }
            }
        }
        CMat::from_planes(n, out, re, im)
    }

    /// `self · conj(w)` for `self: n × out`, `w: out × in`; the input
    /// cotangent of [`CMat::mul_t`].
    pub fn mul_conj(&self, w: &CMat) -> CMat {
        let (n, out) = self.dim();
        let inp = w.cols();
        assert_eq!(w.rows(), out, "inner dimensions differ");
        let (gr, gi) = (plane(&self.re), plane(&self.im));
        let (wr, wi) = (plane(&w.re), plane(&w.im));
        let mut re = vec![0.0; n * inp];
        let mut im = vec![0.0; n * inp];
        for r in 0..n {
            let (cr, ci) = (&mut re[r * inp..(r + 1) * inp], &mut im[r * inp..(r + 1) * inp]);
            for o in 0..out {
                let (a, b) = (gr[r * out + o], gi[r * out + o]);
                let (br, bi) = (&wr[o * inp..(o + 1) * inp], &wi[o * inp..(o + 1) * inp]);
                // (a + jb)(br - j bi)
                for (((cr, ci), br), bi) in cr.iter_mut().zip(ci.iter_mut()).zip(br).zip(bi) {
                    *cr += a * br + b * bi;
                    *ci += b * br - a * bi;
                }
            }
        }
        CMat::from_planes(n, inp, re, im)
    }

    /// `selfᵀ · conj(x)` for `self: n × out`, `x: n × in`; the weight
    /// cotangent of [`CMat::mul_t`].
    pub fn t_mul_conj(&self, x: &CMat) -> CMat {
        let (n, out) = self.dim();
        let inp = x.cols();
        assert_eq!(x.rows(), n, "row counts differ");
        let (gr, gi) = (plane(&self.re), plane(&self.im));
        let (xr, xi) = (plane(&x.re), plane(&x.im));
        let mut re = vec![0.0; out * inp];
        let mut im = vec![0.0; out * inp];
        for r in 0..n {
            let (ar, ai) = (&xr[r * inp..(r + 1) * inp], &xi[r * inp..(r + 1) * inp]);
            for o in 0..out {
                let (a, b) = (gr[r * out + o], gi[r * out + o]);
                let (cr, ci) = (&mut re[o * inp..(o + 1) * inp], &mut im[o * inp..(o + 1) * inp]);
                for (((cr, ci), xr), xi) in cr.iter_mut().zip(ci.iter_mut()).zip(ar).zip(ai) {
                    *cr += a * xr + b * xi;
                    *ci += b * xr - a * xi;
                }
            }
        }
        CMat::from_planes(out, inp, re, im)
    }

    fn from_planes(rows: usize, cols: usize, re: Vec<f64>, im: Vec<f64>) -> CMat {
        CMat {
            re: Array2::from_shape_vec((rows, cols), re).expect("plane length"),
            im: Array2::from_shape_vec((rows, cols), im).expect("plane length"),
        }
    }

    /// Adds a `1 × cols` row to every row.
    pub fn add_row(&mut self, b: &CMat) {
        self.re += &b.re;
        self.im += &b.im;
    }

    /// Column sums as a `1 × cols` row.
    pub fn col_sum(&self) -> CMat {
        CMat {
            re: self.re.sum_axis(Axis(0)).insert_axis(Axis(0)),
            im: self.im.sum_axis(Axis(0)).insert_axis(Axis(0)),
        }
    }

    pub fn add_assign(&mut self, o: &CMat) {
        self.re += &o.re;
        self.im += &o.im;
    }

    pub fn scale(&mut self, a: f64) {
        self.re *= a;
        self.im *= a;
    }

    /// Element-wise complex product.
    pub fn hadamard(&self, o: &CMat) -> CMat {
        CMat {
            re: &self.re * &o.re - &self.im * &o.im,
            im: &self.re * &o.im + &self.im * &o.re,
        }
    }

    /// Element-wise `conj(self) · o`.
    pub fn conj_hadamard(&self, o: &CMat) -> CMat {
        CMat {
            re: &self.re * &o.re + &self.im * &o.im,
            im: &self.re * &o.im - &self.im * &o.re,
        }
    }

    pub fn sub(&self, o: &CMat) -> CMat {
        CMat {
            re: &self.re - &o.re,
            im: &self.im - &o.im,
        }
    }

    pub fn add(&self, o: &CMat) -> CMat {
        CMat {
            re: &self.re + &o.re,
            im: &self.im + &o.im,
        }
    }

    pub fn map_parts(&self, f: impl Fn(f64) -> f64) -> CMat {
        CMat {
            re: self.re.mapv(&f),
            im: self.im.mapv(&f),
        }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.re.iter().chain(self.im.iter()).map(|v| v * v).sum()
    }

    /// Row index of the first non-finite entry.
    pub fn first_non_finite_row(&self) -> Option<usize> {
        (0..self.rows()).find(|&i| {
            self.re.row(i).iter().chain(self.im.row(i).iter()).any(|v| !v.is_finite())
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> CMat {
        let mut m = CMat::zeros(rows, cols);
        m.re.mapv_inplace(|_| rng.gen_range(-1.0..1.0));
        m.im.mapv_inplace(|_| rng.gen_range(-1.0..1.0));
        m
    }

    #[test]
    fn mul_t_matches_complex_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(3, 4, &mut rng);
        let w = random(5, 4, &mut rng);
        let y = x.mul_t(&w);
        for i in 0..3 {
            for o in 0..5 {
                let v: Complex64 = (0..4).map(|j| x.get(i, j) * w.get(o, j)).sum();
                assert!((y.get(i, o) - v).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn cotangents_match_inner_product_identity() {
        // L = Re <g, X Wᵀ>: directional derivatives along dX, dW must equal
        // Re <g_X, dX> and Re <g_W, dW>.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(3, 4, &mut rng);
        let w = random(2, 4, &mut rng);
        let g = random(3, 2, &mut rng);
        let dx = random(3, 4, &mut rng);
        let dw = random(2, 4, &mut rng);
        let re_inner = |a: &CMat, b: &CMat| -> f64 {
            (&a.re * &b.re).sum() + (&a.im * &b.im).sum()
        };
        let gx = g.mul_conj(&w);
        let gw = g.t_mul_conj(&x);
        assert!((re_inner(&g, &dx.mul_t(&w)) - re_inner(&gx, &dx)).abs() < 1e-12);
        assert!((re_inner(&g, &x.mul_t(&dw)) - re_inner(&gw, &dw)).abs() < 1e-12);
    }
}
