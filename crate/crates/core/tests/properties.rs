//! Randomized invariants of the transforms, filters, update rules and metrics.

use afkit::classic::{lms_step, nlms_step, rls_step, ClassicConfig, ClassicKind, ClassicOptimizer, RlsBin};
use afkit::dsp::{antialias_project, frame_stream, ols_apply, FilterWeights, FrameSpec, FreqBuffer, RealFft, WindowKind};
use afkit::metrics::{ratio_db, si_sdr, CLAMP_DB};
use afkit::signals::{Convention, FrameSignals, TapLayout};
use afkit::tasks::blocking_matrix;
use afkit::train::{adam_step, clip_gradient, AdamConfig, AdamState};
use afkit::Complex64 as C;
use ndarray::Array2;
use proptest::prelude::*;

fn complex() -> impl Strategy<Value = C> {
    (-1.0f64..1.0, -1.0f64..1.0).prop_map(|(a, b)| C::new(a, b))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fft_round_trip(x in prop::collection::vec(-1.0f64..1.0, 16)) {
        let fft = RealFft::new(16);
        let back = fft.inverse(&fft.forward(&x));
        for (a, b) in x.iter().zip(&back) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn parseval(x in prop::collection::vec(-1.0f64..1.0, 32)) {
        // One-sided spectrum: interior bins count twice.
        let fft = RealFft::new(32);
        let s = fft.forward(&x);
        let e_freq: f64 = s.iter().enumerate().map(|(k, v)| {
            let w = if k == 0 || k == 16 { 1.0 } else { 2.0 };
            w * v.norm_sqr()
        }).sum::<f64>() / 32.0;
        let e_time: f64 = x.iter().map(|v| v * v).sum();
        prop_assert!((e_freq - e_time).abs() <= 1e-10 * e_time.max(1.0));
    }

    #[test]
    fn antialias_projection_is_idempotent(seed_taps in prop::collection::vec(-1.0f64..1.0, 16)) {
        let spec = FrameSpec::new(16, 8, WindowKind::Rectangular, 1).unwrap();
        let fft = RealFft::new(16);
        let mut w = FilterWeights::zeros(9, 1, 1, false);
        for (k, v) in fft.forward(&seed_taps).into_iter().enumerate() {
            w.w[[k, 0, 0]] = v;
        }
        let once = antialias_project(&w, &spec);
        let twice = antialias_project(&once, &spec);
        for (a, b) in once.w.iter().zip(twice.w.iter()) {
            prop_assert!((a - b).norm() <= 1e-12);
        }
        // The projected filter is causal and at most K - R taps long.
        let t = fft.inverse(&once.w.iter().cloned().collect::<Vec<_>>());
        prop_assert!(t[8..].iter().all(|v| v.abs() <= 1e-12));
    }

    #[test]
    fn overlap_save_is_linear_in_the_input(
        a in prop::collection::vec(-1.0f64..1.0, 64),
        b in prop::collection::vec(-1.0f64..1.0, 64),
        taps in prop::collection::vec(-1.0f64..1.0, 4),
        s in -3.0f64..3.0,
    ) {
        let spec = FrameSpec::new(8, 4, WindowKind::Rectangular, 1).unwrap();
        let fft = RealFft::new(8);
        let mut padded = vec![0.0; 8];
        padded[..4].copy_from_slice(&taps);
        let mut w = FilterWeights::zeros(5, 1, 1, true);
        for (k, v) in fft.forward(&padded).into_iter().enumerate() {
            w.w[[k, 0, 0]] = v;
        }
        let run = |x: &[f64]| -> Vec<f64> {
            let x = Array2::from_shape_vec((x.len(), 1), x.to_vec()).unwrap();
            let mut buf = FreqBuffer::new(5, 1, 1);
            let mut out = Vec::new();
            for f in frame_stream(x.view(), &spec).unwrap() {
                buf.push(&f);
                out.extend(ols_apply(&buf, &w, &spec).unwrap().1.column(0).iter().copied());
            }
            out
        };
        let mix: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p + s * q).collect();
        let (ya, yb, ym) = (run(&a), run(&b), run(&mix));
        for i in 0..ym.len() {
            prop_assert!((ym[i] - ya[i] - s * yb[i]).abs() <= 1e-10);
        }
    }

    #[test]
    fn blocking_matrix_is_orthogonal_to_steering(v in prop::collection::vec(complex(), 2..6)) {
        prop_assume!(v[0].norm() > 1e-3);
        let b = blocking_matrix(&v);
        for j in 0..v.len() - 1 {
            let vhb: C = (0..v.len()).map(|i| v[i].conj() * b[[i, j]]).sum();
            prop_assert!(vhb.norm() <= 1e-10);
        }
    }

    #[test]
    fn lms_update_is_linear_in_step(g in prop::collection::vec(complex(), 1..8), l in 0.0f64..2.0) {
        let d = lms_step(&g, l);
        for (gi, di) in g.iter().zip(&d) {
            prop_assert!((di + gi * l).norm() <= 1e-15);
        }
    }

    #[test]
    fn nlms_power_stays_nonnegative(
        u in prop::collection::vec(complex(), 4),
        g in prop::collection::vec(complex(), 4),
        forget in 0.0f64..1.0,
    ) {
        let mut p = 0.0;
        for _ in 0..5 {
            let d = nlms_step(&g, &u, 0.5, forget, &mut p);
            prop_assert!(p >= 0.0);
            prop_assert!(d.iter().all(|v| v.re.is_finite() && v.im.is_finite()));
        }
    }

    #[test]
    fn rls_precision_stays_hermitian(xs in prop::collection::vec(prop::collection::vec(complex(), 3), 1..20)) {
        let mut st = RlsBin::new(3, 0.1);
        for x in &xs {
            rls_step(x, C::new(0.5, 0.0), C::new(0.0, 0.0), 0.99, &mut st);
        }
        for i in 0..3 {
            prop_assert_eq!(st.p[i * 3 + i].im, 0.0);
            for j in 0..3 {
                prop_assert_eq!(st.p[i * 3 + j], st.p[j * 3 + i].conj());
            }
        }
    }

    #[test]
    fn plain_and_hermitian_rls_agree_on_mirrored_data(
        x in prop::collection::vec(complex(), 2),
        d in complex(),
    ) {
        // `d ≈ wᴴx` and `conj(d) ≈ Σ conj(x) w` share their solution `w`.
        let sig = |conv: Convention| {
            let layout = TapLayout::single(2, conv);
            let mut opt = ClassicOptimizer::new(ClassicConfig::new(ClassicKind::Rls), layout, 1).unwrap();
            let x_in: Vec<C> = match conv {
                Convention::Hermitian => x.clone(),
                Convention::Plain => x.iter().map(|v| v.conj()).collect(),
            };
            let d_in = match conv {
                Convention::Hermitian => d,
                Convention::Plain => d.conj(),
            };
            let s = FrameSignals {
                grad: Array2::zeros((1, 2)),
                x: Array2::from_shape_vec((1, 2), x_in).unwrap(),
                d: Array2::from_elem((1, 1), d_in),
                y: Array2::zeros((1, 1)),
                weight: vec![1.0],
            };
            opt.step(&s)
        };
        let h = sig(Convention::Hermitian);
        let p = sig(Convention::Plain);
        for (a, b) in h.iter().zip(p.iter()) {
            prop_assert!((a - b).norm() <= 1e-12);
        }
    }

    #[test]
    fn clipping_bounds_the_global_norm(g in prop::collection::vec(-100.0f64..100.0, 1..40), c in 0.1f64..20.0) {
        let mut v = g.clone();
        let before = clip_gradient(&mut v, c);
        let after = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!(after <= c * (1.0 + 1e-12));
        if before <= c {
            prop_assert_eq!(&v, &g);
        }
    }

    #[test]
    fn adam_steps_are_bounded_by_lr(g in prop::collection::vec(-10.0f64..10.0, 1..20)) {
        // The bias-corrected first step has magnitude at most lr per element.
        let mut phi = vec![0.0; g.len()];
        let mut st = AdamState::new(g.len(), 1e-3);
        adam_step(&mut phi, &g, &mut st, &AdamConfig::default());
        prop_assert!(phi.iter().all(|p| p.abs() <= 1e-3 * (1.0 + 1e-9)));
    }

    #[test]
    fn si_sdr_is_scale_invariant(
        s in prop::collection::vec(-1.0f64..1.0, 64),
        n in prop::collection::vec(-0.1f64..0.1, 64),
        a in prop::sample::select(vec![-1e3, -2.0, -0.01, 0.01, 0.5, 3.0, 1e3]),
    ) {
        prop_assume!(s.iter().map(|v| v * v).sum::<f64>() > 1e-3);
        let est: Vec<f64> = s.iter().zip(&n).map(|(p, q)| p + q).collect();
        let scaled: Vec<f64> = est.iter().map(|v| v * a).collect();
        let base = si_sdr(&s, &est).unwrap();
        prop_assert!((si_sdr(&s, &scaled).unwrap() - base).abs() <= 1e-9);
    }

    #[test]
    fn ratio_db_is_antisymmetric_and_clamped(a in 1e-6f64..1e6, b in 1e-6f64..1e6) {
        prop_assert!((ratio_db(a, b) + ratio_db(b, a)).abs() <= 1e-9);
        prop_assert!(ratio_db(a, b).abs() <= CLAMP_DB);
    }
}
