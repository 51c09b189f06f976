//! Reverse-mode meta-gradients against central finite differences, plus the
//! segment-boundary contracts of the unrolled forward pass.

use afkit::dsp::{FrameSpec, WindowKind};
use afkit::neural::{init_params, FeatureSet, NetShape, Params};
use afkit::tasks::{ols_frames, wpe_frames, FrameData, Optimizee, TaskKind, TaskSpec};
use afkit::train::{meta_gradient, segment_value, unroll_forward, CarryState, LossKind, MetaLoss};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sysid_spec() -> TaskSpec {
    let mut s = TaskSpec::default_for(TaskKind::SystemId);
    s.frame = FrameSpec::new(4, 2, WindowKind::Rectangular, 1).unwrap();
    s
}

fn wpe_spec() -> TaskSpec {
    let mut s = TaskSpec::default_for(TaskKind::Wpe);
    s.frame = FrameSpec::new(4, 2, WindowKind::Hann, 1).unwrap();
    s.depth = 2;
    s.delay = 1;
    s
}

fn noise(rng: &mut ChaCha8Rng, n: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, 1), |_| rng.gen_range(-1.0..1.0))
}

fn frames_for(spec: &TaskSpec, seed: u64, count: usize) -> Vec<FrameData> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = count * spec.frame.hop;
    match spec.kind {
        TaskKind::Wpe => {
            // Reverberant-ish: white noise plus a decaying echo.
            let x = noise(&mut rng, n);
            let mut d = x.clone();
            for t in 3..n {
                d[[t, 0]] += 0.6 * x[[t - 3, 0]];
            }
            wpe_frames(spec, d.view()).unwrap()
        }
        _ => {
            let u = noise(&mut rng, n);
            let mut d = Array2::zeros((n, 1));
            for t in 0..n {
                d[[t, 0]] = 0.8 * u[[t, 0]] - if t > 0 { 0.3 * u[[t - 1, 0]] } else { 0.0 } + 0.01 * rng.gen_range(-1.0..1.0);
            }
            ols_frames(spec, u.view(), d.view()).unwrap()
        }
    }
}

/// Random weights including biases, small enough that no gate saturates.
fn random_params(shape: NetShape, seed: u64) -> Params {
    let mut p = init_params(seed, shape);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let mut flat = p.to_flat();
    for v in flat.iter_mut() {
        *v = *v * 0.7 + rng.gen_range(-0.2..0.2);
    }
    p = Params::from_flat(shape, &flat).unwrap();
    p
}

struct Case {
    spec: TaskSpec,
    loss: MetaLoss,
    unroll: usize,
    features: FeatureSet,
}

fn check(case: &Case, seed: u64) -> f64 {
    let spec = &case.spec;
    let opt = Optimizee::new(spec).unwrap();
    let taps = spec.layout().taps();
    let shape = NetShape {
        features: case.features.width(taps),
        taps,
        hidden: 3,
    };
    let params = random_params(shape, seed);
    let frames = frames_for(spec, seed + 7, 4 + case.unroll);
    // Warm up so the segment starts from nonzero weights, state and tail.
    let (_, start) = segment_value(&opt, &params, case.features, case.loss, &CarryState::initial(&opt, 3), &frames[..4]).unwrap();
    let seg = &frames[4..4 + case.unroll];
    let (_, grad, _) = meta_gradient(&opt, &params, case.features, case.loss, &start, seg).unwrap();
    let g = grad.to_flat();
    let base = params.to_flat();
    let h = 1e-6;
    let f = |phi: &[f64]| {
        let p = Params::from_flat(shape, phi).unwrap();
        segment_value(&opt, &p, case.features, case.loss, &start, seg).unwrap().0
    };
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..base.len() {
        let mut a = base.clone();
        a[i] += h;
        let mut b = base.clone();
        b[i] -= h;
        let fd = (f(&a) - f(&b)) / (2.0 * h);
        num += (g[i] - fd).powi(2);
        den += fd.powi(2);
    }
    assert!(den > 0.0, "finite-difference gradient vanished");
    (num / den).sqrt()
}

fn all_cases() -> Vec<(String, Case)> {
    let mut out = Vec::new();
    for (tname, spec) in [("ols_sysid", sysid_spec()), ("ola_wpe", wpe_spec())] {
        for kind in [LossKind::FrameIndependent, LossKind::FrameAccumulated] {
            for log in [true, false] {
                for unroll in [2, 3] {
                    out.push((
                        format!("{tname} {kind:?} log={log} L={unroll}"),
                        Case {
                            spec: spec.clone(),
                            loss: MetaLoss { kind, log },
                            unroll,
                            features: FeatureSet::Full,
                        },
                    ));
                }
            }
        }
    }
    out
}

#[test]
fn meta_gradient_matches_finite_differences() {
    for (i, (name, case)) in all_cases().into_iter().enumerate() {
        let rel = check(&case, 100 + i as u64);
        assert!(rel <= 1e-4, "{name}: relative error {rel:e}");
    }
}

#[test]
fn gradient_only_features_match_finite_differences() {
    let case = Case {
        spec: sysid_spec(),
        loss: MetaLoss::default(),
        unroll: 3,
        features: FeatureSet::GradOnly,
    };
    assert!(check(&case, 5) <= 1e-4);
}

#[test]
fn unconstrained_overlap_save_matches_finite_differences() {
    let mut spec = sysid_spec();
    spec.constrained = false;
    let case = Case {
        spec,
        loss: MetaLoss { kind: LossKind::FrameIndependent, log: true },
        unroll: 3,
        features: FeatureSet::Full,
    };
    assert!(check(&case, 6) <= 1e-4);
}

#[test]
fn zero_output_layer_leaves_filter_static() {
    let spec = sysid_spec();
    let opt = Optimizee::new(&spec).unwrap();
    let shape = NetShape { features: 4, taps: 1, hidden: 3 };
    let mut p = random_params(shape, 1);
    p.zero_output_layer();
    let frames = frames_for(&spec, 2, 6);
    let mut start = CarryState::initial(&opt, 3);
    start.filter.theta[[1, 0]] = afkit::Complex64::new(0.4, -0.1);
    opt.project(&mut start.filter.theta);
    let out = unroll_forward(&opt, &p, FeatureSet::Full, &start, &frames, false).unwrap();
    // Re-projecting an already projected filter only adds round-off.
    let drift = (&out.next.filter.theta - &start.filter.theta).iter().map(|v| v.norm()).fold(0.0, f64::max);
    assert!(drift < 1e-15);
    // Static filtering frame by frame gives the same output.
    let mut st = start.filter.clone();
    for (i, fd) in frames.iter().enumerate() {
        let o = opt.forward(&st, fd).unwrap();
        st.tail = o.tail;
        for j in 0..2 {
            assert!((o.y_time[[j, 0]] - out.y_time[[i * 2 + j, 0]]).abs() < 1e-14);
        }
    }
}

#[test]
fn silent_scene_has_zero_gradient() {
    let spec = sysid_spec();
    let opt = Optimizee::new(&spec).unwrap();
    let shape = NetShape { features: 4, taps: 1, hidden: 3 };
    let p = init_params(3, shape);
    let z = Array2::zeros((16, 1));
    let frames = ols_frames(&spec, z.view(), z.view()).unwrap();
    let (_, g, _) = meta_gradient(&opt, &p, FeatureSet::Full, MetaLoss::default(), &CarryState::initial(&opt, 3), &frames[..4]).unwrap();
    assert!(g.to_flat().iter().all(|v| *v == 0.0));
}

#[test]
fn shorter_than_two_frames_is_error() {
    let spec = sysid_spec();
    let opt = Optimizee::new(&spec).unwrap();
    let p = init_params(3, NetShape { features: 4, taps: 1, hidden: 3 });
    let frames = frames_for(&spec, 1, 4);
    assert!(unroll_forward(&opt, &p, FeatureSet::Full, &CarryState::initial(&opt, 3), &frames[..1], false).is_err());
}

#[test]
fn spliced_segments_equal_one_long_unroll() {
    for spec in [sysid_spec(), wpe_spec()] {
        let opt = Optimizee::new(&spec).unwrap();
        let taps = spec.layout().taps();
        let p = random_params(NetShape { features: 4 * taps, taps, hidden: 3 }, 9);
        let frames = frames_for(&spec, 4, 8);
        let s0 = CarryState::initial(&opt, 3);
        let long = unroll_forward(&opt, &p, FeatureSet::Full, &s0, &frames, false).unwrap();
        let a = unroll_forward(&opt, &p, FeatureSet::Full, &s0, &frames[..4], false).unwrap();
        let b = unroll_forward(&opt, &p, FeatureSet::Full, &a.next, &frames[4..], false).unwrap();
        let joined = ndarray::concatenate(ndarray::Axis(0), &[a.y_time.view(), b.y_time.view()]).unwrap();
        assert_eq!(joined, long.y_time);
        assert_eq!(b.next, long.next);
    }
}

#[test]
fn gradients_stop_at_segment_boundary() {
    // The second segment's truncated gradient treats the carried state as a
    // constant, so it differs from the full-BPTT gradient of the same loss
    // through both segments and equals the gradient from the frozen state.
    let spec = sysid_spec();
    let opt = Optimizee::new(&spec).unwrap();
    let shape = NetShape { features: 4, taps: 1, hidden: 3 };
    let p = random_params(shape, 11);
    let loss = MetaLoss::default();
    let frames = frames_for(&spec, 12, 6);
    let s0 = CarryState::initial(&opt, 3);
    let (_, _, mid) = meta_gradient(&opt, &p, FeatureSet::Full, loss, &s0, &frames[..3]).unwrap();
    let (_, g_trunc, _) = meta_gradient(&opt, &p, FeatureSet::Full, loss, &mid, &frames[3..]).unwrap();
    let g_trunc = g_trunc.to_flat();

    // Full BPTT of the second-segment loss by finite differences through the
    // first segment too.
    let base = p.to_flat();
    let h = 1e-6;
    let second = |phi: &[f64]| {
        let q = Params::from_flat(shape, phi).unwrap();
        let (_, m) = segment_value(&opt, &q, FeatureSet::Full, loss, &s0, &frames[..3]).unwrap();
        segment_value(&opt, &q, FeatureSet::Full, loss, &m, &frames[3..]).unwrap().0
    };
    let frozen = |phi: &[f64]| {
        let q = Params::from_flat(shape, phi).unwrap();
        segment_value(&opt, &q, FeatureSet::Full, loss, &mid, &frames[3..]).unwrap().0
    };
    let (mut full_gap, mut trunc_err, mut norm) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..base.len() {
        let mut a = base.clone();
        a[i] += h;
        let mut b = base.clone();
        b[i] -= h;
        let full = (second(&a) - second(&b)) / (2.0 * h);
        let fz = (frozen(&a) - frozen(&b)) / (2.0 * h);
        full_gap += (full - g_trunc[i]).powi(2);
        trunc_err += (fz - g_trunc[i]).powi(2);
        norm += fz.powi(2);
    }
    assert!((trunc_err / norm).sqrt() <= 1e-4);
    assert!((full_gap / norm).sqrt() > 1e-3, "full and truncated gradients should differ");
}
