//! Unrolled filtering with the learned optimizer in the loop, and the exact
//! reverse pass over one truncated segment.
//!
//! Per frame: filter with `θ`, compute the filter-loss gradient, build
//! features, run the network, `θ ← Z(θ + Δ)`. The reverse pass goes back
//! through all of it, including the dependence of the gradient feature on
//! `θ`. The incoming `θ` and network state are constants: gradients stop at
//! the segment boundary.

use ndarray::Array2;
use rustfft::num_complex::Complex64;

use super::loss::{frame_accumulated, frame_independent, LossKind, MetaLoss};
use crate::error::{shape_err, Error, Result};
use crate::neural::{
    net_backward, net_forward, raw_features, raw_features_backward, whiten, whiten_backward, CMat,
    FeatureSet, NetCache, NetState, Params,
};
use crate::tasks::{stack_time, FilterState, FrameCotangents, FrameData, Optimizee};

/// Filter weights and network state carried from one segment to the next.
#[derive(Debug, Clone, PartialEq)]
pub struct CarryState {
    pub filter: FilterState,
    pub net: NetState,
}

impl CarryState {
    pub fn initial(opt: &Optimizee, hidden: usize) -> Self {
        Self {
            filter: opt.initial_state(),
            net: NetState::zeros(opt.bins, hidden),
        }
    }
}

#[derive(Debug, Clone)]
struct Tape {
    raw: CMat,
    cache: NetCache,
}

#[derive(Debug, Clone)]
pub struct UnrollOutput {
    /// Concatenated time output, `L·R × outputs`.
    pub y_time: Array2<f64>,
    /// Per-frame output spectra for the frame-independent loss.
    pub y_loss: Vec<Array2<Complex64>>,
    /// State after the last frame.
    pub next: CarryState,
    tape: Vec<Tape>,
}

/// Runs `frames` from `state`. With `record` unset no reverse-pass data is
/// kept.
pub fn unroll_forward(
    opt: &Optimizee,
    params: &Params,
    features: FeatureSet,
    state: &CarryState,
    frames: &[FrameData],
    record: bool,
) -> Result<UnrollOutput> {
    if frames.len() < 2 {
        return Err(shape_err(format!("unroll needs at least 2 frames, got {}", frames.len())));
    }
    run_unrolled(opt, params, features, state, frames, record)
}

/// [`unroll_forward`] without the segment-length check, for tails of scenes.
pub(crate) fn run_unrolled(
    opt: &Optimizee,
    params: &Params,
    features: FeatureSet,
    state: &CarryState,
    frames: &[FrameData],
    record: bool,
) -> Result<UnrollOutput> {
    let mut st = state.clone();
    let mut ys = Vec::with_capacity(frames.len());
    let mut y_loss = Vec::with_capacity(frames.len());
    let mut tape = Vec::new();
    for fd in frames {
        let out = opt.forward(&st.filter, fd)?;
        let raw = raw_features(&out.signals, &opt.layout, features)?;
        let (delta, net, cache) = net_forward(params, &whiten(&raw), &st.net)?;
        if let Some(k) = delta.first_non_finite_row() {
            return Err(Error::NonFinite(format!("optimizer update at frequency bin {k}")));
        }
        opt.apply_update(&mut st.filter.theta, &delta.to_complex());
        st.filter.tail = out.tail;
        st.net = net;
        ys.push(out.y_time);
        y_loss.push(out.y_loss);
        if record {
            tape.push(Tape { raw, cache });
        }
    }
    Ok(UnrollOutput {
        y_time: stack_time(&ys),
        y_loss,
        next: st,
        tape,
    })
}

/// Loss of an unrolled segment plus cotangents of the per-frame time output
/// (`R × outputs` each) and output spectra.
pub(crate) fn segment_loss(
    loss: MetaLoss,
    frames: &[FrameData],
    out: &UnrollOutput,
) -> Result<(f64, Vec<Array2<f64>>, Vec<Array2<Complex64>>)> {
    let r = frames[0].d_time.nrows();
    let outs = frames[0].d_time.ncols();
    let bins = frames[0].d_loss.nrows();
    match loss.kind {
        LossKind::FrameIndependent => {
            let d: Vec<_> = frames.iter().map(|f| &f.d_loss).collect();
            let y: Vec<_> = out.y_loss.iter().collect();
            let (l, g) = frame_independent(&d, &y, loss.log)?;
            Ok((l, vec![Array2::zeros((r, outs)); frames.len()], g))
        }
        LossKind::FrameAccumulated => {
            let d = stack_time(&frames.iter().map(|f| f.d_time.clone()).collect::<Vec<_>>());
            let (l, g) = frame_accumulated(&d, &out.y_time, loss.log)?;
            let per = (0..frames.len())
                .map(|i| g.slice(ndarray::s![i * r..(i + 1) * r, ..]).to_owned())
                .collect();
            Ok((l, per, vec![Array2::zeros((bins, outs)); frames.len()]))
        }
    }
}

/// Meta loss of one segment without gradients.
pub fn segment_value(
    opt: &Optimizee,
    params: &Params,
    features: FeatureSet,
    loss: MetaLoss,
    state: &CarryState,
    frames: &[FrameData],
) -> Result<(f64, CarryState)> {
    let out = unroll_forward(opt, params, features, state, frames, false)?;
    let (l, _, _) = segment_loss(loss, frames, &out)?;
    Ok((l, out.next))
}

/// Loss, its gradient with respect to the network weights, and the state to
/// carry into the next segment.
pub fn meta_gradient(
    opt: &Optimizee,
    params: &Params,
    features: FeatureSet,
    loss: MetaLoss,
    state: &CarryState,
    frames: &[FrameData],
) -> Result<(f64, Params, CarryState)> {
    let out = unroll_forward(opt, params, features, state, frames, true)?;
    let (value, g_time, g_spec) = segment_loss(loss, frames, &out)?;
    let mut grads = Params::zeros(params.shape);
    let (bins, taps) = state.filter.theta.dim();
    let mut g_theta: Array2<Complex64> = Array2::zeros((bins, taps));
    let mut g_tail = Array2::zeros(state.filter.tail.dim());
    let mut g_net = NetState::zeros(bins, params.shape.hidden);
    for t in (0..frames.len()).rev() {
        let tape = &out.tape[t];
        // θ' = Z(θ + Δ)
        let mut g_pre = g_theta;
        if let crate::tasks::Filtering::Ols { constrained: true } = opt.filtering {
            opt.project_adjoint(&mut g_pre);
        }
        let (g_xi, g_net_in) = net_backward(params, &tape.cache, &CMat::from_complex(&g_pre), &g_net, &mut grads);
        let g_raw = whiten_backward(&tape.raw, &g_xi);
        let fg = raw_features_backward(&g_raw, &opt.layout, features);
        let cot = FrameCotangents {
            grad: fg.grad.to_complex(),
            e: fg.e.to_complex(),
            y: fg.y.to_complex(),
            y_loss: g_spec[t].clone(),
            y_time: g_time[t].clone(),
            tail: g_tail,
        };
        let (g_theta_f, g_tail_in) = opt.backward(&frames[t], &cot);
        g_theta = g_pre + g_theta_f;
        g_tail = g_tail_in;
        g_net = g_net_in;
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("meta gradient".into()));
    }
    Ok((value, grads, out.next))
}
