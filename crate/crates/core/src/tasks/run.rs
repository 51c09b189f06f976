//! Running an update rule over whole scenes and scoring the result.

use std::collections::BTreeMap;

use ndarray::{s, Array2};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::optimizee::{stack_time, FrameData, Optimizee};
use super::prepare::prepare_frames;
use super::spec::{TaskKind, TaskSpec};
use crate::classic::{grid_search, ClassicConfig, ClassicOptimizer, TuneReport};
use crate::dsp::RealFft;
use crate::error::{Error, Result};
use crate::metrics::{erle, segmental_snr, si_sdr, snr_w, srr, MetricSeries};
use crate::scenes::Scene;
use crate::signals::UpdateRule;

/// Time-aligned signals produced by one pass over a scene.
#[derive(Debug, Clone)]
pub struct RunOutput {
    /// Filter output, `frames·R × outputs`.
    pub y: Array2<f64>,
    /// Desired signal on the same grid.
    pub d: Array2<f64>,
    /// Residual `d - y`.
    pub e: Array2<f64>,
    /// Final filter weights.
    pub theta: Array2<Complex64>,
}

impl RunOutput {
    /// The signal a listener would get: the residual for cancellation,
    /// dereverberation and beamforming, the filter output otherwise.
    pub fn listen(&self, kind: TaskKind) -> &Array2<f64> {
        match kind {
            TaskKind::SystemId | TaskKind::Eq => &self.y,
            TaskKind::Aec | TaskKind::Wpe | TaskKind::Gsc => &self.e,
        }
    }
}

pub fn run_frames(opt: &Optimizee, frames: &[FrameData], rule: &mut dyn UpdateRule) -> Result<RunOutput> {
    let mut st = opt.initial_state();
    let mut ys = Vec::with_capacity(frames.len());
    let mut ds = Vec::with_capacity(frames.len());
    for fd in frames {
        let out = opt.step(&mut st, fd, rule)?;
        ys.push(out.y_time);
        ds.push(fd.d_time.clone());
    }
    let y = stack_time(&ys);
    let d = stack_time(&ds);
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::Divergence(format!("filter output went non-finite at sample {i}")));
    }
    let e = &d - &y;
    Ok(RunOutput {
        y,
        d,
        e,
        theta: st.theta,
    })
}

pub fn run_scene(spec: &TaskSpec, scene: &Scene, rule: &mut dyn UpdateRule) -> Result<RunOutput> {
    let opt = Optimizee::new(spec)?;
    let frames = prepare_frames(spec, scene)?;
    run_frames(&opt, &frames, rule)
}

/// Primary metric of a scene. `score` is oriented so that higher is better.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskScore {
    pub metric: String,
    pub score: f64,
    pub series: Option<MetricSeries>,
    pub extra: BTreeMap<String, f64>,
}

fn column(a: &Array2<f64>, m: usize, len: usize) -> Array2<f64> {
    a.slice(s![..len, m..m + 1]).to_owned()
}

/// `x` delayed by `lag` samples, first `len` samples, single column.
fn delayed(x: &Array2<f64>, col: usize, lag: usize, len: usize) -> Vec<f64> {
    (0..len)
        .map(|t| if t >= lag && t - lag < x.nrows() { x[[t - lag, col]] } else { 0.0 })
        .collect()
}

/// Inverse-system magnitude of an FIR per one-sided bin.
pub fn inverse_magnitude(h: &[f64], fft_len: usize) -> Vec<f64> {
    let fft = RealFft::new(fft_len);
    let mut buf = vec![0.0; fft_len];
    for (b, v) in buf.iter_mut().zip(h) {
        *b = *v;
    }
    fft.forward(&buf).iter().map(|v| 1.0 / v.norm().max(1e-12)).collect()
}

pub fn score_scene(spec: &TaskSpec, scene: &Scene, run: &RunOutput) -> Result<TaskScore> {
    let n = run.y.nrows();
    let fs = &spec.frame;
    let mut extra = BTreeMap::new();
    let ts = match spec.kind {
        TaskKind::SystemId => {
            let series = segmental_snr(scene.d.slice(s![..n, ..]), run.y.view(), fs, None)?;
            TaskScore {
                metric: "snr_d".into(),
                score: series.mean,
                series: Some(series),
                extra,
            }
        }
        TaskKind::Aec => {
            let echo = scene
                .refs
                .echo
                .as_ref()
                .ok_or_else(|| Error::Config("echo cancellation scoring needs the noiseless echo".into()))?;
            let series = erle(column(echo, 0, n).view(), run.y.view(), fs, None)?;
            let snr = segmental_snr(column(&scene.d, 0, n).view(), run.y.view(), fs, None)?;
            extra.insert("snr_d".into(), snr.mean);
            TaskScore {
                metric: "erle".into(),
                score: series.mean,
                series: Some(series),
                extra,
            }
        }
        TaskKind::Eq => {
            let series = segmental_snr(column(&scene.d, 0, n).view(), run.y.view(), fs, None)?;
            if spec.depth == 1 && fs.channels == 1 {
                if let Some(h) = scene.refs.w_true.first() {
                    let target = inverse_magnitude(h, fs.fft_len());
                    let est: Vec<f64> = run.theta.column(0).iter().map(|v| v.norm()).collect();
                    extra.insert("snr_w".into(), snr_w(&est, &target)?);
                }
            }
            TaskScore {
                metric: "snr_d".into(),
                score: series.mean,
                series: Some(series),
                extra,
            }
        }
        TaskKind::Wpe => {
            let series = srr(run.d.view(), run.e.view(), fs, None)?;
            TaskScore {
                metric: "srr".into(),
                score: -series.mean,
                series: Some(series),
                extra,
            }
        }
        TaskKind::Gsc => {
            let clean = scene
                .refs
                .clean
                .as_ref()
                .ok_or_else(|| Error::Config("beamforming scoring needs the clean image".into()))?;
            let reference = delayed(clean, 0, spec.latency(), n);
            let est: Vec<f64> = run.e.column(0).to_vec();
            let sdr = si_sdr(&reference, &est)?;
            let unprocessed = delayed(&scene.u, 0, spec.latency(), n);
            extra.insert("si_sdr_input".into(), si_sdr(&reference, &unprocessed)?);
            TaskScore {
                metric: "si_sdr".into(),
                score: sdr,
                series: None,
                extra,
            }
        }
    };
    Ok(ts)
}

/// Grid-searches a classical optimizer on `scenes` by mean score. Divergent
/// runs score `NaN`, which the search treats as worst.
pub fn tune_classic(spec: &TaskSpec, grid: &[ClassicConfig], scenes: &[Scene]) -> Result<TuneReport<ClassicConfig>> {
    let opt = Optimizee::new(spec)?;
    let prepared: Vec<Vec<FrameData>> = scenes
        .par_iter()
        .map(|sc| prepare_frames(spec, sc))
        .collect::<Result<_>>()?;
    grid_search(grid, |cfg| {
        scenes
            .par_iter()
            .zip(prepared.par_iter())
            .map(|(sc, frames)| {
                let run = ClassicOptimizer::new(*cfg, opt.layout.clone(), opt.bins)
                    .and_then(|mut rule| run_frames(&opt, frames, &mut rule))
                    .and_then(|r| score_scene(spec, sc, &r));
                run.map(|s| s.score).unwrap_or(f64::NAN)
            })
            .collect()
    })
}
