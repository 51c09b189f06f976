//! Subcommand implementations. Each returns a summary so tests can call them
//! directly instead of parsing files.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use afkit::classic::{ClassicConfig, ClassicOptimizer, Grid, TuneReport};
use afkit::neural::LearnedOptimizer;
use afkit::scenes::{wav_read_at, wav_write, Fold, Manifest, SampleFormat, Scene, SceneRefs};
use afkit::signals::UpdateRule;
use afkit::tasks::{
    blocking_matrix, export_beampattern, gsc_frames, linear_array, run_scene, score_scene,
    tune_classic, write_beampattern_csv, TaskKind, TaskSpec, TaskScore,
};
use afkit::train::{load_checkpoint, save_checkpoint, Checkpoint, EpochRecord, Trainer};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::config::{self, OptimizerChoice, RunConfig};
use crate::error::{CliError, CliResult};
use crate::{CommonArgs, DatagenArgs, EvalArgs, InferArgs, TrainArgs, TuneArgs};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";

fn resolve(common: &CommonArgs) -> CliResult<RunConfig> {
    config::load(common.config.as_deref(), &common.overrides())
}

fn pool(threads: usize) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Loads `manifest.json` from a dataset directory.
pub fn load_manifest(data: &Path) -> CliResult<Manifest> {
    let path = data.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    Ok(Manifest::from_json(&text)?)
}

/// Scenes of one fold. Each is rebuilt from its seed, then any audio stored
/// next to the manifest replaces the rebuilt signals.
pub fn load_scenes(data: &Path, manifest: &Manifest, fold: Fold) -> CliResult<Vec<Scene>> {
    let rate = manifest.config.sample_rate;
    manifest
        .fold(fold)
        .map(|entry| {
            let mut scene = manifest.regenerate(entry)?;
            if let Some(p) = &entry.u_path {
                scene.u = wav_read_at(&data.join(p), rate)?;
            }
            if let Some(p) = &entry.d_path {
                scene.d = wav_read_at(&data.join(p), rate)?;
            }
            if let Some(p) = &entry.clean_path {
                scene.refs.clean = Some(wav_read_at(&data.join(p), rate)?);
            }
            Ok(scene)
        })
        .collect()
}

fn check_manifest(cfg: &RunConfig, spec: &TaskSpec, manifest: &Manifest) -> CliResult<()> {
    if manifest.config.task != spec.kind {
        return Err(CliError::Config(format!(
            "dataset is for {}, run is for {}",
            manifest.config.task, spec.kind
        )));
    }
    if manifest.config.channels != spec.frame.channels {
        return Err(CliError::Config(format!(
            "dataset has {} channels, filter expects {}",
            manifest.config.channels, spec.frame.channels
        )));
    }
    if cfg.task != spec.kind {
        return Err(CliError::Config(format!(
            "checkpoint is for {}, run is for {}",
            spec.kind, cfg.task
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------- datagen

#[derive(Debug, Clone, Serialize)]
pub struct DatagenSummary {
    pub manifest: PathBuf,
    pub scenes: usize,
}

pub fn cmd_datagen(args: &DatagenArgs) -> CliResult<DatagenSummary> {
    let mut cfg = resolve(&args.common)?;
    if let Some(n) = args.count {
        cfg.counts = afkit::scenes::FoldCounts {
            train: n,
            val: n,
            test: n,
        };
    }
    let out = cfg.output_dir.clone();
    if out.exists() {
        if !args.force {
            return Err(CliError::Config(format!(
                "{} already exists; pass --force to overwrite",
                out.display()
            )));
        }
        fs::remove_dir_all(&out).map_err(|e| io_err(&out, e))?;
    }
    fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
    cfg.save_into(&out)?;

    let mut manifest = afkit::scenes::build_dataset(&cfg.scenes, cfg.counts)?;
    if !args.no_wav {
        let wav_dir = out.join("wav");
        fs::create_dir_all(&wav_dir).map_err(|e| io_err(&wav_dir, e))?;
        let rate = manifest.config.sample_rate;
        let pool = pool(cfg.threads)?;
        let written: Vec<CliResult<(Option<String>, Option<String>, Option<String>)>> = pool.install(|| {
            use rayon::prelude::*;
            manifest
                .entries
                .par_iter()
                .map(|entry| {
                    let scene = manifest.regenerate(entry)?;
                    let rel = |tag: &str| format!("wav/{}_{tag}.wav", entry.id);
                    let (u, d) = (rel("u"), rel("d"));
                    wav_write(&out.join(&u), &scene.u, rate, SampleFormat::Float32)?;
                    wav_write(&out.join(&d), &scene.d, rate, SampleFormat::Float32)?;
                    let clean = match (&scene.refs.clean, scene.task) {
                        (Some(c), TaskKind::Gsc) => {
                            let p = rel("clean");
                            wav_write(&out.join(&p), c, rate, SampleFormat::Float32)?;
                            Some(p)
                        }
                        _ => None,
                    };
                    Ok((Some(u), Some(d), clean))
                })
                .collect()
        });
        for (entry, w) in manifest.entries.iter_mut().zip(written) {
            let (u, d, c) = w?;
            entry.u_path = u;
            entry.d_path = d;
            entry.clean_path = c;
        }
    }
    let path = out.join(MANIFEST_FILE);
    fs::write(&path, manifest.to_json()? + "\n").map_err(|e| io_err(&path, e))?;
    println!("{}", path.display());
    Ok(DatagenSummary {
        manifest: path,
        scenes: manifest.entries.len(),
    })
}

// ---------------------------------------------------------------- tune

pub const TUNE_REPORT_FILE: &str = "tune_report.jsonl";
pub const BEST_CONFIG_FILE: &str = "best_config.json";

pub fn cmd_tune(args: &TuneArgs) -> CliResult<TuneReport<ClassicConfig>> {
    let cfg = resolve(&args.common)?;
    let kind = cfg.optimizer.classic().ok_or_else(|| {
        CliError::Config("tune searches classical optimizers; the learned one is trained".into())
    })?;
    let grid = match &cfg.grid {
        Some(g) if g.kind != kind => {
            return Err(CliError::Config(format!("grid is for {}, optimizer is {kind}", g.kind)))
        }
        Some(g) => g.clone(),
        None => Grid::default_for(kind),
    };
    let points = grid.expand();
    for p in &points {
        p.validate()?;
    }
    let manifest = load_manifest(&args.data)?;
    check_manifest(&cfg, &cfg.spec, &manifest)?;
    let out = cfg.output_dir.clone();
    cfg.save_into(&out)?;
    let pool = pool(cfg.threads)?;
    let report = pool.install(|| -> CliResult<_> {
        let scenes = load_scenes(&args.data, &manifest, Fold::Val)?;
        Ok(tune_classic(&cfg.spec, &points, &scenes)?)
    })?;
    let path = out.join(TUNE_REPORT_FILE);
    let file = File::create(&path).map_err(|e| io_err(&path, e))?;
    let mut w = BufWriter::new(file);
    report.write_jsonl(&mut w)?;
    w.flush()?;
    write_json(&out.join(BEST_CONFIG_FILE), report.best_config())?;
    println!("{}", serde_json::to_string(report.best_config())?);
    Ok(report)
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub best_epoch: usize,
    pub best_metric: Option<f64>,
    pub history: Vec<EpochRecord>,
    pub checkpoint: PathBuf,
}

pub fn cmd_train(args: &TrainArgs) -> CliResult<TrainSummary> {
    let cfg = resolve(&args.common)?;
    let out = cfg.output_dir.clone();
    let last = cfg.checkpoint.clone().unwrap_or_else(|| out.join(LAST_CHECKPOINT));
    let best = out.join(BEST_CHECKPOINT);
    let manifest = load_manifest(&args.data)?;
    let resumed = match &args.resume {
        Some(p) => Some(load_checkpoint(p)?),
        None => None,
    };
    let spec = resumed.as_ref().map_or(&cfg.spec, |c| &c.task);
    check_manifest(&cfg, spec, &manifest)?;
    cfg.save_into(&out)?;

    let pool = pool(cfg.threads)?;
    pool.install(|| {
        let train = load_scenes(&args.data, &manifest, Fold::Train)?;
        let val = load_scenes(&args.data, &manifest, Fold::Val)?;
        let mut trainer = match resumed {
            Some(c) => Trainer::resume(c, train, val)?,
            None => Trainer::new(cfg.spec.clone(), cfg.train.clone(), train, val)?,
        };
        if let Some(n) = args.epochs {
            trainer.set_max_epochs(n);
        }
        let log_path = out.join(TRAIN_LOG_FILE);
        let mut log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| io_err(&log_path, e))?;
        let result = trainer.run(|rec, ckpt| {
            writeln!(log, "{}", serde_json::to_string(rec)?)?;
            save_checkpoint(&last, ckpt)?;
            if rec.improved {
                save_checkpoint(&best, ckpt)?;
            }
            eprintln!(
                "epoch {:>3}  train {:>10}  val loss {:>10}  val score {:>8}  lr {:.3e}{}",
                rec.epoch,
                fmt_opt(rec.train_loss),
                fmt_opt(rec.val_loss),
                fmt_opt(rec.val_metric),
                rec.lr,
                if rec.improved { "  *" } else { "" }
            );
            Ok(())
        });
        match result {
            Ok(o) => {
                println!("{}", last.display());
                Ok(TrainSummary {
                    best_epoch: o.best_epoch,
                    best_metric: o.best_metric,
                    history: o.history,
                    checkpoint: last.clone(),
                })
            }
            Err(e @ (afkit::Error::Divergence(_) | afkit::Error::NonFinite(_))) => {
                save_checkpoint(&last, trainer.checkpoint())?;
                Err(CliError::Divergence(format!(
                    "{e}; last good state (epoch {}) saved to {}",
                    trainer.checkpoint().epoch,
                    last.display()
                )))
            }
            Err(e) => Err(e.into()),
        }
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

// ---------------------------------------------------------------- eval / infer

/// The optimizer an eval or infer run applies, with the task it was built
/// for.
#[derive(Debug, Clone)]
pub enum Method {
    Classic(ClassicConfig),
    Meta(Arc<Checkpoint>),
}

impl Method {
    pub fn spec<'a>(&'a self, cfg: &'a RunConfig) -> &'a TaskSpec {
        match self {
            Self::Classic(_) => &cfg.spec,
            Self::Meta(c) => &c.task,
        }
    }

    pub fn name(&self) -> String {
        match self {
            Self::Classic(c) => c.kind.to_string(),
            Self::Meta(_) => "meta".into(),
        }
    }

    pub fn rule(&self, spec: &TaskSpec) -> CliResult<Box<dyn UpdateRule>> {
        let layout = spec.layout();
        let bins = spec.frame.bins();
        Ok(match self {
            Self::Classic(c) => Box::new(ClassicOptimizer::new(*c, layout, bins)?),
            Self::Meta(ck) => Box::new(LearnedOptimizer::new(
                Arc::new(ck.best_params.clone()),
                ck.features(),
                layout,
                bins,
            )?),
        })
    }
}

/// Picks the optimizer: a checkpoint for `meta`, otherwise `--params` (which
/// fixes the kind) or the configured classical settings.
pub fn resolve_method(cfg: &mut RunConfig, params: Option<&Path>) -> CliResult<Method> {
    if let Some(p) = params {
        let c: ClassicConfig = read_json(p)?;
        c.validate()?;
        cfg.optimizer = match c.kind {
            afkit::classic::ClassicKind::Lms => OptimizerChoice::Lms,
            afkit::classic::ClassicKind::Nlms => OptimizerChoice::Nlms,
            afkit::classic::ClassicKind::Rmsprop => OptimizerChoice::Rmsprop,
            afkit::classic::ClassicKind::Rls => OptimizerChoice::Rls,
        };
        cfg.classic = Some(c);
        return Ok(Method::Classic(c));
    }
    match cfg.optimizer {
        OptimizerChoice::Meta => {
            let path = cfg
                .checkpoint
                .clone()
                .ok_or_else(|| CliError::Config("the learned optimizer needs --checkpoint".into()))?;
            let ck = load_checkpoint(&path)?;
            if ck.task.kind != cfg.task {
                return Err(CliError::Config(format!(
                    "checkpoint was trained for {}, run is for {}",
                    ck.task.kind, cfg.task
                )));
            }
            Ok(Method::Meta(Arc::new(ck)))
        }
        _ => {
            let c = cfg.classic_config()?;
            c.validate()?;
            Ok(Method::Classic(c))
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneResult {
    pub id: String,
    #[serde(flatten)]
    pub score: TaskScore,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSummary {
    pub task: TaskKind,
    pub optimizer: String,
    pub fold: Fold,
    pub metric: String,
    pub count: usize,
    /// Mean over scenes; `None` when the fold is empty.
    pub mean: Option<f64>,
}

pub const SCORES_FILE: &str = "scores.json";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const SUMMARY_JSON: &str = "summary.json";

/// Per-scene series and scores without the per-frame values, for the JSON
/// report.
fn strip_series(s: &TaskScore) -> TaskScore {
    TaskScore {
        series: None,
        ..s.clone()
    }
}

pub fn cmd_eval(args: &EvalArgs) -> CliResult<EvalSummary> {
    let mut cfg = resolve(&args.common)?;
    let method = resolve_method(&mut cfg, args.params.as_deref())?;
    let spec = method.spec(&cfg).clone();
    let manifest = load_manifest(&args.data)?;
    check_manifest(&cfg, &spec, &manifest)?;
    if args.beampattern.is_some() && spec.kind != TaskKind::Gsc {
        return Err(CliError::Config("beam patterns exist only for beamforming".into()));
    }
    let out = cfg.output_dir.clone();
    cfg.save_into(&out)?;
    for (flag, dir) in [
        (args.emit_wav, "wav"),
        (args.series, "series"),
        (args.beampattern.is_some(), "beampattern"),
    ] {
        if flag {
            fs::create_dir_all(out.join(dir)).map_err(|e| io_err(&out.join(dir), e))?;
        }
    }

    let pool = pool(cfg.threads)?;
    let results: Vec<SceneResult> = pool.install(|| -> CliResult<_> {
        use rayon::prelude::*;
        let scenes = load_scenes(&args.data, &manifest, args.fold)?;
        scenes
            .par_iter()
            .map(|scene| {
                let mut rule = method.rule(&spec)?;
                let run = run_scene(&spec, scene, rule.as_mut())?;
                let score = score_scene(&spec, scene, &run)?;
                if args.emit_wav {
                    let p = out.join("wav").join(format!("{}.wav", scene.id));
                    wav_write(&p, run.listen(spec.kind), scene.sample_rate, SampleFormat::Float32)?;
                }
                if args.series {
                    if let Some(series) = &score.series {
                        let p = out.join("series").join(format!("{}.csv", scene.id));
                        let mut w = BufWriter::new(File::create(&p).map_err(|e| io_err(&p, e))?);
                        writeln!(w, "frame,{},active", score.metric)?;
                        for (i, (v, a)) in series.values.iter().zip(&series.active).enumerate() {
                            writeln!(w, "{i},{v},{}", u8::from(*a))?;
                        }
                        w.flush()?;
                    }
                }
                if let Some(hz) = args.beampattern {
                    let p = out.join("beampattern").join(format!("{}.csv", scene.id));
                    write_scene_beampattern(&p, &spec, &cfg, scene, &run.theta, hz)?;
                }
                Ok(SceneResult {
                    id: scene.id.clone(),
                    score,
                })
            })
            .collect()
    })?;

    let report: Vec<SceneResult> = results
        .iter()
        .map(|r| SceneResult {
            id: r.id.clone(),
            score: strip_series(&r.score),
        })
        .collect();
    write_json(&out.join(SCORES_FILE), &report)?;
    let csv = out.join(SUMMARY_CSV);
    let mut w = BufWriter::new(File::create(&csv).map_err(|e| io_err(&csv, e))?);
    writeln!(w, "id,metric,score")?;
    for r in &results {
        writeln!(w, "{},{},{}", r.id, r.score.metric, r.score.score)?;
    }
    w.flush()?;
    let metric = results
        .first()
        .map_or_else(|| default_metric(spec.kind).to_string(), |r| r.score.metric.clone());
    let summary = EvalSummary {
        task: spec.kind,
        optimizer: method.name(),
        fold: args.fold,
        metric,
        count: results.len(),
        mean: if results.is_empty() {
            None
        } else {
            Some(results.iter().map(|r| r.score.score).sum::<f64>() / results.len() as f64)
        },
    };
    write_json(&out.join(SUMMARY_JSON), &summary)?;
    println!("{}", serde_json::to_string(&summary)?);
    Ok(summary)
}

fn default_metric(kind: TaskKind) -> &'static str {
    match kind {
        TaskKind::SystemId | TaskKind::Eq => "snr_d",
        TaskKind::Aec => "erle",
        TaskKind::Wpe => "srr",
        TaskKind::Gsc => "si_sdr",
    }
}

fn write_scene_beampattern(
    path: &Path,
    spec: &TaskSpec,
    cfg: &RunConfig,
    scene: &Scene,
    theta: &Array2<afkit::Complex64>,
    hz: f64,
) -> CliResult<()> {
    let clean = scene
        .refs
        .clean
        .as_ref()
        .ok_or_else(|| CliError::Config("beam pattern needs the clean image".into()))?;
    let (_, v) = gsc_frames(spec, scene.u.view(), clean.view())?;
    let fs = spec.frame;
    let k = ((hz * fs.fft_len() as f64 / scene.sample_rate as f64).round() as usize).min(fs.bins() - 1);
    let b = blocking_matrix(&v[k]);
    let th: Vec<afkit::Complex64> = theta.row(k).to_vec();
    let positions = linear_array(fs.channels, cfg.scenes.mic_spacing_m);
    let bin_hz = k as f64 * scene.sample_rate as f64 / fs.fft_len() as f64;
    let rows = export_beampattern(&v[k], &b, &th, &positions, bin_hz, 181)?;
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    write_beampattern_csv(&rows, BufWriter::new(file))?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferReport {
    pub task: TaskKind,
    pub optimizer: String,
    pub sample_rate: u32,
    pub samples: usize,
    pub audio_seconds: f64,
    pub compute_seconds: f64,
    /// compute time / audio time
    pub rtf: f64,
    pub latency_samples: usize,
    pub latency_ms: f64,
}

pub const INFER_REPORT_FILE: &str = "infer_report.json";

pub fn cmd_infer(args: &InferArgs) -> CliResult<InferReport> {
    let mut cfg = resolve(&args.common)?;
    let method = resolve_method(&mut cfg, args.params.as_deref())?;
    let spec = method.spec(&cfg).clone();
    let rate = cfg.scenes.sample_rate;
    let u = wav_read_at(&args.input, rate)?;
    let d = match &args.desired {
        Some(p) => wav_read_at(p, rate)?,
        None => match spec.kind {
            TaskKind::Wpe | TaskKind::Gsc => u.clone(),
            _ => return Err(CliError::Config(format!("{} needs --desired", spec.kind))),
        },
    };
    let clean = match &args.reference {
        Some(p) => Some(wav_read_at(p, rate)?),
        None if spec.kind == TaskKind::Gsc => {
            return Err(CliError::Config("beamforming needs --reference with the clean target image".into()))
        }
        None => None,
    };
    let expect = spec.frame.channels;
    let input_channels = if spec.kind == TaskKind::Wpe { d.ncols() } else { u.ncols() };
    if input_channels != expect {
        return Err(CliError::Config(format!("input has {input_channels} channels, filter expects {expect}")));
    }
    if u.nrows() != d.nrows() {
        return Err(CliError::Config("input and desired signals differ in length".into()));
    }
    let scene = Scene {
        id: args
            .input
            .file_stem()
            .map_or_else(|| "input".into(), |s| s.to_string_lossy().into_owned()),
        task: spec.kind,
        sample_rate: rate,
        u,
        d,
        refs: SceneRefs {
            clean,
            ..Default::default()
        },
    };
    let out_dir = cfg.output_dir.clone();
    cfg.save_into(&out_dir)?;

    // One stream, one thread: the RTF is single-core compute time.
    let single = pool(1)?;
    let (run, compute) = single.install(|| -> CliResult<_> {
        let mut rule = method.rule(&spec)?;
        let t0 = Instant::now();
        let run = run_scene(&spec, &scene, rule.as_mut())?;
        Ok((run, t0.elapsed().as_secs_f64()))
    })?;
    if let Some(dir) = args.output.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    wav_write(&args.output, run.listen(spec.kind), rate, SampleFormat::Float32)?;
    let samples = scene.len();
    let audio_seconds = samples as f64 / rate as f64;
    let latency = spec.latency();
    let report = InferReport {
        task: spec.kind,
        optimizer: method.name(),
        sample_rate: rate,
        samples,
        audio_seconds,
        compute_seconds: compute,
        rtf: if audio_seconds > 0.0 { compute / audio_seconds } else { 0.0 },
        latency_samples: latency,
        latency_ms: 1000.0 * latency as f64 / rate as f64,
    };
    write_json(&out_dir.join(INFER_REPORT_FILE), &report)?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(report)
}
