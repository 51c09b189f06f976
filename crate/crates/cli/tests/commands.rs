//! End-to-end checks of the subcommands on tiny system-identification
//! datasets.

use std::fs;
use std::path::{Path, PathBuf};

use afkit::classic::{ClassicConfig, ClassicKind, Grid};
use afkit::scenes::{wav_read, Fold, Manifest};
use afkit::tasks::{tune_classic, TaskSpec};
use afkit::train::checkpoint::to_bytes;
use afkit::train::load_checkpoint;
use afkit_cli::commands::{self, EvalSummary, SceneResult};
use afkit_cli::{run_args, CliError};

const TINY: &str = r#"
task = "system_id"
seed = 7
threads = 2

[spec.frame]
window_len = 64
hop = 32
window = "rectangular"
channels = 1

[scenes]
duration_s = 0.5
rir_len = 16
source = "white"

[counts]
train = 4
val = 2
test = 3

[train]
unroll = 4
batch = 2
hidden = 4
lr = 1e-3
passes_per_epoch = 1
max_epochs = 2
patience = 4
"#;

struct Fixture {
    _tmp: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

impl Fixture {
    fn new(text: &str) -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().to_path_buf();
        let config = root.join("run.toml");
        fs::write(&config, text).unwrap();
        Self {
            _tmp: tmp,
            root,
            config,
        }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn run(&self, args: &[&str]) -> Result<(), CliError> {
        let mut all = vec!["afkit".to_string(), args[0].to_string()];
        all.push("--config".into());
        all.push(self.config.display().to_string());
        all.extend(args[1..].iter().map(|s| s.to_string()));
        run_args(all)
    }

    fn datagen(&self, dir: &str) -> PathBuf {
        let out = self.path(dir);
        self.run(&["datagen", "--out", out.to_str().unwrap()]).unwrap();
        out
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn datagen_is_reproducible() {
    let fx = Fixture::new(TINY);
    let a = fx.datagen("a");
    let b = fx.datagen("b");
    assert_eq!(fs::read(a.join("manifest.json")).unwrap(), fs::read(b.join("manifest.json")).unwrap());
    let m = commands::load_manifest(&a).unwrap();
    assert_eq!(m.entries.len(), 9);
    for e in &m.entries {
        let u = e.u_path.as_ref().unwrap();
        assert_eq!(fs::read(a.join(u)).unwrap(), fs::read(b.join(u)).unwrap());
    }
    assert!(a.join("run_config.toml").exists());
}

#[test]
fn datagen_count_zero_writes_empty_manifest() {
    let fx = Fixture::new(TINY);
    let out = fx.path("empty");
    fx.run(&["datagen", "--out", s(&out), "--count", "0"]).unwrap();
    let m = commands::load_manifest(&out).unwrap();
    assert!(m.entries.is_empty());
}

#[test]
fn datagen_refuses_existing_dir_without_force() {
    let fx = Fixture::new(TINY);
    let out = fx.datagen("d");
    let err = fx.run(&["datagen", "--out", s(&out)]).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    fx.run(&["datagen", "--out", s(&out), "--force"]).unwrap();
}

#[test]
fn wav_length_matches_configured_duration() {
    let fx = Fixture::new(TINY);
    let out = fx.datagen("d");
    let m = commands::load_manifest(&out).unwrap();
    let expect = (m.config.duration_s * m.config.sample_rate as f64).round() as usize;
    for e in &m.entries {
        for p in [&e.u_path, &e.d_path] {
            let (x, rate) = wav_read(&out.join(p.as_ref().unwrap())).unwrap();
            assert_eq!(rate, m.config.sample_rate);
            assert_eq!(x.dim(), (expect, 1));
        }
    }
}

#[test]
fn no_wav_datasets_rebuild_from_seeds() {
    let fx = Fixture::new(TINY);
    let out = fx.path("d");
    fx.run(&["datagen", "--out", s(&out), "--no-wav"]).unwrap();
    let m: Manifest = commands::load_manifest(&out).unwrap();
    assert!(m.entries.iter().all(|e| e.u_path.is_none()));
    let scenes = commands::load_scenes(&out, &m, Fold::Val).unwrap();
    assert_eq!(scenes.len(), 2);
}

#[test]
fn tune_passes_through_to_the_library() {
    let text = TINY.replacen("threads = 2\n", "threads = 2\noptimizer = \"nlms\"\n", 1);
    let fx = Fixture::new(&text);
    let data = fx.datagen("d");
    let out = fx.path("tune");
    let report = commands::cmd_tune(&afkit_cli::TuneArgs {
        common: afkit_cli::CommonArgs {
            config: Some(fx.config.clone()),
            out: Some(out.clone()),
            ..Default::default()
        },
        data: data.clone(),
    })
    .unwrap();

    let m = commands::load_manifest(&data).unwrap();
    let scenes = commands::load_scenes(&data, &m, Fold::Val).unwrap();
    let spec: TaskSpec = afkit_cli::config::load(Some(&fx.config), &Default::default())
        .unwrap()
        .spec;
    let direct = tune_classic(&spec, &Grid::default_for(ClassicKind::Nlms).expand(), &scenes).unwrap();
    assert_eq!(report.best, direct.best);
    for (a, b) in report.entries.iter().zip(&direct.entries) {
        assert_eq!(a.per_scene, b.per_scene);
    }
    let best: ClassicConfig = serde_json::from_str(&fs::read_to_string(out.join("best_config.json")).unwrap()).unwrap();
    assert_eq!(&best, direct.best_config());
    let lines = fs::read_to_string(out.join("tune_report.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), direct.entries.len());
}

#[test]
fn tune_single_point_grid() {
    let text = TINY.replacen("threads = 2\n", "threads = 2\noptimizer = \"lms\"\n", 1)
        + "\n[grid]\nkind = \"lms\"\nstep_sizes = [0.05]\nforgets = [0.9]\ndeltas = [1.0]\n";
    let fx = Fixture::new(&text);
    let data = fx.datagen("d");
    let out = fx.path("tune");
    fx.run(&["tune", "--data", s(&data), "--out", s(&out)]).unwrap();
    let best: ClassicConfig = serde_json::from_str(&fs::read_to_string(out.join("best_config.json")).unwrap()).unwrap();
    assert_eq!(best.step_size, 0.05);
}

#[test]
fn tune_rejects_the_learned_optimizer() {
    let fx = Fixture::new(TINY);
    let data = fx.datagen("d");
    let err = fx
        .run(&["tune", "--data", s(&data), "--optimizer", "meta", "--out", s(&fx.path("t"))])
        .unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

fn read_summary(dir: &Path) -> (EvalSummary, Vec<SceneResult>, String) {
    let summary: EvalSummary = serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    let scores: Vec<SceneResult> = serde_json::from_str(&fs::read_to_string(dir.join("scores.json")).unwrap()).unwrap();
    let csv = fs::read_to_string(dir.join("summary.csv")).unwrap();
    (summary, scores, csv)
}

fn csv_ids(csv: &str) -> Vec<String> {
    csv.lines().skip(1).map(|l| l.split(',').next().unwrap().to_string()).collect()
}

#[test]
fn eval_reports_are_consistent() {
    let fx = Fixture::new(TINY);
    let data = fx.datagen("d");
    let lms = fx.path("lms");
    let nlms = fx.path("nlms");
    fx.run(&["eval", "--data", s(&data), "--optimizer", "lms", "--out", s(&lms), "--emit-wav", "--series"])
        .unwrap();
    fx.run(&["eval", "--data", s(&data), "--optimizer", "nlms", "--out", s(&nlms)]).unwrap();

    let (summary, scores, csv) = read_summary(&lms);
    assert_eq!(summary.count, 3);
    let mean = scores.iter().map(|r| r.score.score).sum::<f64>() / scores.len() as f64;
    assert_eq!(summary.mean, Some(mean));
    let (_, _, csv_nlms) = read_summary(&nlms);
    assert_eq!(csv_ids(&csv), csv_ids(&csv_nlms));
    assert_eq!(fs::read_dir(lms.join("wav")).unwrap().count(), 3);
    assert_eq!(fs::read_dir(lms.join("series")).unwrap().count(), 3);
}

#[test]
fn eval_of_empty_fold() {
    let fx = Fixture::new(TINY);
    let out = fx.path("d");
    fx.run(&["datagen", "--out", s(&out), "--count", "0"]).unwrap();
    fx.run(&["eval", "--data", s(&out), "--optimizer", "lms", "--out", s(&fx.path("e"))]).unwrap();
    let (summary, scores, _) = read_summary(&fx.path("e"));
    assert!(scores.is_empty());
    assert_eq!(summary.mean, None);
}

#[test]
fn diverging_baseline_exits_with_divergence() {
    let fx = Fixture::new(TINY);
    let data = fx.datagen("d");
    let params = fx.path("huge.json");
    fs::write(
        &params,
        serde_json::to_string(&ClassicConfig::new(ClassicKind::Lms).with_step_size(1e12)).unwrap(),
    )
    .unwrap();
    let err = fx
        .run(&["eval", "--data", s(&data), "--params", s(&params), "--out", s(&fx.path("e"))])
        .unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err}");
}

#[test]
fn missing_dataset_is_an_io_error() {
    let fx = Fixture::new(TINY);
    let err = fx
        .run(&["eval", "--data", s(&fx.path("nowhere")), "--optimizer", "lms", "--out", s(&fx.path("e"))])
        .unwrap_err();
    assert_eq!(err.exit_code(), 4);
}

fn train(fx: &Fixture, data: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec!["train", "--data", s(data), "--out", s(out)];
    args.extend_from_slice(extra);
    fx.run(&args).unwrap();
}

#[test]
fn training_is_deterministic_and_resumable() {
    let fx = Fixture::new(TINY);
    let data = fx.datagen("d");
    let (a, b, r) = (fx.path("a"), fx.path("b"), fx.path("r"));
    train(&fx, &data, &a, &[]);
    train(&fx, &data, &b, &["--threads", "1"]);
    let log_a = fs::read_to_string(a.join("train_log.jsonl")).unwrap();
    assert_eq!(log_a, fs::read_to_string(b.join("train_log.jsonl")).unwrap());
    assert_eq!(log_a.lines().count(), 3);

    // One epoch, then resume to two.
    train(&fx, &data, &r, &["--epochs", "1"]);
    let ckpt = r.join("last.ckpt");
    assert_eq!(load_checkpoint(&ckpt).unwrap().epoch, 1);
    train(&fx, &data, &r, &["--resume", s(&ckpt), "--epochs", "2"]);
    let resumed = load_checkpoint(&ckpt).unwrap();
    assert_eq!(resumed.epoch, 2);
    let straight = load_checkpoint(&a.join("last.ckpt")).unwrap();
    assert_eq!(to_bytes(&resumed).unwrap(), to_bytes(&straight).unwrap());
    assert_eq!(fs::read_to_string(r.join("train_log.jsonl")).unwrap(), log_a);
}

#[test]
fn training_stops_early_on_a_flat_metric() {
    // A learning rate this small cannot move any parameter, so the
    // validation score repeats exactly.
    let text = TINY.replace("lr = 1e-3", "lr = 1e-300").replace("max_epochs = 2", "max_epochs = 50").replace("patience = 4", "patience = 2");
    let fx = Fixture::new(&text);
    let data = fx.datagen("d");
    let out = fx.path("t");
    train(&fx, &data, &out, &[]);
    let log = fs::read_to_string(out.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
    let c = load_checkpoint(&out.join("last.ckpt")).unwrap();
    assert!(c.schedule.stopped);
    assert_eq!(c.schedule.best_epoch, 0);
}

#[test]
fn eval_and_infer_produce_identical_audio() {
    let fx = Fixture::new(TINY);
    let data = fx.datagen("d");
    let m = commands::load_manifest(&data).unwrap();
    let entry = m.fold(Fold::Test).next().unwrap().clone();
    let u = data.join(entry.u_path.as_ref().unwrap());
    let d = data.join(entry.d_path.as_ref().unwrap());

    // Classical baseline.
    let ev = fx.path("ev");
    fx.run(&["eval", "--data", s(&data), "--optimizer", "nlms", "--out", s(&ev), "--emit-wav"]).unwrap();
    let inf = fx.path("inf/out.wav");
    fx.run(&["infer", "--optimizer", "nlms", "--input", s(&u), "--desired", s(&d), "--output", s(&inf), "--out", s(&fx.path("inf"))])
        .unwrap();
    assert_eq!(fs::read(ev.join("wav").join(format!("{}.wav", entry.id))).unwrap(), fs::read(&inf).unwrap());

    // The filter starts at zero, so the first hop of output is silent.
    let (y, _) = wav_read(&inf).unwrap();
    assert!(y.column(0).iter().take(32).all(|v| *v == 0.0));
    let report: commands::InferReport =
        serde_json::from_str(&fs::read_to_string(fx.path("inf/infer_report.json")).unwrap()).unwrap();
    assert!(report.rtf > 0.0);
    assert_eq!(report.latency_samples, 32);

    // Learned optimizer from a short training run.
    let t = fx.path("t");
    train(&fx, &data, &t, &["--epochs", "1"]);
    let ckpt = t.join("best.ckpt");
    let ev = fx.path("ev_meta");
    fx.run(&["eval", "--data", s(&data), "--optimizer", "meta", "--checkpoint", s(&ckpt), "--out", s(&ev), "--emit-wav"])
        .unwrap();
    let inf = fx.path("inf_meta/out.wav");
    fx.run(&[
        "infer", "--optimizer", "meta", "--checkpoint", s(&ckpt), "--input", s(&u), "--desired", s(&d), "--output", s(&inf),
        "--out", s(&fx.path("inf_meta")),
    ])
    .unwrap();
    assert_eq!(fs::read(ev.join("wav").join(format!("{}.wav", entry.id))).unwrap(), fs::read(&inf).unwrap());
}

#[test]
fn checkpoint_task_mismatch_is_a_config_error() {
    let fx = Fixture::new(TINY);
    let data = fx.datagen("d");
    let t = fx.path("t");
    train(&fx, &data, &t, &["--epochs", "0"]);
    let err = fx
        .run(&[
            "eval", "--task", "aec", "--data", s(&data), "--optimizer", "meta", "--checkpoint", s(&t.join("last.ckpt")),
            "--out", s(&fx.path("e")),
        ])
        .unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn infer_rejects_a_rate_mismatch() {
    let fx = Fixture::new(TINY);
    let x = ndarray::Array2::<f64>::zeros((800, 1));
    let p = fx.path("in.wav");
    afkit::scenes::wav_write(&p, &x, 8000, afkit::scenes::SampleFormat::Float32).unwrap();
    let err = fx
        .run(&["infer", "--optimizer", "lms", "--input", s(&p), "--desired", s(&p), "--output", s(&fx.path("o.wav")), "--out", s(&fx.path("o"))])
        .unwrap_err();
    assert_eq!(err.exit_code(), 2);
}
