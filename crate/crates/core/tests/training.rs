//! Meta-training loop behaviour on a tiny system-identification problem.

use std::sync::Arc;

use afkit::dsp::{FrameSpec, WindowKind};
use afkit::neural::LearnedOptimizer;
use afkit::scenes::{build_dataset, Fold, FoldCounts, Scene, SceneConfig, SourceKind};
use afkit::tasks::{run_scene, score_scene, Optimizee, TaskKind, TaskSpec};
use afkit::train::checkpoint::{from_bytes, to_bytes};
use afkit::train::{evaluate, MetaLoss, TrainConfig, Trainer};

fn tiny() -> (TaskSpec, Vec<Scene>, Vec<Scene>, TrainConfig) {
    let mut spec = TaskSpec::default_for(TaskKind::SystemId);
    spec.frame = FrameSpec::new(32, 16, WindowKind::Rectangular, 1).unwrap();
    let cfg = SceneConfig {
        duration_s: 0.25,
        rir_len: 8,
        decay_s: 0.0005,
        source: SourceKind::White,
        seed: 5,
        ..SceneConfig::for_task(TaskKind::SystemId)
    };
    let m = build_dataset(&cfg, FoldCounts { train: 4, val: 2, test: 0 }).unwrap();
    let tc = TrainConfig {
        unroll: 4,
        batch: 2,
        hidden: 4,
        lr: 1e-3,
        passes_per_epoch: 2,
        max_epochs: 2,
        seed: 9,
        ..TrainConfig::default()
    };
    (spec, m.scenes(Fold::Train).unwrap(), m.scenes(Fold::Val).unwrap(), tc)
}

#[test]
fn training_is_deterministic() {
    let (spec, train, val, tc) = tiny();
    let run = || {
        let mut t = Trainer::new(spec.clone(), tc.clone(), train.clone(), val.clone()).unwrap();
        let out = t.run(|_, _| Ok(())).unwrap();
        (out.history, to_bytes(t.checkpoint()).unwrap())
    };
    let (h1, c1) = run();
    let (h2, c2) = run();
    assert_eq!(h1.len(), 3);
    assert_eq!(h1, h2);
    assert_eq!(c1, c2);
}

#[test]
fn resuming_matches_an_uninterrupted_run() {
    let (spec, train, val, tc) = tiny();
    let mut straight = Trainer::new(spec.clone(), tc.clone(), train.clone(), val.clone()).unwrap();
    straight.run(|_, _| Ok(())).unwrap();

    let mut first = Trainer::new(spec, tc, train.clone(), val.clone()).unwrap();
    first.set_max_epochs(1);
    first.run(|_, _| Ok(())).unwrap();
    // Through bytes, as a real resume would.
    let saved = from_bytes(&to_bytes(first.checkpoint()).unwrap()).unwrap();
    let mut second = Trainer::resume(saved, train, val).unwrap();
    second.set_max_epochs(2);
    second.run(|_, _| Ok(())).unwrap();

    assert_eq!(second.checkpoint().epoch, 2);
    assert_eq!(
        to_bytes(second.checkpoint()).unwrap(),
        to_bytes(straight.checkpoint()).unwrap()
    );
}

#[test]
fn every_epoch_is_reported_once() {
    let (spec, train, val, tc) = tiny();
    let mut t = Trainer::new(spec, tc, train, val).unwrap();
    let mut seen = Vec::new();
    let out = t
        .run(|rec, ck| {
            assert_eq!(ck.epoch, rec.epoch);
            seen.push(rec.epoch);
            Ok(())
        })
        .unwrap();
    assert_eq!(seen, vec![0, 1, 2]);
    assert!(out.history[0].train_loss.is_none());
    assert!(out.history[1..].iter().all(|r| r.train_loss.is_some()));
}

#[test]
fn validation_score_equals_frame_by_frame_run() {
    let (spec, _, val, tc) = tiny();
    for loss in ["frame_accumulated_log", "frame_independent_linear"] {
        let tc = TrainConfig {
            loss: loss.parse::<MetaLoss>().unwrap(),
            ..tc.clone()
        };
        let params = afkit::neural::init_params(2, tc.shape(&spec));
        let opt = Optimizee::new(&spec).unwrap();
        let (_, score) = evaluate(&spec, &opt, &tc, &params, &val).unwrap();
        let shared = Arc::new(params);
        let direct: f64 = val
            .iter()
            .map(|sc| {
                let mut rule = LearnedOptimizer::new(shared.clone(), tc.features, spec.layout(), spec.frame.bins()).unwrap();
                let run = run_scene(&spec, sc, &mut rule).unwrap();
                score_scene(&spec, sc, &run).unwrap().score
            })
            .sum::<f64>()
            / val.len() as f64;
        assert_eq!(score, Some(direct), "{loss}");
    }
}

#[test]
fn empty_folds_are_rejected() {
    let (spec, train, _, tc) = tiny();
    assert!(Trainer::new(spec, tc, train, Vec::new()).is_err());
}
