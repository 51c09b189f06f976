//! The outer training loop: shuffled batches of scenes, truncated segments,
//! one meta-update per segment, validation after every epoch.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, clip_gradient, AdamConfig, AdamState};
use super::checkpoint::Checkpoint;
use super::loss::MetaLoss;
use super::unroll::{meta_gradient, run_unrolled, segment_loss, CarryState};
use crate::error::{config_err, Error, Result};
use crate::neural::{init_params, FeatureSet, NetShape, Params};
use crate::scenes::Scene;
use crate::tasks::{prepare_frames, score_scene, stack_time, FrameData, Optimizee, RunOutput, TaskSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Frames per truncated segment.
    pub unroll: usize,
    /// Scenes per batch.
    pub batch: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global-norm clipping threshold.
    pub clip: f64,
    /// Passes over the training fold per epoch.
    pub passes_per_epoch: usize,
    /// Non-improving epochs tolerated before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub loss: MetaLoss,
    pub features: FeatureSet,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            unroll: 16,
            batch: 64,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.99,
            adam_eps: 1e-8,
            clip: 10.0,
            passes_per_epoch: 10,
            patience: 4,
            max_epochs: 100,
            loss: MetaLoss::default(),
            features: FeatureSet::Full,
            hidden: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.unroll < 2 {
            return Err(config_err("unroll length must be at least 2"));
        }
        if self.batch == 0 || self.passes_per_epoch == 0 || self.hidden == 0 || self.patience == 0 {
            return Err(config_err("batch, passes, hidden size and patience must be positive"));
        }
        if !(self.lr > 0.0 && self.clip > 0.0 && self.adam_eps > 0.0) {
            return Err(config_err("learning rate, clip and adam_eps must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(config_err("Adam betas must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    pub fn shape(&self, spec: &TaskSpec) -> NetShape {
        let taps = spec.layout().taps();
        NetShape {
            features: self.features.width(taps),
            taps,
            hidden: self.hidden,
        }
    }
}

/// One line of the training log. Non-finite values are stored as `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean segment loss over the epoch's updates (none for epoch 0).
    pub train_loss: Option<f64>,
    /// Mean segment loss on the validation fold with the epoch's final weights.
    pub val_loss: Option<f64>,
    /// Mean task score on the validation fold.
    pub val_metric: Option<f64>,
    /// Learning rate used during this epoch.
    pub lr: f64,
    pub improved: bool,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Early stopping and learning-rate halving. Patience counts epochs since
/// the best one, so halving never resets it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub best: Option<f64>,
    pub best_epoch: usize,
    pub bad_epochs: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub stopped: bool,
}

impl Schedule {
    pub fn new(patience: usize, max_epochs: usize) -> Self {
        Self {
            best: None,
            best_epoch: 0,
            bad_epochs: 0,
            patience,
            max_epochs,
            stopped: false,
        }
    }

    /// Records the validation metric of `epoch`; halves `lr` when it did not
    /// improve. Returns whether it improved.
    pub fn observe(&mut self, epoch: usize, metric: Option<f64>, lr: &mut f64) -> bool {
        let improved = match (metric, self.best) {
            (Some(m), None) => m.is_finite(),
            (Some(m), Some(b)) => m > b,
            (None, _) => false,
        };
        if improved {
            self.best = metric;
            self.best_epoch = epoch;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            *lr *= 0.5;
        }
        if self.bad_epochs >= self.patience || epoch >= self.max_epochs {
            self.stopped = true;
        }
        improved
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best_params: Params,
    pub best_epoch: usize,
    pub best_metric: Option<f64>,
    pub history: Vec<EpochRecord>,
}

pub struct Trainer {
    spec: TaskSpec,
    opt: Optimizee,
    train: Vec<Scene>,
    val: Vec<Scene>,
    ckpt: Checkpoint,
}

impl Trainer {
    pub fn new(spec: TaskSpec, config: TrainConfig, train: Vec<Scene>, val: Vec<Scene>) -> Result<Self> {
        config.validate()?;
        let params = init_params(config.seed, config.shape(&spec));
        let ckpt = Checkpoint {
            task: spec.clone(),
            adam: AdamState::new(params.num_real(), config.lr),
            best_params: params.clone(),
            params,
            epoch: 0,
            history: Vec::new(),
            schedule: Schedule::new(config.patience, config.max_epochs),
            rng_word_pos: 0,
            config,
        };
        Self::resume(ckpt, train, val)
    }

    /// Continues from a checkpoint. Its task, config and RNG position are
    /// used as stored.
    pub fn resume(ckpt: Checkpoint, train: Vec<Scene>, val: Vec<Scene>) -> Result<Self> {
        ckpt.config.validate()?;
        if ckpt.config.shape(&ckpt.task) != ckpt.params.shape {
            return Err(config_err("checkpoint network does not fit its task"));
        }
        if train.is_empty() || val.is_empty() {
            return Err(config_err("training needs non-empty train and validation folds"));
        }
        for s in train.iter().chain(&val) {
            if s.task != ckpt.task.kind {
                return Err(config_err(format!(
                    "scene {} is for {}, training {}",
                    s.id, s.task, ckpt.task.kind
                )));
            }
        }
        Ok(Self {
            opt: Optimizee::new(&ckpt.task)?,
            spec: ckpt.task.clone(),
            train,
            val,
            ckpt,
        })
    }

    /// Last state that completed an epoch without diverging.
    pub fn checkpoint(&self) -> &Checkpoint {
        &self.ckpt
    }

    /// Raises or lowers the epoch limit, e.g. when resuming.
    pub fn set_max_epochs(&mut self, n: usize) {
        self.ckpt.config.max_epochs = n;
        self.ckpt.schedule.max_epochs = n;
        if self.ckpt.epoch < n && self.ckpt.schedule.bad_epochs < self.ckpt.schedule.patience {
            self.ckpt.schedule.stopped = false;
        }
    }

    /// Trains until the schedule stops. `on_epoch` sees each finished epoch
    /// and the checkpoint holding it. On divergence the error is returned and
    /// [`Trainer::checkpoint`] still holds the last good state.
    pub fn run(&mut self, mut on_epoch: impl FnMut(&EpochRecord, &Checkpoint) -> Result<()>) -> Result<TrainOutcome> {
        if self.ckpt.history.is_empty() {
            let params = self.ckpt.params.clone();
            let rec = self.finish_epoch(0, None, &params)?;
            on_epoch(&rec, &self.ckpt)?;
        }
        while !self.ckpt.schedule.stopped {
            let epoch = self.ckpt.epoch + 1;
            let mut next = self.ckpt.clone();
            let train_loss = self.train_epoch(epoch, &mut next)?;
            let params = next.params.clone();
            self.ckpt = next;
            let rec = self.finish_epoch(epoch, Some(train_loss), &params)?;
            on_epoch(&rec, &self.ckpt)?;
        }
        let c = &self.ckpt;
        Ok(TrainOutcome {
            best_params: c.best_params.clone(),
            best_epoch: c.schedule.best_epoch,
            best_metric: c.schedule.best,
            history: c.history.clone(),
        })
    }

    fn finish_epoch(&mut self, epoch: usize, train_loss: Option<f64>, params: &Params) -> Result<EpochRecord> {
        let (val_loss, val_metric) = self.validate(params)?;
        let lr = self.ckpt.adam.lr;
        let improved = self.ckpt.schedule.observe(epoch, val_metric, &mut self.ckpt.adam.lr);
        if improved {
            self.ckpt.best_params = params.clone();
        }
        let rec = EpochRecord {
            epoch,
            train_loss: train_loss.and_then(finite),
            val_loss,
            val_metric,
            lr,
            improved,
        };
        self.ckpt.epoch = epoch;
        self.ckpt.history.push(rec.clone());
        Ok(rec)
    }

    /// Mean validation meta loss and task score. A scene the network blows
    /// up on makes both `None`.
    pub fn validate(&self, params: &Params) -> Result<(Option<f64>, Option<f64>)> {
        evaluate(&self.spec, &self.opt, &self.ckpt.config, params, &self.val)
    }

    fn train_epoch(&self, epoch: usize, st: &mut Checkpoint) -> Result<f64> {
        let cfg = st.config.clone();
        let adam_cfg = cfg.adam();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_word_pos(st.rng_word_pos);
        let mut phi = st.params.to_flat();
        let shape = st.params.shape;
        let mut params = st.params.clone();
        let (mut loss_sum, mut updates) = (0.0, 0usize);
        for pass in 0..cfg.passes_per_epoch {
            let mut order: Vec<usize> = (0..self.train.len()).collect();
            order.shuffle(&mut rng);
            for (bi, batch) in order.chunks(cfg.batch).enumerate() {
                let frames: Vec<Vec<FrameData>> = batch
                    .par_iter()
                    .map(|&i| prepare_frames(&self.spec, &self.train[i]))
                    .collect::<Result<_>>()?;
                let segments = frames.iter().map(|f| f.len() / cfg.unroll).min().unwrap_or(0);
                let mut states: Vec<CarryState> =
                    batch.iter().map(|_| CarryState::initial(&self.opt, cfg.hidden)).collect();
                for seg in 0..segments {
                    let range = seg * cfg.unroll..(seg + 1) * cfg.unroll;
                    let results: Vec<Result<(f64, Params, CarryState)>> = (0..batch.len())
                        .into_par_iter()
                        .map(|b| {
                            meta_gradient(
                                &self.opt,
                                &params,
                                cfg.features,
                                cfg.loss,
                                &states[b],
                                &frames[b][range.clone()],
                            )
                        })
                        .collect();
                    let where_ = || format!("epoch {epoch}, pass {pass}, batch {bi}, segment {seg}");
                    let mut grad = vec![0.0; phi.len()];
                    let mut loss = 0.0;
                    for (b, r) in results.into_iter().enumerate() {
                        let (l, g, next) = r.map_err(|e| Error::Divergence(format!("{}: {e}", where_())))?;
                        loss += l;
                        for (acc, v) in grad.iter_mut().zip(g.to_flat()) {
                            *acc += v;
                        }
                        states[b] = next;
                    }
                    let n = batch.len() as f64;
                    loss /= n;
                    grad.iter_mut().for_each(|v| *v /= n);
                    if !loss.is_finite() || grad.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Divergence(format!("{}: meta loss or gradient is not finite", where_())));
                    }
                    clip_gradient(&mut grad, cfg.clip);
                    adam_step(&mut phi, &grad, &mut st.adam, &adam_cfg);
                    params = Params::from_flat(shape, &phi)?;
                    loss_sum += loss;
                    updates += 1;
                }
            }
        }
        st.params = params;
        st.rng_word_pos = rng.get_word_pos();
        Ok(if updates > 0 { loss_sum / updates as f64 } else { f64::NAN })
    }
}

/// Mean meta loss over full segments and mean task score for `scenes`.
/// Both come from one pass per scene; the output is identical to running the
/// network as an update rule frame by frame.
pub fn evaluate(
    spec: &TaskSpec,
    opt: &Optimizee,
    cfg: &TrainConfig,
    params: &Params,
    scenes: &[Scene],
) -> Result<(Option<f64>, Option<f64>)> {
    let per: Vec<Result<(f64, f64)>> = scenes
        .par_iter()
        .map(|scene| {
            let frames = prepare_frames(spec, scene)?;
            let mut st = CarryState::initial(opt, cfg.hidden);
            let (mut sum, mut n) = (0.0, 0usize);
            let mut ys = Vec::with_capacity(frames.len());
            for seg in frames.chunks(cfg.unroll) {
                let out = match run_unrolled(opt, params, cfg.features, &st, seg, false) {
                    Ok(o) => o,
                    Err(Error::NonFinite(_)) => return Ok((f64::NAN, f64::NAN)),
                    Err(e) => return Err(e),
                };
                if seg.len() == cfg.unroll {
                    sum += segment_loss(cfg.loss, seg, &out)?.0;
                    n += 1;
                }
                ys.push(out.y_time);
                st = out.next;
            }
            let y = stack_time(&ys);
            if y.iter().any(|v| !v.is_finite()) {
                return Ok((f64::NAN, f64::NAN));
            }
            let d = stack_time(&frames.iter().map(|f| f.d_time.clone()).collect::<Vec<_>>());
            let run = RunOutput {
                e: &d - &y,
                y,
                d,
                theta: st.filter.theta,
            };
            let score = score_scene(spec, scene, &run)?.score;
            Ok((if n > 0 { sum / n as f64 } else { f64::NAN }, score))
        })
        .collect();
    let mut loss = 0.0;
    let mut score = 0.0;
    for r in per {
        let (l, s) = r?;
        loss += l;
        score += s;
    }
    let n = scenes.len().max(1) as f64;
    Ok((finite(loss / n), finite(score / n)))
}
