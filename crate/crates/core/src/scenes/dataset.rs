//! Scene assembly per task and reproducible dataset manifests.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::synth::{
    active_power, convolve, fractional_delay, mix_at_ser, soft_clip, splice_path_change,
    synth_rir, synth_speechlike, white_noise,
};
use crate::error::{config_err, Result};
use crate::tasks::TaskKind;

const SPEED_OF_SOUND: f64 = 343.0;

/// Excitation used where a task needs a source signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    White,
    #[default]
    Speech,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub task: TaskKind,
    pub sample_rate: u32,
    pub duration_s: f64,
    /// Near-end to echo ratio range for double-talk, dB.
    pub ser_db: (f64, f64),
    /// Measurement noise level relative to the system response, dB.
    pub snr_db: f64,
    pub rir_len: usize,
    /// Time constant of the impulse-response envelope, seconds.
    pub decay_s: f64,
    pub channels: usize,
    pub source: SourceKind,
    pub double_talk: bool,
    pub path_change: bool,
    /// Window for the path-change instant, seconds.
    pub path_change_s: (f64, f64),
    /// Soft-clip strength for loudspeaker distortion.
    pub nonlinearity: Option<f64>,
    /// Uniform linear array spacing, meters.
    pub mic_spacing_m: f64,
    /// Adds a directional interferer to beamforming scenes.
    pub interferer: bool,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            task: TaskKind::SystemId,
            sample_rate: 16000,
            duration_s: 10.0,
            ser_db: (-10.0, 10.0),
            snr_db: 40.0,
            rir_len: 1024,
            decay_s: 0.02,
            channels: 1,
            source: SourceKind::Speech,
            double_talk: false,
            path_change: false,
            path_change_s: (4.0, 6.0),
            nonlinearity: None,
            mic_spacing_m: 0.04,
            interferer: true,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn for_task(task: TaskKind) -> Self {
        let mut c = Self {
            task,
            ..Self::default()
        };
        match task {
            TaskKind::Wpe => {
                c.channels = 1;
                c.decay_s = 0.1;
                c.snr_db = 30.0;
            }
            TaskKind::Gsc => {
                c.channels = 6;
                c.decay_s = 0.01;
                c.rir_len = 256;
                c.snr_db = 30.0;
            }
            _ => {}
        }
        c
    }

    pub fn samples(&self) -> usize {
        (self.duration_s * self.sample_rate as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0) || self.sample_rate == 0 {
            return Err(config_err("scene duration and sample rate must be positive"));
        }
        if self.channels == 0 || self.rir_len == 0 {
            return Err(config_err("scenes need at least one channel and one tap"));
        }
        if self.task == TaskKind::Gsc && self.channels < 2 {
            return Err(config_err("beamforming scenes need at least two microphones"));
        }
        if self.ser_db.0 > self.ser_db.1 || self.path_change_s.0 > self.path_change_s.1 {
            return Err(config_err("ranges must be ordered (low, high)"));
        }
        Ok(())
    }
}

/// Ground truth kept next to the observed signals.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SceneRefs {
    /// True forward system per channel (before any path change).
    pub w_true: Vec<Vec<f64>>,
    /// System after the path change.
    pub w_after: Option<Vec<Vec<f64>>>,
    pub path_change: Option<usize>,
    /// Noiseless system response.
    pub echo: Option<Array2<f64>>,
    /// Clean target: near-end speech, dry source, or the target image at
    /// the microphones, depending on the task.
    pub clean: Option<Array2<f64>>,
    pub noise: Option<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: String,
    pub task: TaskKind,
    pub sample_rate: u32,
    /// Input signal, `T × channels`.
    pub u: Array2<f64>,
    /// Desired signal, `T × channels`.
    pub d: Array2<f64>,
    pub refs: SceneRefs,
}

impl Scene {
    pub fn len(&self) -> usize {
        self.u.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.u.nrows() == 0
    }
}

fn columns(cols: &[Vec<f64>]) -> Array2<f64> {
    let t = cols.first().map_or(0, |c| c.len());
    Array2::from_shape_fn((t, cols.len()), |(i, m)| cols[m][i])
}

fn source(kind: SourceKind, cfg: &SceneConfig, seed: u64) -> Vec<f64> {
    match kind {
        SourceKind::White => white_noise(cfg.samples(), seed).into_iter().map(|v| 0.1 * v).collect(),
        SourceKind::Speech => synth_speechlike(cfg.duration_s, cfg.sample_rate, seed),
    }
}

/// White noise at `snr_db` below the active power of `reference`.
fn noise_for(reference: &[f64], snr_db: f64, seed: u64) -> Vec<f64> {
    let p = active_power(reference);
    let g = (p / 10f64.powf(snr_db / 10.0)).sqrt();
    white_noise(reference.len(), seed).into_iter().map(|v| v * g).collect()
}

/// Impulse response from a far-field source at `angle_rad` to mic `m` of a
/// uniform linear array: a fractional-delay direct path plus a decaying tail.
fn spatial_rir(cfg: &SceneConfig, m: usize, angle_rad: f64, seed: u64) -> Vec<f64> {
    let fs = cfg.sample_rate as f64;
    let base = 10.0;
    let delay = base + m as f64 * cfg.mic_spacing_m * angle_rad.sin() * fs / SPEED_OF_SOUND;
    let mut h = fractional_delay(delay, cfg.rir_len.max(24));
    let tail = synth_rir(h.len(), cfg.decay_s * fs, seed);
    let start = (base as usize) + 10;
    for t in start..h.len() {
        h[t] += 0.5 * tail[t - start + 1];
    }
    h
}

/// Builds one scene deterministically from `seed`.
pub fn generate_scene(cfg: &SceneConfig, seed: u64, id: impl Into<String>) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut next = || rng.gen::<u64>();
    let fs = cfg.sample_rate as f64;
    let decay = cfg.decay_s * fs;
    let mut refs = SceneRefs::default();
    let (u, d) = match cfg.task {
        TaskKind::SystemId => {
            let mut us = Vec::new();
            let mut ds = Vec::new();
            let mut echoes = Vec::new();
            let mut noises = Vec::new();
            for _ in 0..cfg.channels {
                let u = source(cfg.source, cfg, next());
                let w = synth_rir(cfg.rir_len, decay, next());
                let echo = convolve(&u, &w);
                let n = noise_for(&echo, cfg.snr_db, next());
                ds.push(echo.iter().zip(&n).map(|(a, b)| a + b).collect::<Vec<_>>());
                refs.w_true.push(w);
                echoes.push(echo);
                noises.push(n);
                us.push(u);
            }
            refs.echo = Some(columns(&echoes));
            refs.noise = Some(columns(&noises));
            (columns(&us), columns(&ds))
        }
        TaskKind::Aec => {
            let u = source(cfg.source, cfg, next());
            let w_a = synth_rir(cfg.rir_len, decay, next());
            let w_b = synth_rir(cfg.rir_len, decay, next());
            let drive = match cfg.nonlinearity {
                Some(alpha) => soft_clip(&u, alpha),
                None => u.clone(),
            };
            let echo = if cfg.path_change {
                let range = (
                    (cfg.path_change_s.0 * fs) as usize,
                    (cfg.path_change_s.1 * fs) as usize,
                );
                let pc = splice_path_change(w_a.clone(), w_b, range, next());
                refs.path_change = Some(pc.t_star);
                refs.w_after = Some(vec![pc.w_b.clone()]);
                pc.apply(&drive)
            } else {
                convolve(&drive, &w_a)
            };
            let near = if cfg.double_talk {
                let s = synth_speechlike(cfg.duration_s, cfg.sample_rate, next());
                let ser = if cfg.ser_db.0 == cfg.ser_db.1 {
                    cfg.ser_db.0
                } else {
                    rand::Rng::gen_range(&mut ChaCha8Rng::seed_from_u64(next()), cfg.ser_db.0..cfg.ser_db.1)
                };
                mix_at_ser(&echo, &s, ser)?
            } else {
                vec![0.0; echo.len()]
            };
            let n = noise_for(&echo, cfg.snr_db, next());
            let d: Vec<f64> = (0..echo.len()).map(|t| echo[t] + near[t] + n[t]).collect();
            refs.w_true = vec![w_a];
            refs.echo = Some(columns(&[echo]));
            refs.clean = Some(columns(&[near]));
            refs.noise = Some(columns(&[n]));
            (columns(&[u]), columns(&[d]))
        }
        TaskKind::Eq => {
            let dry = source(cfg.source, cfg, next());
            let h = synth_rir(cfg.rir_len, decay, next());
            let wet = convolve(&dry, &h);
            let n = noise_for(&wet, cfg.snr_db, next());
            let u: Vec<f64> = wet.iter().zip(&n).map(|(a, b)| a + b).collect();
            refs.w_true = vec![h];
            refs.clean = Some(columns(&[dry.clone()]));
            refs.noise = Some(columns(&[n]));
            (columns(&[u]), columns(&[dry]))
        }
        TaskKind::Wpe => {
            let dry = source(cfg.source, cfg, next());
            let angle = rand::Rng::gen_range(&mut ChaCha8Rng::seed_from_u64(next()), -1.2..1.2);
            let mut mics = Vec::new();
            let mut noises = Vec::new();
            for m in 0..cfg.channels {
                let h = spatial_rir(cfg, m, angle, next());
                let wet = convolve(&dry, &h);
                let n = noise_for(&wet, cfg.snr_db, next());
                mics.push(wet.iter().zip(&n).map(|(a, b)| a + b).collect::<Vec<_>>());
                refs.w_true.push(h);
                noises.push(n);
            }
            refs.clean = Some(columns(&[dry]));
            refs.noise = Some(columns(&noises));
            let d = columns(&mics);
            (d.clone(), d)
        }
        TaskKind::Gsc => {
            let target = source(cfg.source, cfg, next());
            let mut arng = ChaCha8Rng::seed_from_u64(next());
            let look: f64 = 0.0;
            let int_angle: f64 = arng.gen_range(0.5..1.4) * if arng.gen::<bool>() { 1.0 } else { -1.0 };
            let interf = synth_speechlike(cfg.duration_s, cfg.sample_rate, next());
            let mut images = Vec::new();
            let mut mix = Vec::new();
            let mut noises = Vec::new();
            for m in 0..cfg.channels {
                let img = convolve(&target, &spatial_rir(cfg, m, look, next()));
                let int = if cfg.interferer {
                    convolve(&interf, &spatial_rir(cfg, m, int_angle, next()))
                } else {
                    vec![0.0; img.len()]
                };
                let n = noise_for(&img, cfg.snr_db, next());
                mix.push((0..img.len()).map(|t| img[t] + int[t] + n[t]).collect::<Vec<_>>());
                images.push(img);
                noises.push(n);
            }
            refs.clean = Some(columns(&images));
            refs.noise = Some(columns(&noises));
            let u = columns(&mix);
            (u.clone(), u)
        }
    };
    Ok(Scene {
        id: id.into(),
        task: cfg.task,
        sample_rate: cfg.sample_rate,
        u,
        d,
        refs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fold {
    Train,
    Val,
    Test,
}

impl Fold {
    pub const ALL: [Fold; 3] = [Fold::Train, Fold::Val, Fold::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Fold::Train => "train",
            Fold::Val => "val",
            Fold::Test => "test",
        }
    }

    fn index(self) -> u64 {
        match self {
            Fold::Train => 0,
            Fold::Val => 1,
            Fold::Test => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct FoldCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl FoldCounts {
    pub fn get(&self, fold: Fold) -> usize {
        match fold {
            Fold::Train => self.train,
            Fold::Val => self.val,
            Fold::Test => self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub fold: Fold,
    pub seed: u64,
    /// Paths relative to the manifest, present once audio is written.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_path: Option<String>,
    /// Clean target image, written for beamforming scenes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clean_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub config: SceneConfig,
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_VERSION: u32 = 1;

/// Per-scene seed. The fold occupies bits 40..42 of the pre-image, so seed
/// sets of different folds never intersect.
pub fn scene_seed(base: u64, fold: Fold, index: usize) -> u64 {
    assert!((index as u64) < (1 << 40), "scene index out of range");
    let pre = (fold.index() << 40) | index as u64;
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ pre
}

pub fn build_dataset(cfg: &SceneConfig, counts: FoldCounts) -> Result<Manifest> {
    cfg.validate()?;
    let mut entries = Vec::new();
    for fold in Fold::ALL {
        for i in 0..counts.get(fold) {
            entries.push(ManifestEntry {
                id: format!("{}-{:05}", fold.as_str(), i),
                fold,
                seed: scene_seed(cfg.seed, fold, i),
                u_path: None,
                d_path: None,
                clean_path: None,
            });
        }
    }
    Ok(Manifest {
        version: MANIFEST_VERSION,
        config: cfg.clone(),
        entries,
    })
}

impl Manifest {
    pub fn fold(&self, fold: Fold) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.fold == fold)
    }

    /// Rebuilds the scene for an entry from its seed.
    pub fn regenerate(&self, entry: &ManifestEntry) -> Result<Scene> {
        generate_scene(&self.config, entry.seed, entry.id.clone())
    }

    pub fn scenes(&self, fold: Fold) -> Result<Vec<Scene>> {
        self.fold(fold).map(|e| self.regenerate(e)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Manifest = serde_json::from_str(s)?;
        if m.version != MANIFEST_VERSION {
            return Err(crate::Error::Format(format!("unsupported manifest version {}", m.version)));
        }
        Ok(m)
    }
}
