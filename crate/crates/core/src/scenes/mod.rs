//! Synthetic scene generation, dataset manifests, and WAV I/O.

pub mod dataset;
pub mod synth;
pub mod wav;

pub use dataset::{
    build_dataset, generate_scene, scene_seed, Fold, FoldCounts, Manifest, ManifestEntry, Scene,
    SceneConfig, SceneRefs, SourceKind, MANIFEST_VERSION,
};
pub use synth::{
    active_power, convolve, fractional_delay, mix_at_ser, soft_clip, splice_path_change, synth_rir,
    synth_speechlike, white_noise, PathChange,
};
pub use wav::{wav_read, wav_read_at, wav_write, SampleFormat};
