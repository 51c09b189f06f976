//! Checkpoint container.
//!
//! Layout: a magic line with the format version, a line holding the byte
//! length of the JSON manifest, the manifest itself, then little-endian
//! `f64` arrays in the order the manifest declares them.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::trainer::{EpochRecord, Schedule, TrainConfig};
use crate::error::{Error, Result};
use crate::neural::{FeatureSet, NetShape, Params};
use crate::tasks::TaskSpec;

pub const CHECKPOINT_MAGIC: &str = "afkit-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Complete training state: enough to resume bit-exactly or to run the best
/// network.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub task: TaskSpec,
    pub config: TrainConfig,
    pub params: Params,
    pub best_params: Params,
    pub adam: AdamState,
    /// Last completed epoch (0 is the evaluation of the initial weights).
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
    pub schedule: Schedule,
    /// Position of the shuffling stream (ChaCha8 seeded with `config.seed`).
    pub rng_word_pos: u128,
}

impl Checkpoint {
    pub fn shape(&self) -> NetShape {
        self.params.shape
    }

    pub fn features(&self) -> FeatureSet {
        self.config.features
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ArrayDecl {
    name: String,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    task: TaskSpec,
    config: TrainConfig,
    shape: NetShape,
    epoch: usize,
    history: Vec<EpochRecord>,
    schedule: Schedule,
    adam_step: u64,
    lr: f64,
    /// Decimal string; JSON numbers cannot hold a u128 portably.
    rng_word_pos: String,
    arrays: Vec<ArrayDecl>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

pub fn to_bytes(c: &Checkpoint) -> Result<Vec<u8>> {
    let arrays: [(&str, Vec<f64>); 4] = [
        ("params", c.params.to_flat()),
        ("best_params", c.best_params.to_flat()),
        ("adam_m", c.adam.m.clone()),
        ("adam_v", c.adam.v.clone()),
    ];
    let manifest = Manifest {
        task: c.task.clone(),
        config: c.config.clone(),
        shape: c.params.shape,
        epoch: c.epoch,
        history: c.history.clone(),
        schedule: c.schedule.clone(),
        adam_step: c.adam.step,
        lr: c.adam.lr,
        rng_word_pos: c.rng_word_pos.to_string(),
        arrays: arrays
            .iter()
            .map(|(n, a)| ArrayDecl {
                name: n.to_string(),
                len: a.len(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::new();
    writeln!(out, "{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}")?;
    writeln!(out, "{}", json.len())?;
    out.extend_from_slice(&json);
    for (_, a) in &arrays {
        for v in a {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn take_line<'a>(buf: &mut &'a [u8]) -> Result<&'a str> {
    let end = buf.iter().position(|&b| b == b'\n').ok_or_else(|| bad("truncated header"))?;
    let line = std::str::from_utf8(&buf[..end]).map_err(|_| bad("header is not text"))?;
    *buf = &buf[end + 1..];
    Ok(line)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let mut buf = bytes;
    let magic = take_line(&mut buf)?;
    let version = magic
        .strip_prefix(CHECKPOINT_MAGIC)
        .and_then(|r| r.strip_prefix(" v"))
        .ok_or_else(|| bad("not a checkpoint file"))?;
    let version: u32 = version.parse().map_err(|_| bad("bad version field"))?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!(
            "checkpoint version {version}, this build reads version {CHECKPOINT_VERSION}"
        )));
    }
    let len: usize = take_line(&mut buf)?.parse().map_err(|_| bad("bad manifest length"))?;
    if buf.len() < len {
        return Err(bad("truncated manifest"));
    }
    let m: Manifest = serde_json::from_slice(&buf[..len]).map_err(|e| bad(format!("manifest: {e}")))?;
    buf = &buf[len..];
    let expected: usize = m.arrays.iter().map(|a| a.len * 8).sum();
    if buf.len() != expected {
        return Err(bad(format!(
            "array section holds {} bytes, manifest declares {expected}",
            buf.len()
        )));
    }
    let mut arrays = Vec::new();
    for decl in &m.arrays {
        let (head, rest) = buf.split_at(decl.len * 8);
        arrays.push(
            head.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect::<Vec<_>>(),
        );
        buf = rest;
    }
    let names: Vec<&str> = m.arrays.iter().map(|a| a.name.as_str()).collect();
    if names != ["params", "best_params", "adam_m", "adam_v"] {
        return Err(bad(format!("unexpected arrays {names:?}")));
    }
    let params = Params::from_flat(m.shape, &arrays[0]).map_err(|e| bad(e.to_string()))?;
    let best_params = Params::from_flat(m.shape, &arrays[1]).map_err(|e| bad(e.to_string()))?;
    if arrays[2].len() != arrays[0].len() || arrays[3].len() != arrays[0].len() {
        return Err(bad("optimizer moments do not match the parameters"));
    }
    let rng_word_pos = m.rng_word_pos.parse().map_err(|_| bad("bad RNG position"))?;
    Ok(Checkpoint {
        task: m.task,
        config: m.config,
        params,
        best_params,
        adam: AdamState {
            m: std::mem::take(&mut arrays[2]),
            v: std::mem::take(&mut arrays[3]),
            step: m.adam_step,
            lr: m.lr,
        },
        epoch: m.epoch,
        history: m.history,
        schedule: m.schedule,
        rng_word_pos,
    })
}

/// Writes through a temporary file so a crash never leaves a partial
/// checkpoint behind.
pub fn save_checkpoint(path: &Path, c: &Checkpoint) -> Result<()> {
    let bytes = to_bytes(c)?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    from_bytes(&std::fs::read(path)?)
}
