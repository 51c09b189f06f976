use serde::{Deserialize, Serialize};

use crate::dsp::{FrameSpec, WindowKind};
use crate::error::{config_err, Result};
use crate::signals::{Convention, TapLayout};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    #[default]
    SystemId,
    Aec,
    Eq,
    Wpe,
    Gsc,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::SystemId => "system_id",
            Self::Aec => "aec",
            Self::Eq => "eq",
            Self::Wpe => "wpe",
            Self::Gsc => "gsc",
        }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TaskKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "system_id" | "sysid" => Ok(Self::SystemId),
            "aec" => Ok(Self::Aec),
            "eq" => Ok(Self::Eq),
            "wpe" => Ok(Self::Wpe),
            "gsc" => Ok(Self::Gsc),
            other => Err(config_err(format!("unknown task '{other}'"))),
        }
    }
}

/// How a task's filter produces its output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Filtering {
    /// Overlap-save with `y = sum x w`, optionally anti-aliased.
    Ols { constrained: bool },
    /// Overlap-add with `y = sum x conj(w)` on sqrt-hann frames.
    Ola,
}

/// Everything that fixes a task's filter structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub frame: FrameSpec,
    /// Buffered frames per channel (B).
    pub depth: usize,
    /// Prediction delay in frames (D), dereverberation only.
    pub delay: usize,
    /// Anti-aliasing constraint for overlap-save tasks.
    pub constrained: bool,
    /// Source covariance forgetting factor for beamforming.
    pub gsc_forget: f64,
    /// Diagonal loading of the source covariance for beamforming.
    pub gsc_reg: f64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self::default_for(TaskKind::SystemId)
    }
}

impl TaskSpec {
    pub fn default_for(kind: TaskKind) -> Self {
        let frame = |n, r, window, m| FrameSpec {
            window_len: n,
            hop: r,
            window,
            channels: m,
        };
        let (fs, depth, delay) = match kind {
            TaskKind::SystemId | TaskKind::Aec => (frame(2048, 1024, WindowKind::Rectangular, 1), 1, 0),
            TaskKind::Eq => (frame(1024, 512, WindowKind::Rectangular, 1), 1, 0),
            TaskKind::Wpe => (frame(512, 256, WindowKind::Hann, 1), 5, 2),
            TaskKind::Gsc => (frame(1024, 512, WindowKind::Hann, 6), 1, 0),
        };
        Self {
            kind,
            frame: fs,
            depth,
            delay,
            constrained: true,
            gsc_forget: 0.99,
            gsc_reg: 1e-4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.frame.validate()?;
        if self.depth == 0 {
            return Err(config_err("buffer depth B must be at least 1"));
        }
        match self.kind {
            TaskKind::Wpe | TaskKind::Gsc => {
                if self.frame.window != WindowKind::Hann {
                    return Err(config_err("dereverberation and beamforming use hann overlap-add"));
                }
            }
            _ => {}
        }
        if self.kind == TaskKind::Gsc {
            if self.frame.channels < 2 {
                return Err(config_err("beamforming needs at least two microphones"));
            }
            if self.depth != 1 {
                return Err(config_err("beamforming uses a single-frame filter (B = 1)"));
            }
            if !(self.gsc_forget > 0.0 && self.gsc_forget <= 1.0) || self.gsc_reg < 0.0 {
                return Err(config_err("invalid beamformer covariance settings"));
            }
        }
        if self.kind == TaskKind::Wpe && self.delay == 0 {
            return Err(config_err("dereverberation needs a prediction delay D >= 1"));
        }
        Ok(())
    }

    pub fn filtering(&self) -> Filtering {
        match self.kind {
            TaskKind::Wpe | TaskKind::Gsc => Filtering::Ola,
            _ => Filtering::Ols {
                constrained: self.constrained,
            },
        }
    }

    pub fn layout(&self) -> TapLayout {
        let m = self.frame.channels;
        match self.kind {
            TaskKind::Wpe => TapLayout::single(m * self.depth, Convention::Hermitian),
            TaskKind::Gsc => TapLayout::single(m - 1, Convention::Hermitian),
            _ => TapLayout::diagonal(m, self.depth, Convention::Plain),
        }
    }

    pub fn outputs(&self) -> usize {
        self.layout().outputs
    }

    /// Latency of the filter output relative to its input, in samples.
    pub fn latency(&self) -> usize {
        self.frame.window_len - self.frame.hop
    }
}
