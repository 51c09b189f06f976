//! Run configuration: TOML file merged over per-task defaults, then command
//! line flags on top. The resolved config is written into every output
//! directory so a run can be repeated from it.

use std::path::{Path, PathBuf};

use afkit::classic::{ClassicConfig, ClassicKind, Grid};
use afkit::scenes::{FoldCounts, SceneConfig};
use afkit::tasks::{TaskKind, TaskSpec};
use afkit::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const RUN_CONFIG_FILE: &str = "run_config.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerChoice {
    Lms,
    Nlms,
    Rmsprop,
    Rls,
    Meta,
}

impl OptimizerChoice {
    pub fn classic(self) -> Option<ClassicKind> {
        match self {
            Self::Lms => Some(ClassicKind::Lms),
            Self::Nlms => Some(ClassicKind::Nlms),
            Self::Rmsprop => Some(ClassicKind::Rmsprop),
            Self::Rls => Some(ClassicKind::Rls),
            Self::Meta => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Lms => "lms",
            Self::Nlms => "nlms",
            Self::Rmsprop => "rmsprop",
            Self::Rls => "rls",
            Self::Meta => "meta",
        }
    }
}

impl std::str::FromStr for OptimizerChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "lms" => Ok(Self::Lms),
            "nlms" => Ok(Self::Nlms),
            "rmsprop" => Ok(Self::Rmsprop),
            "rls" => Ok(Self::Rls),
            "meta" => Ok(Self::Meta),
            other => Err(format!("unknown optimizer kind '{other}' (lms, nlms, rmsprop, rls, meta)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskKind,
    pub optimizer: OptimizerChoice,
    /// Applied to both scene generation and training when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub threads: usize,
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    pub spec: TaskSpec,
    pub train: TrainConfig,
    pub scenes: SceneConfig,
    pub counts: FoldCounts,
    /// Hyperparameters of a classical optimizer; defaults when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classic: Option<ClassicConfig>,
    /// Tuning grid; the per-kind default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Grid>,
}

impl RunConfig {
    pub fn defaults(task: TaskKind) -> Self {
        Self {
            task,
            optimizer: OptimizerChoice::Nlms,
            seed: None,
            threads: 1,
            output_dir: PathBuf::from("out"),
            checkpoint: None,
            spec: TaskSpec::default_for(task),
            train: TrainConfig::default(),
            scenes: SceneConfig::for_task(task),
            counts: FoldCounts {
                train: 160,
                val: 20,
                test: 20,
            },
            classic: None,
            grid: None,
        }
    }

    /// Hyperparameters for the selected classical optimizer.
    pub fn classic_config(&self) -> CliResult<ClassicConfig> {
        let kind = self
            .optimizer
            .classic()
            .ok_or_else(|| CliError::Config("the learned optimizer has no classical settings".into()))?;
        match self.classic {
            Some(c) if c.kind != kind => Err(CliError::Config(format!(
                "classical settings are for {}, optimizer is {}",
                c.kind, kind
            ))),
            Some(c) => Ok(c),
            None => Ok(ClassicConfig::new(kind)),
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.spec.kind != self.task || self.scenes.task != self.task {
            return Err(CliError::Config(format!(
                "task is {} but spec/scenes are for {}/{}",
                self.task, self.spec.kind, self.scenes.task
            )));
        }
        if self.threads == 0 {
            return Err(CliError::Config("threads must be at least 1".into()));
        }
        self.spec.validate()?;
        self.scenes.validate()?;
        self.train.validate()?;
        if self.spec.frame.channels != self.scenes.channels {
            return Err(CliError::Config(format!(
                "filter expects {} channels, scenes have {}",
                self.spec.frame.channels, self.scenes.channels
            )));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> CliResult<String> {
        Ok(toml::to_string(self)?)
    }

    /// Writes the resolved config into `dir`.
    pub fn save_into(&self, dir: &Path) -> CliResult<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(RUN_CONFIG_FILE), self.to_toml()?)?;
        Ok(())
    }
}

/// Command-line values that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub task: Option<TaskKind>,
    pub optimizer: Option<OptimizerChoice>,
    pub output_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

/// Recursively overlays `top` onto `base`; tables merge, everything else
/// replaces.
fn merge(base: &mut toml::Value, top: toml::Value) {
    match (base, top) {
        (toml::Value::Table(b), toml::Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Resolves the configuration: task defaults, then the file, then flags.
pub fn resolve(text: Option<&str>, ov: &Overrides) -> CliResult<RunConfig> {
    let file: toml::Value = match text {
        Some(t) => toml::from_str(t)?,
        None => toml::Value::Table(Default::default()),
    };
    let file_task = match file.get("task") {
        Some(v) => Some(
            v.as_str()
                .ok_or_else(|| CliError::Config("task must be a string".into()))?
                .parse::<TaskKind>()?,
        ),
        None => None,
    };
    let task = ov.task.or(file_task).unwrap_or_default();
    let mut value = toml::Value::try_from(RunConfig::defaults(task))?;
    merge(&mut value, file);
    let mut cfg: RunConfig = value.try_into()?;
    cfg.task = task;
    if let Some(o) = ov.optimizer {
        cfg.optimizer = o;
    }
    if let Some(p) = &ov.output_dir {
        cfg.output_dir = p.clone();
    }
    if let Some(p) = &ov.checkpoint {
        cfg.checkpoint = Some(p.clone());
    }
    if let Some(s) = ov.seed {
        cfg.seed = Some(s);
    }
    if let Some(t) = ov.threads {
        cfg.threads = t;
    }
    if let Some(s) = cfg.seed {
        cfg.scenes.seed = s;
        cfg.train.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load(path: Option<&Path>, ov: &Overrides) -> CliResult<RunConfig> {
    let text = match path {
        Some(p) => Some(
            std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("reading {}: {e}", p.display())))?,
        ),
        None => None,
    };
    resolve(text.as_deref(), ov)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_task() {
        let cfg = resolve(Some("task = \"wpe\""), &Overrides::default()).unwrap();
        assert_eq!(cfg.spec, TaskSpec::default_for(TaskKind::Wpe));
        assert_eq!(cfg.scenes.task, TaskKind::Wpe);
    }

    #[test]
    fn file_then_flags() {
        let text = "task = \"aec\"\noptimizer = \"rls\"\n[train]\nunroll = 8\n[spec.frame]\nwindow_len = 1024\nhop = 512\n";
        let ov = Overrides {
            optimizer: Some(OptimizerChoice::Lms),
            seed: Some(9),
            ..Default::default()
        };
        let cfg = resolve(Some(text), &ov).unwrap();
        assert_eq!(cfg.optimizer, OptimizerChoice::Lms);
        assert_eq!(cfg.train.unroll, 8);
        assert_eq!(cfg.train.batch, 64);
        assert_eq!(cfg.spec.frame.window_len, 1024);
        assert_eq!((cfg.scenes.seed, cfg.train.seed), (9, 9));
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = resolve(Some("task = \"gsc\""), &Overrides::default()).unwrap();
        let again = resolve(Some(&cfg.to_toml().unwrap()), &Overrides::default()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn unknown_keys_are_errors() {
        assert!(resolve(Some("colour = 3"), &Overrides::default()).is_err());
        assert!(resolve(Some("[train]\nunrol = 3"), &Overrides::default()).is_err());
    }

    #[test]
    fn mismatched_classic_settings() {
        let text = "optimizer = \"lms\"\n[classic]\nkind = \"rls\"\nstep_size = 0.1\nforget = 0.99\ndelta = 0.01\n";
        let cfg = resolve(Some(text), &Overrides::default()).unwrap();
        assert!(cfg.classic_config().is_err());
    }
}
