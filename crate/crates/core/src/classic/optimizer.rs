use ndarray::Array2;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::steps::{lms_step, nlms_step, rls_step, rmsprop_step, RlsBin, RlsStatus};
use crate::error::{config_err, Result};
use crate::signals::{Convention, FrameSignals, TapLayout};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassicKind {
    Lms,
    Nlms,
    Rmsprop,
    Rls,
}

impl std::str::FromStr for ClassicKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lms" => Ok(Self::Lms),
            "nlms" => Ok(Self::Nlms),
            "rmsprop" => Ok(Self::Rmsprop),
            "rls" => Ok(Self::Rls),
            other => Err(config_err(format!("unknown optimizer kind '{other}'"))),
        }
    }
}

impl std::fmt::Display for ClassicKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::Lms => "lms",
            Self::Nlms => "nlms",
            Self::Rmsprop => "rmsprop",
            Self::Rls => "rls",
        };
        f.write_str(s)
    }
}

/// Hyperparameters of a classical optimizer. Unused fields are ignored by
/// the kinds that do not need them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassicConfig {
    pub kind: ClassicKind,
    /// λ
    pub step_size: f64,
    /// γ
    pub forget: f64,
    /// δ, RLS precision initialization `P = δ⁻¹ I`
    pub delta: f64,
}

impl ClassicConfig {
    pub fn new(kind: ClassicKind) -> Self {
        Self {
            kind,
            step_size: 0.1,
            forget: 0.99,
            delta: 1e-2,
        }
    }

    pub fn with_step_size(mut self, v: f64) -> Self {
        self.step_size = v;
        self
    }

    pub fn with_forget(mut self, v: f64) -> Self {
        self.forget = v;
        self
    }

    pub fn with_delta(mut self, v: f64) -> Self {
        self.delta = v;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.forget > 0.0 && self.forget <= 1.0) {
            return Err(config_err("forgetting factor must lie in (0, 1]"));
        }
        if self.kind != ClassicKind::Rls && !(self.step_size > 0.0) {
            return Err(config_err("step size must be positive"));
        }
        if self.kind == ClassicKind::Rls && !(self.delta > 0.0) {
            return Err(config_err("RLS delta must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum State {
    Lms,
    Nlms(Vec<f64>),
    Rmsprop(Array2<f64>),
    /// One precision matrix per (bin, output).
    Rls(Vec<RlsBin>),
}

/// A classical optimizer running over all bins of a filter.
#[derive(Debug, Clone)]
pub struct ClassicOptimizer {
    pub config: ClassicConfig,
    layout: TapLayout,
    bins: usize,
    state: State,
    divergences: usize,
}

impl ClassicOptimizer {
    pub fn new(config: ClassicConfig, layout: TapLayout, bins: usize) -> Result<Self> {
        config.validate()?;
        let taps = layout.taps();
        let state = match config.kind {
            ClassicKind::Lms => State::Lms,
            ClassicKind::Nlms => State::Nlms(vec![0.0; bins]),
            ClassicKind::Rmsprop => State::Rmsprop(Array2::zeros((bins, taps))),
            ClassicKind::Rls => {
                let mut v = Vec::with_capacity(bins * layout.outputs);
                for _ in 0..bins {
                    for o in 0..layout.outputs {
                        v.push(RlsBin::new(layout.taps_of(o).len(), config.delta));
                    }
                }
                State::Rls(v)
            }
        };
        Ok(Self {
            config,
            layout,
            bins,
            state,
            divergences: 0,
        })
    }

    /// Number of RLS resets triggered so far.
    pub fn divergences(&self) -> usize {
        self.divergences
    }

    pub fn step(&mut self, sig: &FrameSignals) -> Array2<Complex64> {
        let taps = self.layout.taps();
        let mut delta = Array2::zeros((self.bins, taps));
        let cfg = self.config;
        match &mut self.state {
            State::Lms => {
                for k in 0..self.bins {
                    let g = sig.grad.row(k).to_vec();
                    for (p, v) in lms_step(&g, cfg.step_size).into_iter().enumerate() {
                        delta[[k, p]] = v;
                    }
                }
            }
            State::Nlms(power) => {
                for k in 0..self.bins {
                    let g = sig.grad.row(k).to_vec();
                    let u = sig.x.row(k).to_vec();
                    let d = nlms_step(&g, &u, cfg.step_size, cfg.forget, &mut power[k]);
                    for (p, v) in d.into_iter().enumerate() {
                        delta[[k, p]] = v;
                    }
                }
            }
            State::Rmsprop(nu) => {
                for k in 0..self.bins {
                    let g = sig.grad.row(k).to_vec();
                    let mut row = nu.row(k).to_vec();
                    let d = rmsprop_step(&g, cfg.step_size, cfg.forget, &mut row);
                    for p in 0..taps {
                        nu[[k, p]] = row[p];
                        delta[[k, p]] = d[p];
                    }
                }
            }
            State::Rls(bins) => {
                let outputs = self.layout.outputs;
                for k in 0..self.bins {
                    let scale = sig.weight[k].sqrt();
                    for o in 0..outputs {
                        let idx = self.layout.taps_of(o);
                        let x: Vec<Complex64> = idx.iter().map(|&p| sig.x[[k, p]] * scale).collect();
                        let d = sig.d[[k, o]] * scale;
                        let y = sig.y[[k, o]] * scale;
                        let (upd, status) = rls_step(&x, d, y, cfg.forget, &mut bins[k * outputs + o]);
                        if status == RlsStatus::Diverged {
                            self.divergences += 1;
                        }
                        for (i, &p) in idx.iter().enumerate() {
                            delta[[k, p]] = match self.layout.convention {
                                Convention::Hermitian => upd[i],
                                Convention::Plain => upd[i].conj(),
                            };
                        }
                    }
                }
            }
        }
        delta
    }
}
