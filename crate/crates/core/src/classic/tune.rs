//! Exhaustive grid search over optimizer hyperparameters.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::optimizer::{ClassicConfig, ClassicKind};
use crate::error::{config_err, Result};

/// Candidate values per hyperparameter. Only the axes an optimizer kind uses
/// are expanded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub kind: ClassicKind,
    pub step_sizes: Vec<f64>,
    pub forgets: Vec<f64>,
    pub deltas: Vec<f64>,
}

impl Grid {
    /// A default search grid for each optimizer kind.
    pub fn default_for(kind: ClassicKind) -> Self {
        let mut g = Self {
            kind,
            step_sizes: vec![1e-4, 1e-3, 1e-2, 0.05, 0.1, 0.5, 1.0],
            forgets: vec![0.9, 0.99, 0.999],
            deltas: vec![1e-3, 1e-2, 1e-1, 1.0],
        };
        match kind {
            ClassicKind::Lms => g.step_sizes = vec![1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 0.1, 0.3, 1.0],
            ClassicKind::Nlms => g.step_sizes = vec![0.01, 0.05, 0.1, 0.25, 0.5, 1.0],
            ClassicKind::Rmsprop => g.step_sizes = vec![1e-3, 3e-3, 1e-2, 3e-2, 0.1],
            ClassicKind::Rls => {
                g.forgets = vec![0.9, 0.99, 0.999, 1.0];
            }
        }
        g
    }

    pub fn expand(&self) -> Vec<ClassicConfig> {
        let base = ClassicConfig::new(self.kind);
        let mut out = Vec::new();
        match self.kind {
            ClassicKind::Lms => {
                for &l in &self.step_sizes {
                    out.push(base.with_step_size(l));
                }
            }
            ClassicKind::Nlms | ClassicKind::Rmsprop => {
                for &l in &self.step_sizes {
                    for &g in &self.forgets {
                        out.push(base.with_step_size(l).with_forget(g));
                    }
                }
            }
            ClassicKind::Rls => {
                for &g in &self.forgets {
                    for &d in &self.deltas {
                        out.push(base.with_forget(g).with_delta(d));
                    }
                }
            }
        }
        out
    }
}

/// Result for one grid point. `mean` is `-inf` when any scene produced a
/// non-finite metric.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuneEntry<C> {
    pub config: C,
    pub per_scene: Vec<f64>,
    pub mean: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuneReport<C> {
    pub entries: Vec<TuneEntry<C>>,
    pub best: usize,
}

impl<C: Clone + Serialize> TuneReport<C> {
    pub fn best_config(&self) -> &C {
        &self.entries[self.best].config
    }

    /// One JSON object per grid point.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for e in &self.entries {
            let line = serde_json::json!({
                "config": e.config,
                "per_scene": e.per_scene.iter().map(|v| if v.is_finite() { Some(*v) } else { None }).collect::<Vec<_>>(),
                "mean": if e.mean.is_finite() { Some(e.mean) } else { None },
            });
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

/// Evaluates every grid point and picks the one with the highest mean metric.
/// Ties go to the earliest point.
pub fn grid_search<C, F>(grid: &[C], mut evaluate: F) -> Result<TuneReport<C>>
where
    C: Clone,
    F: FnMut(&C) -> Vec<f64>,
{
    if grid.is_empty() {
        return Err(config_err("empty tuning grid"));
    }
    let mut entries = Vec::with_capacity(grid.len());
    let mut best = 0;
    let mut best_mean = f64::NEG_INFINITY;
    for (i, c) in grid.iter().enumerate() {
        let per_scene = evaluate(c);
        let mean = if per_scene.is_empty() || per_scene.iter().any(|v| !v.is_finite()) {
            f64::NEG_INFINITY
        } else {
            per_scene.iter().sum::<f64>() / per_scene.len() as f64
        };
        if i == 0 || mean > best_mean {
            best_mean = mean;
            best = i;
        }
        entries.push(TuneEntry {
            config: c.clone(),
            per_scene,
            mean,
        });
    }
    Ok(TuneReport { entries, best })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_wins() {
        let r = grid_search(&[7], |_| vec![1.0]).unwrap();
        assert_eq!(*r.best_config(), 7);
    }

    #[test]
    fn empty_grid_is_error() {
        let grid: [u8; 0] = [];
        assert!(grid_search(&grid, |_| vec![1.0]).is_err());
    }

    #[test]
    fn divergent_point_loses() {
        let r = grid_search(&[1, 2], |c| if *c == 1 { vec![f64::NAN] } else { vec![-50.0] }).unwrap();
        assert_eq!(*r.best_config(), 2);
    }

    #[test]
    fn ties_keep_first() {
        let r = grid_search(&[1, 2, 3], |_| vec![4.0]).unwrap();
        assert_eq!(r.best, 0);
    }

    #[test]
    fn grid_expansion_counts() {
        let g = Grid {
            kind: ClassicKind::Nlms,
            step_sizes: vec![0.1, 0.5],
            forgets: vec![0.9, 0.99, 0.999],
            deltas: vec![1.0],
        };
        assert_eq!(g.expand().len(), 6);
        let g = Grid { kind: ClassicKind::Lms, ..g };
        assert_eq!(g.expand().len(), 2);
    }

    #[test]
    fn report_lines_parse() {
        let r = grid_search(&[1.0f64, 2.0], |c| vec![*c, f64::NAN]).unwrap();
        let mut buf = Vec::new();
        r.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0]["mean"].is_null());
    }
}
