//! Adam over the flattened real parameters, with global-norm clipping.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

/// Moments for every real scalar (complex weights count twice), the step
/// counter and the current learning rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
}

impl AdamState {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            lr,
        }
    }
}

/// Scales `g` so its L2 norm is at most `c`. Returns the norm before clipping.
pub fn clip_gradient(g: &mut [f64], c: f64) -> f64 {
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > c {
        let s = c / norm;
        g.iter_mut().for_each(|v| *v *= s);
    }
    norm
}

/// One bias-corrected Adam step on `phi` in place.
pub fn adam_step(phi: &mut [f64], grad: &[f64], st: &mut AdamState, cfg: &AdamConfig) {
    debug_assert_eq!(phi.len(), grad.len());
    st.step += 1;
    let t = st.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..phi.len() {
        let g = grad[i];
        st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * g;
        st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * g * g;
        let mh = st.m[i] / c1;
        let vh = st.v[i] / c2;
        phi[i] -= st.lr * mh / (vh.sqrt() + cfg.eps);
    }
}
