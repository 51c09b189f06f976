//! Learned optimizer: a complex recurrent network applied per frequency bin
//! with weights shared across bins.

pub mod cmat;
pub mod features;
pub mod net;

use ndarray::Array2;
use rustfft::num_complex::Complex64;

pub use cmat::CMat;
pub use features::{
    assemble_features, raw_features, raw_features_backward, whiten, whiten_backward, FeatureGrads,
    FeatureSet,
};
pub use net::{
    gru_cell, init_params, net_backward, net_forward, optimizer_forward, split_relu, GruCache,
    GruParams, NetCache, NetShape, NetState, Params, TENSOR_NAMES,
};

use crate::error::{shape_err, Result};
use crate::signals::{FrameSignals, TapLayout, UpdateRule};

/// A trained network plus its per-bin state, usable wherever a classical
/// optimizer is.
#[derive(Debug, Clone)]
pub struct LearnedOptimizer {
    pub params: std::sync::Arc<Params>,
    pub features: FeatureSet,
    layout: TapLayout,
    state: NetState,
}

impl LearnedOptimizer {
    pub fn new(
        params: std::sync::Arc<Params>,
        features: FeatureSet,
        layout: TapLayout,
        bins: usize,
    ) -> Result<Self> {
        let s = params.shape;
        if s.taps != layout.taps() || s.features != features.width(layout.taps()) {
            return Err(shape_err(format!(
                "network shape {s:?} does not fit {} taps with {features:?} features",
                layout.taps()
            )));
        }
        Ok(Self {
            state: NetState::zeros(bins, s.hidden),
            params,
            features,
            layout,
        })
    }

    pub fn state(&self) -> &NetState {
        &self.state
    }
}

impl UpdateRule for LearnedOptimizer {
    fn update(&mut self, sig: &FrameSignals) -> Result<Array2<Complex64>> {
        let xi = assemble_features(sig, &self.layout, self.features)?;
        let (delta, next) = optimizer_forward(&self.params, &xi, &self.state)?;
        self.state = next;
        Ok(delta)
    }
}
