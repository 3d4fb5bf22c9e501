use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tape::ParamGrads;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmsPropConfig {
    pub lr: f64,
    pub alpha: f64,
    pub eps: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self { lr: 0.0005, alpha: 0.99, eps: 1e-5, clip_norm: Some(10.0) }
    }
}

/// RMSProp without momentum: `v ← αv + (1-α)g²`, `θ ← θ - lr·g/(√v + ε)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp {
    pub config: RmsPropConfig,
    square_avg: Vec<Tensor>,
}

impl RmsProp {
    pub fn new(config: RmsPropConfig, store: &ParamStore) -> Self {
        let square_avg = store.iter().map(|(_, t)| Tensor::zeros(t.rows(), t.cols())).collect();
        Self { config, square_avg }
    }

    pub fn moments(&self) -> &[Tensor] {
        &self.square_avg
    }

    pub fn set_moments(&mut self, moments: Vec<Tensor>) -> Result<()> {
        if moments.len() != self.square_avg.len()
            || moments.iter().zip(&self.square_avg).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::CheckpointShape("optimizer moments do not match parameters".into()));
        }
        self.square_avg = moments;
        Ok(())
    }

    /// Applies one update in place and returns the pre-clipping gradient norm.
    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads) -> Result<f64> {
        if !grads.all_finite() {
            return Err(Error::NonFinite("optimizer gradients".into()));
        }
        let norm = grads.global_norm();
        let scale = match self.config.clip_norm {
            Some(max) if norm > max => max / (norm + 1e-6),
            _ => 1.0,
        };
        let RmsPropConfig { lr, alpha, eps, .. } = self.config;
        for (id, sq) in store.ids().zip(self.square_avg.iter_mut()) {
            let g = grads.get(id);
            let p = store.get_mut(id);
            for ((pv, sv), &gv) in p.data_mut().iter_mut().zip(sq.data_mut()).zip(g.data()) {
                let gv = gv * scale;
                *sv = alpha * *sv + (1.0 - alpha) * gv * gv;
                *pv -= lr * gv / (sv.sqrt() + eps);
            }
        }
        if store.iter().any(|(_, t)| !t.all_finite()) {
            return Err(Error::NonFinite("optimizer update".into()));
        }
        Ok(norm)
    }
}
