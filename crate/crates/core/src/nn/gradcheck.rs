//! Central finite-difference checks of tape gradients.

use rand::Rng;

use super::params::ParamStore;
use super::tape::ParamGrads;
use crate::error::Result;

/// Gradient magnitudes below this are compared absolutely rather than relatively.
pub const REL_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
}

/// Compares analytic gradients with central differences of step `eps` on up
/// to `samples` randomly chosen scalars (all of them when fewer exist).
/// `loss` returns the loss value and its gradients for a given store.
pub fn check_gradients(
    store: &ParamStore,
    loss: impl Fn(&ParamStore) -> Result<(f64, ParamGrads)>,
    samples: usize,
    eps: f64,
    rng: &mut impl Rng,
) -> Result<GradCheck> {
    let (_, grads) = loss(store)?;
    let total = store.num_scalars();
    let picks: Vec<usize> = if total <= samples {
        (0..total).collect()
    } else {
        rand::seq::index::sample(rng, total, samples).into_vec()
    };
    let mut probe = store.clone();
    let mut worst = 0.0f64;
    for &flat in &picks {
        let (id, off) = store.locate(flat);
        let orig = store.get(id).data()[off];
        probe.get_mut(id).data_mut()[off] = orig + eps;
        let (up, _) = loss(&probe)?;
        probe.get_mut(id).data_mut()[off] = orig - eps;
        let (down, _) = loss(&probe)?;
        probe.get_mut(id).data_mut()[off] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let analytic = grads.get(id).data()[off];
        let denom = analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        worst = worst.max((analytic - numeric).abs() / denom);
    }
    Ok(GradCheck { max_rel_error: worst, checked: picks.len() })
}
