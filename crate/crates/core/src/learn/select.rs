//! Masked greedy and epsilon-greedy action choice.

use rand::Rng;

use crate::nn::Tensor;

/// Utility assigned to unavailable actions before any max or argmax.
pub const UNAVAILABLE: f64 = -1e10;

/// Index of the largest available entry; ties go to the lowest index.
/// Falls back to 0 (no-op) when nothing is available.
pub fn masked_argmax(values: &[f64], avail: &[f64]) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, (&v, &m)) in values.iter().zip(avail).enumerate() {
        let v = if m > 0.0 { v } else { UNAVAILABLE };
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

pub fn masked_max(values: &[f64], avail: &[f64]) -> f64 {
    values.iter().zip(avail).map(|(&v, &m)| if m > 0.0 { v } else { UNAVAILABLE }).fold(f64::NEG_INFINITY, f64::max)
}

/// Per-row epsilon-greedy choice. `utilities` and `avail` are `n x A`.
/// With probability `epsilon` a row picks uniformly among its available
/// actions, otherwise its masked argmax.
pub fn select_actions(utilities: &Tensor, avail: &Tensor, epsilon: f64, rng: &mut impl Rng) -> Vec<usize> {
    (0..utilities.rows())
        .map(|r| {
            let m = avail.row(r);
            if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
                let choices: Vec<usize> = (0..m.len()).filter(|&i| m[i] > 0.0).collect();
                if choices.is_empty() {
                    0
                } else {
                    choices[rng.gen_range(0..choices.len())]
                }
            } else {
                masked_argmax(utilities.row(r), m)
            }
        })
        .collect()
}
