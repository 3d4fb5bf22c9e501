use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{sigmoid, Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Fully connected layer `y = x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    /// Weights and bias uniform in `±1/sqrt(in_dim)`.
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        Self::with_bound(store, name, in_dim, out_dim, bound, rng)
    }

    pub fn with_bound(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bound: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let w = store.add_uniform(format!("{name}.w"), in_dim, out_dim, bound, rng);
        let b = store.add_uniform(format!("{name}.b"), 1, out_dim, bound, rng);
        Self { w, b, in_dim, out_dim }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let xw = tape.matmul(x, w)?;
        tape.add_row(xw, b)
    }

    /// Same computation as [`Dense::forward`] without recording.
    pub fn infer(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let mut y = x.matmul(store.get(self.w))?;
        add_row(&mut y, store.get(self.b));
        Ok(y)
    }
}

fn add_row(t: &mut Tensor, row: &Tensor) {
    let c = t.cols();
    for chunk in t.data_mut().chunks_mut(c) {
        for (o, b) in chunk.iter_mut().zip(row.data()) {
            *o += b;
        }
    }
}

/// Gated recurrent cell with update and reset gates (gate order r, z, n).
#[derive(Debug, Clone, PartialEq)]
pub struct GruCell {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
    pub input_size: usize,
    pub hidden_size: usize,
}

impl GruCell {
    pub fn new(store: &mut ParamStore, name: &str, input_size: usize, hidden_size: usize, rng: &mut impl Rng) -> Self {
        let h3 = 3 * hidden_size;
        let bi = 1.0 / (input_size.max(1) as f64).sqrt();
        let bh = 1.0 / (hidden_size.max(1) as f64).sqrt();
        let w_ih = store.add_uniform(format!("{name}.w_ih"), input_size, h3, bi, rng);
        let w_hh = store.add_uniform(format!("{name}.w_hh"), hidden_size, h3, bh, rng);
        let b_ih = store.add_uniform(format!("{name}.b_ih"), 1, h3, bi, rng);
        let b_hh = store.add_uniform(format!("{name}.b_hh"), 1, h3, bh, rng);
        Self { w_ih, w_hh, b_ih, b_hh, input_size, hidden_size }
    }

    /// One step: `r = σ(x W_ir + b_ir + h W_hr + b_hr)`,
    /// `z = σ(x W_iz + b_iz + h W_hz + b_hz)`,
    /// `n = tanh(x W_in + b_in + r ⊙ (h W_hn + b_hn))`,
    /// `h' = (1 - z) ⊙ n + z ⊙ h`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, h: Var) -> Result<Var> {
        let w_ih = tape.param(store, self.w_ih);
        let w_hh = tape.param(store, self.w_hh);
        let b_ih = tape.param(store, self.b_ih);
        let b_hh = tape.param(store, self.b_hh);
        let gi = tape.matmul(x, w_ih)?;
        let gi = tape.add_row(gi, b_ih)?;
        let gh = tape.matmul(h, w_hh)?;
        let gh = tape.add_row(gh, b_hh)?;

        tape.gru_gates(gi, gh, h)
    }

    /// Same computation as [`GruCell::forward`] without recording.
    pub fn infer(&self, store: &ParamStore, x: &Tensor, h: &Tensor) -> Result<Tensor> {
        let hs = self.hidden_size;
        let mut gi = x.matmul(store.get(self.w_ih))?;
        add_row(&mut gi, store.get(self.b_ih));
        let mut gh = h.matmul(store.get(self.w_hh))?;
        add_row(&mut gh, store.get(self.b_hh));
        let mut out = Tensor::zeros(h.rows(), hs);
        for r in 0..h.rows() {
            let (gi, gh, hr) = (gi.row(r), gh.row(r), h.row(r));
            for (j, o) in out.row_mut(r).iter_mut().enumerate() {
                let rg = sigmoid(gi[j] + gh[j]);
                let zg = sigmoid(gi[hs + j] + gh[hs + j]);
                let n = (gi[2 * hs + j] + rg * gh[2 * hs + j]).tanh();
                *o = (1.0 - zg) * n + zg * hr[j];
            }
        }
        Ok(out)
    }
}

/// Linear map whose weights and offsets are generated per row from a context.
///
/// With `positive` set, the generated weights pass through an elementwise
/// absolute value, so the output is non-decreasing in every coordinate of the
/// main input. Offsets are never constrained.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperLinear {
    pub weights: Dense,
    pub offsets: Dense,
    pub in_dim: usize,
    pub out_dim: usize,
    pub positive: bool,
}

impl HyperLinear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        context_dim: usize,
        in_dim: usize,
        out_dim: usize,
        positive: bool,
        weight_init: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let weights = Dense::with_bound(store, &format!("{name}.hw"), context_dim, in_dim * out_dim, weight_init, rng);
        let offsets = Dense::new(store, &format!("{name}.hb"), context_dim, out_dim, rng);
        Self { weights, offsets, in_dim, out_dim, positive }
    }

    /// Generated weights, one `in_dim x out_dim` matrix per context row, flattened.
    pub fn effective_weights(&self, tape: &mut Tape, store: &ParamStore, context: Var) -> Result<Var> {
        let raw = self.weights.forward(tape, store, context)?;
        if self.positive {
            tape.abs(raw)
        } else {
            Ok(raw)
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, context: Var, main: Var) -> Result<Var> {
        let w = self.effective_weights(tape, store, context)?;
        let y = tape.row_bmm(main, w, self.out_dim)?;
        let b = self.offsets.forward(tape, store, context)?;
        tape.add(y, b)
    }
}
