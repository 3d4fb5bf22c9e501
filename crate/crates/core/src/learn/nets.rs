//! Network components shared by the three learners.

use rand::Rng;

use crate::error::Result;
use crate::nn::{Dense, GruCell, HyperLinear, ParamId, ParamStore, Tape, Tensor, Var};

/// Output layer of an agent network.
#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    Plain(Dense),
    /// Weights generated from the episode latent `z`; bias is a plain parameter.
    Latent { hyper: Dense, bias: ParamId, z_dim: usize },
}

/// Per-agent recurrent utility network: dense, ReLU, GRU, head.
/// Parameters are shared by every agent of a team; rows are agents.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentNet {
    pub fc1: Dense,
    pub gru: GruCell,
    pub head: Head,
    pub input_dim: usize,
    pub hidden: usize,
    pub outputs: usize,
}

impl AgentNet {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden: usize,
        outputs: usize,
        latent: Option<usize>,
        rng: &mut impl Rng,
    ) -> Self {
        let fc1 = Dense::new(store, &format!("{name}.fc1"), input_dim, hidden, rng);
        let gru = GruCell::new(store, &format!("{name}.gru"), hidden, hidden, rng);
        let head = match latent {
            None => Head::Plain(Dense::new(store, &format!("{name}.head"), hidden, outputs, rng)),
            Some(z_dim) => {
                let bound = 1.0 / (hidden as f64).sqrt();
                let hyper = Dense::with_bound(store, &format!("{name}.zhyper"), z_dim, hidden * outputs, bound, rng);
                let bias = store.add_uniform(format!("{name}.head_bias"), 1, outputs, bound, rng);
                Head::Latent { hyper, bias, z_dim }
            }
        };
        Self { fc1, gru, head, input_dim, hidden, outputs }
    }

    pub fn initial_hidden(&self, rows: usize) -> Tensor {
        Tensor::zeros(rows, self.hidden)
    }

    /// One recorded step. `z` holds one latent row per input row.
    pub fn step(&self, tape: &mut Tape, store: &ParamStore, x: Var, h: Var, z: Option<Var>) -> Result<(Var, Var)> {
        let a = self.fc1.forward(tape, store, x)?;
        let a = tape.relu(a)?;
        let h = self.gru.forward(tape, store, a, h)?;
        let q = match &self.head {
            Head::Plain(d) => d.forward(tape, store, h)?,
            Head::Latent { hyper, bias, .. } => {
                let z = z.ok_or_else(|| crate::Error::Shape("latent head needs z".into()))?;
                let w = hyper.forward(tape, store, z)?;
                let q = tape.row_bmm(h, w, self.outputs)?;
                let b = tape.param(store, *bias);
                tape.add_row(q, b)?
            }
        };
        Ok((q, h))
    }

    /// Unrecorded step used while acting.
    pub fn infer(&self, store: &ParamStore, x: &Tensor, h: &Tensor, z: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
        let a = self.fc1.infer(store, x)?.map(|v| v.max(0.0));
        let h = self.gru.infer(store, &a, h)?;
        let q = match &self.head {
            Head::Plain(d) => d.infer(store, &h)?,
            Head::Latent { hyper, bias, .. } => {
                let z = z.ok_or_else(|| crate::Error::Shape("latent head needs z".into()))?;
                let w = hyper.infer(store, z)?;
                let k = self.outputs;
                let b = store.get(*bias);
                let mut q = Tensor::zeros(h.rows(), k);
                for r in 0..h.rows() {
                    let (hr, wr) = (h.row(r), w.row(r));
                    let qr = q.row_mut(r);
                    for (i, &hi) in hr.iter().enumerate() {
                        for (o, &wij) in qr.iter_mut().zip(&wr[i * k..(i + 1) * k]) {
                            *o += hi * wij;
                        }
                    }
                    for (o, &bj) in qr.iter_mut().zip(b.data()) {
                        *o += bj;
                    }
                }
                q
            }
        };
        Ok((q, h))
    }
}

/// Monotonic two-layer mixer conditioned on the state:
/// `y = elu(q |W1(s)| + b1(s)) |w2(s)| + V(s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixer {
    pub layer1: HyperLinear,
    pub w2: Dense,
    pub v1: Dense,
    pub v2: Dense,
    pub n_agents: usize,
    pub embed: usize,
}

impl Mixer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        n_agents: usize,
        state_dim: usize,
        embed: usize,
        hyper_init: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let layer1 = HyperLinear::new(store, &format!("{name}.l1"), state_dim, n_agents, embed, true, hyper_init, rng);
        let w2 = Dense::with_bound(store, &format!("{name}.w2"), state_dim, embed, hyper_init, rng);
        let v1 = Dense::new(store, &format!("{name}.v1"), state_dim, embed, rng);
        let v2 = Dense::new(store, &format!("{name}.v2"), embed, 1, rng);
        Self { layer1, w2, v1, v2, n_agents, embed }
    }

    /// `qs` is `m x n_agents`, `states` is `m x state_dim`; returns `m x 1`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, qs: Var, states: Var) -> Result<Var> {
        let hidden = self.layer1.forward(tape, store, states, qs)?;
        let hidden = tape.elu(hidden)?;
        let w2 = self.w2.forward(tape, store, states)?;
        let w2 = tape.abs(w2)?;
        let y = tape.row_bmm(hidden, w2, 1)?;
        let v = self.v1.forward(tape, store, states)?;
        let v = tape.relu(v)?;
        let v = self.v2.forward(tape, store, v)?;
        tape.add(y, v)
    }

    /// Unrecorded forward; values equal those of [`Mixer::forward`].
    pub fn infer(&self, store: &ParamStore, qs: &Tensor, states: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let q = tape.constant(qs.clone())?;
        let s = tape.constant(states.clone())?;
        let y = self.forward(&mut tape, store, q, s)?;
        Ok(tape.value(y).clone())
    }
}

/// Two-layer classifier used for the latent policy and the discriminator.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub l1: Dense,
    pub l2: Dense,
}

impl Classifier {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, hidden: usize, classes: usize, rng: &mut impl Rng) -> Self {
        Self {
            l1: Dense::new(store, &format!("{name}.l1"), in_dim, hidden, rng),
            l2: Dense::new(store, &format!("{name}.l2"), hidden, classes, rng),
        }
    }

    pub fn logits(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.l1.forward(tape, store, x)?;
        let h = tape.relu(h)?;
        self.l2.forward(tape, store, h)
    }

    pub fn infer(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let h = self.l1.infer(store, x)?.map(|v| v.max(0.0));
        self.l2.infer(store, &h)
    }
}
