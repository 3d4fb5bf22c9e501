//! Loss graphs. Rows of stacked per-step quantities are indexed `t * B + b`.
//!
//! Bootstrap targets are computed from target parameters without recording,
//! so gradients flow only into the online parameters.

use super::episode::Batch;
use super::nets::{AgentNet, Classifier, Mixer};
use super::select::masked_max;
use crate::error::Result;
use crate::nn::{ParamStore, Tape, Tensor, Var};

/// Network input at step `t`: observations, optionally followed by the
/// one-hot previous action.
pub fn agent_inputs(batch: &Batch, t: usize, with_last_action: bool) -> Tensor {
    let obs = &batch.obs[t];
    if !with_last_action {
        return obs.clone();
    }
    let last = batch.last_actions(t);
    let (od, a) = (obs.cols(), last.cols());
    let mut x = Tensor::zeros(obs.rows(), od + a);
    for r in 0..obs.rows() {
        let row = x.row_mut(r);
        row[..od].copy_from_slice(obs.row(r));
        row[od..].copy_from_slice(last.row(r));
    }
    x
}

/// One-hot latent category per agent row.
pub fn latent_rows(batch: &Batch, categories: usize) -> Tensor {
    let mut z = Tensor::zeros(batch.size * batch.n_agents, categories);
    for (b, &x) in batch.latents.iter().enumerate() {
        for a in 0..batch.n_agents {
            z.set(b * batch.n_agents + a, x, 1.0);
        }
    }
    z
}

/// Recorded unroll over steps `0..steps`; returns the per-step outputs.
pub fn unroll(
    tape: &mut Tape,
    net: &AgentNet,
    store: &ParamStore,
    batch: &Batch,
    with_last_action: bool,
    z: Option<Var>,
    steps: usize,
) -> Result<Vec<Var>> {
    let mut h = tape.constant(net.initial_hidden(batch.size * batch.n_agents))?;
    let mut outs = Vec::with_capacity(steps);
    for t in 0..steps {
        let x = tape.constant(agent_inputs(batch, t, with_last_action))?;
        let (q, h2) = net.step(tape, store, x, h, z)?;
        h = h2;
        outs.push(q);
    }
    Ok(outs)
}

/// Unrecorded unroll over all `max_len + 1` steps.
pub fn unroll_infer(
    net: &AgentNet,
    store: &ParamStore,
    batch: &Batch,
    with_last_action: bool,
    z: Option<&Tensor>,
) -> Result<Vec<Tensor>> {
    let mut h = net.initial_hidden(batch.size * batch.n_agents);
    let mut outs = Vec::with_capacity(batch.max_len + 1);
    for t in 0..=batch.max_len {
        let (q, h2) = net.infer(store, &agent_inputs(batch, t, with_last_action), &h, z)?;
        h = h2;
        outs.push(q);
    }
    Ok(outs)
}

fn states_from(batch: &Batch, offset: usize) -> Tensor {
    let s = batch.states[0].cols();
    let mut out = Tensor::zeros(batch.max_len * batch.size, s);
    for t in 0..batch.max_len {
        let src = &batch.states[t + offset];
        out.data_mut()[t * batch.size * s..(t + 1) * batch.size * s].copy_from_slice(src.data());
    }
    out
}

fn bootstrap(batch: &Batch, gamma: f64, next_values: &[f64]) -> Vec<f64> {
    (0..batch.rewards.len())
        .map(|i| batch.rewards[i] + gamma * (1.0 - batch.terminal[i]) * next_values[i] * batch.valid[i])
        .collect()
}

/// `r_t + γ Q_mix(s_{t+1}, argmax; θ')`, the maximum taken per agent over
/// available actions under the target network.
pub fn q_targets(
    agent: &AgentNet,
    mixer: &Mixer,
    target: &ParamStore,
    batch: &Batch,
    gamma: f64,
    z: Option<&Tensor>,
) -> Result<Vec<f64>> {
    let outs = unroll_infer(agent, target, batch, true, z)?;
    let n = batch.n_agents;
    let mut greedy = Tensor::zeros(batch.max_len * batch.size, n);
    for t in 0..batch.max_len {
        let (q, m) = (&outs[t + 1], &batch.avail[t + 1]);
        for r in 0..batch.size * n {
            greedy.set(t * batch.size + r / n, r % n, masked_max(q.row(r), m.row(r)));
        }
    }
    let next = mixer.infer(target, &greedy, &states_from(batch, 1))?;
    Ok(bootstrap(batch, gamma, next.data()))
}

/// `r_t + γ V_mix(s_{t+1}; φ')`.
pub fn v_targets(agent: &AgentNet, mixer: &Mixer, target: &ParamStore, batch: &Batch, gamma: f64) -> Result<Vec<f64>> {
    let outs = unroll_infer(agent, target, batch, false, None)?;
    let n = batch.n_agents;
    let mut values = Tensor::zeros(batch.max_len * batch.size, n);
    for t in 0..batch.max_len {
        let dst = &mut values.data_mut()[t * batch.size * n..(t + 1) * batch.size * n];
        dst.copy_from_slice(outs[t + 1].data());
    }
    let next = mixer.infer(target, &values, &states_from(batch, 1))?;
    Ok(bootstrap(batch, gamma, next.data()))
}

/// Mixed value of the taken joint actions, `max_len * B x 1`, plus the
/// per-step utilities.
pub fn chosen_qtot(
    tape: &mut Tape,
    agent: &AgentNet,
    mixer: &Mixer,
    store: &ParamStore,
    batch: &Batch,
    z: Option<Var>,
) -> Result<(Var, Vec<Var>)> {
    let qs = unroll(tape, agent, store, batch, true, z, batch.max_len)?;
    let mut chosen = Vec::with_capacity(batch.max_len);
    for (t, &q) in qs.iter().enumerate() {
        let c = tape.gather(q, &batch.actions[t])?;
        chosen.push(tape.reshape(c, batch.size, batch.n_agents)?);
    }
    let chosen = tape.concat_rows(&chosen)?;
    let states = tape.constant(states_from(batch, 0))?;
    Ok((mixer.forward(tape, store, chosen, states)?, qs))
}

/// Mixed value of the state, `max_len * B x 1`.
pub fn vtot(tape: &mut Tape, agent: &AgentNet, mixer: &Mixer, store: &ParamStore, batch: &Batch) -> Result<Var> {
    let vs = unroll(tape, agent, store, batch, false, None, batch.max_len)?;
    let mut rows = Vec::with_capacity(vs.len());
    for v in vs {
        rows.push(tape.reshape(v, batch.size, batch.n_agents)?);
    }
    let values = tape.concat_rows(&rows)?;
    let states = tape.constant(states_from(batch, 0))?;
    mixer.forward(tape, store, values, states)
}

/// Independent per-agent TD loss on the team reward:
/// `(r + γ max_u Q_a(τ', u; θ') - Q_a(τ, u_a; θ))²`.
pub fn dqn_loss(tape: &mut Tape, agent: &AgentNet, store: &ParamStore, target: &ParamStore, batch: &Batch, gamma: f64) -> Result<Var> {
    let n = batch.n_agents;
    let outs = unroll_infer(agent, target, batch, true, None)?;
    let qs = unroll(tape, agent, store, batch, true, None, batch.max_len)?;
    let (mut chosen, mut ys, mut mask) = (Vec::new(), Vec::new(), Vec::new());
    for (t, &q) in qs.iter().enumerate() {
        chosen.push(tape.gather(q, &batch.actions[t])?);
        for r in 0..batch.size * n {
            let i = t * batch.size + r / n;
            let next = masked_max(outs[t + 1].row(r), batch.avail[t + 1].row(r));
            ys.push(batch.rewards[i] + gamma * (1.0 - batch.terminal[i]) * next * batch.valid[i]);
            mask.push(batch.valid[i]);
        }
    }
    let chosen = tape.concat_rows(&chosen)?;
    tape.masked_mse(chosen, &ys, &mask)
}

/// Mixed TD loss with target-network bootstrapping.
#[allow(clippy::too_many_arguments)]
pub fn qmix_loss(
    tape: &mut Tape,
    agent: &AgentNet,
    mixer: &Mixer,
    store: &ParamStore,
    target: &ParamStore,
    batch: &Batch,
    gamma: f64,
    z: Option<&Tensor>,
) -> Result<(Var, Vec<Var>)> {
    let ys = q_targets(agent, mixer, target, batch, gamma, z)?;
    let zv = match z {
        Some(z) => Some(tape.constant(z.clone())?),
        None => None,
    };
    let (qtot, qs) = chosen_qtot(tape, agent, mixer, store, batch, zv)?;
    Ok((tape.masked_mse(qtot, &ys, &batch.valid)?, qs))
}

/// Discriminator cross-entropy of the episode latent, predicted from the
/// episode mean of per-agent `softmax(utilities) ⊕ (o_{t+1} - o_t)`.
pub fn mi_loss(tape: &mut Tape, disc: &Classifier, store: &ParamStore, qs: &[Var], batch: &Batch) -> Result<Var> {
    let rows = batch.size * batch.n_agents;
    let mut feats = Vec::with_capacity(qs.len());
    for (t, &q) in qs.iter().enumerate() {
        let sm = tape.softmax_rows(q)?;
        let (o0, o1) = (&batch.obs[t], &batch.obs[t + 1]);
        let diff: Vec<f64> = o1.data().iter().zip(o0.data()).map(|(a, b)| a - b).collect();
        let diff = tape.constant(Tensor::from_vec(rows, o0.cols(), diff)?)?;
        feats.push(tape.concat_cols(&[sm, diff])?);
    }
    let feats = tape.concat_rows(&feats)?;
    let mut pool = Tensor::zeros(batch.size, qs.len() * rows);
    for (b, &len) in batch.lens.iter().enumerate() {
        let w = 1.0 / (len.max(1) * batch.n_agents) as f64;
        for t in 0..len.min(qs.len()) {
            for a in 0..batch.n_agents {
                pool.set(b, t * rows + b * batch.n_agents + a, w);
            }
        }
    }
    let pool = tape.constant(pool)?;
    let pooled = tape.matmul(pool, feats)?;
    let logits = disc.logits(tape, store, pooled)?;
    tape.weighted_nll(logits, &batch.latents, &vec![1.0; batch.size])
}

/// Score-function loss of the latent policy: the mean of
/// `-(R - baseline) log π(x | s_0)`.
pub fn latent_policy_loss(tape: &mut Tape, policy: &Classifier, store: &ParamStore, batch: &Batch, baseline: f64) -> Result<Var> {
    let s0 = tape.constant(batch.initial_states.clone())?;
    let logits = policy.logits(tape, store, s0)?;
    let adv: Vec<f64> = batch.returns.iter().map(|r| r - baseline).collect();
    tape.weighted_nll(logits, &batch.latents, &adv)
}
