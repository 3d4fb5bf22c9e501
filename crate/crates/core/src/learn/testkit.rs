//! Synthetic episodes and small closed-form games for exercising learners
//! without the combat environment.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::episode::{Batch, EpisodeRecord};
use super::learner::TeamLearner;
use super::{LearnerConfig, LearnerSpec, Method};
use crate::error::Result;
use crate::game::{ActionMask, Observation};
use crate::nn::Tensor;

/// Random episode with random availability (no-op always available) and
/// actions drawn among available ones.
pub fn random_episode(spec: LearnerSpec, len: usize, id: u64, rng: &mut impl Rng) -> EpisodeRecord {
    let (n, a) = (spec.n_agents, spec.n_actions);
    let mut avail = Vec::with_capacity(len + 1);
    for _ in 0..=len {
        let mut row = vec![0.0; n * a];
        for agent in 0..n {
            row[agent * a] = 1.0;
            for u in 1..a {
                row[agent * a + u] = (rng.gen::<f64>() < 0.7) as u8 as f64;
            }
        }
        avail.push(row);
    }
    let actions = (0..len)
        .map(|t| {
            (0..n)
                .map(|agent| {
                    let ok: Vec<usize> = (0..a).filter(|&u| avail[t][agent * a + u] > 0.0).collect();
                    ok[rng.gen_range(0..ok.len())]
                })
                .collect()
        })
        .collect();
    EpisodeRecord {
        id,
        obs: (0..=len).map(|_| (0..n * spec.obs_dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect(),
        states: (0..=len).map(|_| (0..spec.state_dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect(),
        avail,
        actions,
        rewards: (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        terminated: rng.gen::<bool>(),
        latent: 0,
    }
}

/// Random batch of episodes with lengths in `1..=max_len`.
pub fn random_batch(spec: LearnerSpec, size: usize, max_len: usize, latents: usize, rng: &mut impl Rng) -> Batch {
    let eps: Vec<EpisodeRecord> = (0..size)
        .map(|i| {
            let len = rng.gen_range(1..=max_len);
            let mut e = random_episode(spec, len, i as u64, rng);
            e.latent = rng.gen_range(0..latents.max(1));
            e
        })
        .collect();
    let refs: Vec<&EpisodeRecord> = eps.iter().collect();
    Batch::new(&refs, spec.n_agents, spec.n_actions).expect("valid batch")
}

/// Outcome of training on a one-step cooperative matrix game.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixGameResult {
    /// Share of greedy evaluations in the final window that played the optimum.
    pub optimal_frequency: f64,
    pub final_greedy: (usize, usize),
}

/// Trains a two-agent learner on a one-step game where both agents always
/// see the same constant observation and the team reward is `payoff[a][b]`.
/// Every `eval_every` episodes a greedy joint action is recorded; the result
/// reports how often it was optimal over the last `window` evaluations.
pub fn train_matrix_game(
    method: Method,
    payoff: &[[f64; 3]; 3],
    episodes: usize,
    seed: u64,
    eval_every: usize,
    window: usize,
) -> Result<MatrixGameResult> {
    let spec = LearnerSpec { n_agents: 2, obs_dim: 1, state_dim: 1, n_actions: 3 };
    let config = LearnerConfig {
        method,
        hidden: 16,
        embed: 8,
        hyper_init: 0.1,
        gamma: 0.99,
        lr: 0.005,
        buffer_size: 500,
        batch_size: 32,
        target_update_episodes: 50,
        ..LearnerConfig::default()
    };
    let mut learner = TeamLearner::new(spec, config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let obs = vec![Observation { features: vec![1.0], mask: ActionMask { available: vec![true; 3] } }; 2];
    let best = (0..3)
        .flat_map(|a| (0..3).map(move |b| (a, b)))
        .max_by(|x, y| payoff[x.0][x.1].total_cmp(&payoff[y.0][y.1]))
        .expect("non-empty");
    let anneal = episodes / 2;
    let mut evals = Vec::new();
    let mut greedy = (0, 0);
    for ep in 0..episodes {
        let eps = (1.0 - 0.95 * ep as f64 / anneal as f64).max(0.05);
        let snap = learner.snapshot();
        let mut st = snap.begin(&[1.0], true, &mut rng)?;
        let acts = snap.act(&mut st, &obs, eps, &mut rng)?;
        let record = EpisodeRecord {
            id: ep as u64,
            obs: vec![vec![1.0, 1.0]; 2],
            states: vec![vec![1.0]; 2],
            avail: vec![vec![1.0; 6]; 2],
            actions: vec![acts.clone()],
            rewards: vec![payoff[acts[0]][acts[1]]],
            terminated: true,
            latent: st.latent,
        };
        learner.observe_episode(record)?;
        learner.note_episodes(1);
        learner.train_step()?;
        if (ep + 1) % eval_every == 0 {
            let mut st = snap.begin(&[1.0], false, &mut rng)?;
            let q = snap.utilities(&mut st, &obs)?;
            let avail = Tensor::filled(2, 3, 1.0);
            let g = super::select::select_actions(&q, &avail, 0.0, &mut rng);
            greedy = (g[0], g[1]);
            evals.push(greedy == best);
        }
    }
    let tail = &evals[evals.len().saturating_sub(window)..];
    let optimal_frequency = tail.iter().filter(|&&b| b).count() as f64 / tail.len().max(1) as f64;
    Ok(MatrixGameResult { optimal_frequency, final_greedy: greedy })
}
