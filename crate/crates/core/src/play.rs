//! Episode rollouts between two controllers.

use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::env::{state_features, team_observations, EnvSpec, GameState};
use crate::error::Result;
use crate::game::{ActionId, JointAction, Observation, StepOutcome, TeamId, Winner};
use crate::heuristic::{heuristic_team_actions, HeuristicState};
use crate::learn::learner::ActingState;
use crate::learn::{EpisodeRecord, PolicySnapshot};

/// Who drives one side of an episode.
#[derive(Debug, Clone, Copy)]
pub enum Controller<'a> {
    /// A learned policy. `explore_latent` draws the MAVEN latent uniformly
    /// instead of from the latent policy.
    Learned { policy: &'a PolicySnapshot, epsilon: f64, explore_latent: bool },
    Heuristic,
    NoOp,
}

impl<'a> Controller<'a> {
    pub fn greedy(policy: &'a PolicySnapshot) -> Self {
        Controller::Learned { policy, epsilon: 0.0, explore_latent: false }
    }

    fn is_learned(&self) -> bool {
        matches!(self, Controller::Learned { .. })
    }
}

enum SideState {
    Learned(ActingState),
    Heuristic(HeuristicState),
    NoOp,
}

/// Per-step recording of one side, in that side's frame.
struct Recorder {
    obs: Vec<Vec<f64>>,
    states: Vec<Vec<f64>>,
    avail: Vec<Vec<f64>>,
    actions: Vec<Vec<usize>>,
    rewards: Vec<f64>,
}

impl Recorder {
    fn new() -> Self {
        Self { obs: Vec::new(), states: Vec::new(), avail: Vec::new(), actions: Vec::new(), rewards: Vec::new() }
    }

    fn push_view(&mut self, state: &GameState, team: TeamId, obs: &[Observation]) {
        self.obs.push(obs.iter().flat_map(|o| o.features.iter().copied()).collect());
        self.avail.push(obs.iter().flat_map(|o| o.mask.as_f64()).collect());
        self.states.push(state_features(state, team));
    }

    fn finish(self, id: u64, latent: usize) -> EpisodeRecord {
        EpisodeRecord {
            id,
            obs: self.obs,
            states: self.states,
            avail: self.avail,
            actions: self.actions,
            rewards: self.rewards,
            // Time-limited episodes also end the game, so every episode is terminal.
            terminated: true,
            latent,
        }
    }
}

/// Result of one episode, indexed by team (`[plus, minus]`).
#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub winner: Winner,
    pub length: usize,
    pub returns: [f64; 2],
    /// Transitions of each learned side, when recording was requested.
    pub records: [Option<EpisodeRecord>; 2],
}

/// Derives an independent 64-bit seed from a base seed and a stream index.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(0x6a09_e667_f3bc_c909);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Plays one episode. All randomness (start jitter, exploration, latents)
/// comes from `seed`.
pub fn play_episode(spec: &Arc<EnvSpec>, seed: u64, plus: Controller, minus: Controller, record: bool) -> Result<EpisodeResult> {
    play_episode_observed(spec, seed, plus, minus, record, |_, _, _, _| Ok(()))
}

/// As [`play_episode`], calling `observe(before, joint, after, outcome)`
/// after every step.
pub fn play_episode_observed(
    spec: &Arc<EnvSpec>,
    seed: u64,
    plus: Controller,
    minus: Controller,
    record: bool,
    mut observe: impl FnMut(&GameState, &JointAction, &GameState, &StepOutcome) -> Result<()>,
) -> Result<EpisodeResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = GameState::new_episode(spec.clone(), rng.gen());
    let controllers = [plus, minus];
    let mut sides = Vec::with_capacity(2);
    for (c, team) in controllers.iter().zip(TeamId::BOTH) {
        sides.push(match c {
            Controller::Learned { policy, explore_latent, .. } => {
                SideState::Learned(policy.begin(&state_features(&state, team), *explore_latent, &mut rng)?)
            }
            Controller::Heuristic => SideState::Heuristic(HeuristicState::new(&state, team)),
            Controller::NoOp => SideState::NoOp,
        });
    }
    let mut recorders: Vec<Option<Recorder>> =
        controllers.iter().map(|c| (record && c.is_learned()).then(Recorder::new)).collect();
    let mut returns = [0.0; 2];
    let n = state.team_size();
    loop {
        let mut teams: Vec<Vec<ActionId>> = Vec::with_capacity(2);
        for (k, team) in TeamId::BOTH.into_iter().enumerate() {
            let actions = match (&controllers[k], &mut sides[k]) {
                (Controller::Learned { policy, epsilon, .. }, SideState::Learned(st)) => {
                    let obs = team_observations(&state, team)?;
                    if let Some(r) = recorders[k].as_mut() {
                        r.push_view(&state, team, &obs);
                    }
                    let acts = policy.act(st, &obs, *epsilon, &mut rng)?;
                    if let Some(r) = recorders[k].as_mut() {
                        r.actions.push(acts.clone());
                    }
                    acts.into_iter().map(ActionId).collect()
                }
                (_, SideState::Heuristic(h)) => heuristic_team_actions(&state, team, h)?,
                _ => vec![ActionId::NO_OP; n],
            };
            teams.push(actions);
        }
        let minus_actions = teams.pop().expect("two teams");
        let joint = JointAction::new(teams.pop().expect("two teams"), minus_actions);
        let (next, outcome) = state.step(&joint)?;
        observe(&state, &joint, &next, &outcome)?;
        for (k, r) in recorders.iter_mut().enumerate() {
            if let Some(r) = r {
                r.rewards.push(outcome.rewards[k]);
            }
            returns[k] += outcome.rewards[k];
        }
        state = next;
        if outcome.terminal {
            break;
        }
    }
    for (k, team) in TeamId::BOTH.into_iter().enumerate() {
        if let Some(r) = recorders[k].as_mut() {
            let obs = team_observations(&state, team)?;
            r.push_view(&state, team, &obs);
        }
    }
    let mut records = [None, None];
    for (k, r) in recorders.into_iter().enumerate() {
        if let Some(r) = r {
            let latent = match &sides[k] {
                SideState::Learned(st) => st.latent,
                _ => 0,
            };
            records[k] = Some(r.finish(seed, latent));
        }
    }
    Ok(EpisodeResult { winner: state.winner(), length: state.t as usize, returns, records })
}

/// Maps `f` over `items` on up to `workers` threads, preserving order.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    #[cfg(feature = "parallel")]
    if workers > 1 && items.len() > 1 {
        use rayon::prelude::*;
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
            return pool.install(|| items.par_iter().map(&f).collect());
        }
    }
    let _ = workers;
    items.iter().map(f).collect()
}
