//! Episode storage and padded mini-batches.

use std::collections::VecDeque;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Archive, Tensor};

/// One team's view of one episode of length `T`.
///
/// Per-step rows (`obs`, `states`, `avail`) have `T + 1` entries, the last one
/// describing the state after the final transition. `actions` and `rewards`
/// have `T` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    /// Monotone index assigned by the producer.
    pub id: u64,
    /// Row `t` holds the observations of all agents, agent-major.
    pub obs: Vec<Vec<f64>>,
    pub states: Vec<Vec<f64>>,
    /// Row `t` holds all agents' masks as 0/1, agent-major.
    pub avail: Vec<Vec<f64>>,
    pub actions: Vec<Vec<usize>>,
    pub rewards: Vec<f64>,
    /// Whether the final transition ends the game (no bootstrap).
    pub terminated: bool,
    /// Latent category of the episode (MAVEN), otherwise 0.
    pub latent: usize,
}

impl EpisodeRecord {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn validate(&self, n_agents: usize, obs_dim: usize, state_dim: usize, n_actions: usize) -> Result<()> {
        let t = self.len();
        let ok = self.obs.len() == t + 1
            && self.states.len() == t + 1
            && self.avail.len() == t + 1
            && self.rewards.len() == t
            && self.obs.iter().all(|o| o.len() == n_agents * obs_dim)
            && self.states.iter().all(|s| s.len() == state_dim)
            && self.avail.iter().all(|a| a.len() == n_agents * n_actions)
            && self.actions.iter().all(|a| a.len() == n_agents && a.iter().all(|&u| u < n_actions));
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!("episode {} has inconsistent dimensions", self.id)))
        }
    }

    pub(crate) fn push_to(&self, archive: &mut Archive, prefix: &str) {
        let rows = |v: &Vec<Vec<f64>>| {
            let cols = v.first().map_or(0, |r| r.len());
            Tensor::from_vec(v.len(), cols, v.concat()).expect("rectangular rows")
        };
        archive.push(format!("{prefix}.obs"), rows(&self.obs));
        archive.push(format!("{prefix}.states"), rows(&self.states));
        archive.push(format!("{prefix}.avail"), rows(&self.avail));
        let n = self.actions.first().map_or(0, |a| a.len());
        let acts = self.actions.iter().flatten().map(|&a| a as f64).collect();
        archive.push(format!("{prefix}.actions"), Tensor::from_vec(self.len(), n, acts).expect("actions"));
        archive.push(format!("{prefix}.rewards"), Tensor::from_vec(self.len(), 1, self.rewards.clone()).expect("rewards"));
        let meta = vec![self.id as f64, self.terminated as u8 as f64, self.latent as f64];
        archive.push(format!("{prefix}.meta"), Tensor::row_vector(meta));
    }

    pub(crate) fn take_from(archive: &mut Archive, prefix: &str) -> Result<Self> {
        let rows = |t: Tensor| t.data().chunks(t.cols().max(1)).take(t.rows()).map(|r| r.to_vec()).collect::<Vec<_>>();
        let obs = rows(archive.take(&format!("{prefix}.obs"))?);
        let states = rows(archive.take(&format!("{prefix}.states"))?);
        let avail = rows(archive.take(&format!("{prefix}.avail"))?);
        let actions = rows(archive.take(&format!("{prefix}.actions"))?)
            .into_iter()
            .map(|r| r.into_iter().map(|a| a as usize).collect())
            .collect();
        let rewards = archive.take(&format!("{prefix}.rewards"))?.into_data();
        let meta = archive.take(&format!("{prefix}.meta"))?.into_data();
        if meta.len() != 3 {
            return Err(Error::CheckpointShape(format!("{prefix}.meta")));
        }
        Ok(Self {
            id: meta[0] as u64,
            obs,
            states,
            avail,
            actions,
            rewards,
            terminated: meta[1] != 0.0,
            latent: meta[2] as usize,
        })
    }
}

/// Ring of the most recent episodes.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    episodes: VecDeque<EpisodeRecord>,
    pushed: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, episodes: VecDeque::with_capacity(capacity.min(4096)), pushed: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    /// Episodes pushed over the buffer's lifetime.
    pub fn pushed(&self) -> u64 {
        self.pushed
    }

    pub fn push(&mut self, episode: EpisodeRecord) {
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(episode);
        self.pushed += 1;
    }

    pub fn iter(&self) -> impl Iterator<Item = &EpisodeRecord> {
        self.episodes.iter()
    }

    pub fn can_sample(&self, batch: usize) -> bool {
        self.episodes.len() >= batch
    }

    /// Uniform sample of `batch` distinct episodes.
    pub fn sample(&self, batch: usize, rng: &mut impl Rng) -> Vec<&EpisodeRecord> {
        let batch = batch.min(self.episodes.len());
        rand::seq::index::sample(rng, self.episodes.len(), batch).into_iter().map(|i| &self.episodes[i]).collect()
    }

    pub(crate) fn push_to(&self, archive: &mut Archive, prefix: &str) {
        archive.push(format!("{prefix}.info"), Tensor::row_vector(vec![self.episodes.len() as f64, self.pushed as f64]));
        for (i, e) in self.episodes.iter().enumerate() {
            e.push_to(archive, &format!("{prefix}.{i}"));
        }
    }

    pub(crate) fn take_from(&mut self, archive: &mut Archive, prefix: &str) -> Result<()> {
        let info = archive.take(&format!("{prefix}.info"))?.into_data();
        if info.len() != 2 {
            return Err(Error::CheckpointShape(format!("{prefix}.info")));
        }
        self.episodes.clear();
        for i in 0..info[0] as usize {
            self.episodes.push_back(EpisodeRecord::take_from(archive, &format!("{prefix}.{i}"))?);
        }
        self.pushed = info[1] as u64;
        Ok(())
    }
}

/// Time-major padded view of a set of episodes. Row `b * n + a` of every
/// per-step matrix belongs to agent `a` of episode `b`.
#[derive(Debug, Clone)]
pub struct Batch {
    pub size: usize,
    pub n_agents: usize,
    pub n_actions: usize,
    /// Longest episode length in the batch.
    pub max_len: usize,
    pub lens: Vec<usize>,
    /// `max_len + 1` matrices of `size * n_agents x obs_dim`.
    pub obs: Vec<Tensor>,
    /// `max_len + 1` matrices of `size x state_dim`.
    pub states: Vec<Tensor>,
    /// `max_len + 1` matrices of `size * n_agents x n_actions`.
    pub avail: Vec<Tensor>,
    /// `max_len` vectors of `size * n_agents` action indices (0 when padded).
    pub actions: Vec<Vec<usize>>,
    /// Index `t * size + b`.
    pub rewards: Vec<f64>,
    pub terminal: Vec<f64>,
    pub valid: Vec<f64>,
    pub latents: Vec<usize>,
    pub returns: Vec<f64>,
    pub initial_states: Tensor,
}

impl Batch {
    pub fn new(episodes: &[&EpisodeRecord], n_agents: usize, n_actions: usize) -> Result<Self> {
        let size = episodes.len();
        if size == 0 {
            return Err(Error::MissingData("empty batch".into()));
        }
        let max_len = episodes.iter().map(|e| e.len()).max().unwrap_or(0);
        let obs_dim = episodes[0].obs[0].len() / n_agents;
        let state_dim = episodes[0].states[0].len();
        let mut obs = Vec::with_capacity(max_len + 1);
        let mut states = Vec::with_capacity(max_len + 1);
        let mut avail = Vec::with_capacity(max_len + 1);
        for t in 0..=max_len {
            let mut o = Tensor::zeros(size * n_agents, obs_dim);
            let mut s = Tensor::zeros(size, state_dim);
            let mut m = Tensor::zeros(size * n_agents, n_actions);
            for (b, e) in episodes.iter().enumerate() {
                if t <= e.len() {
                    o.data_mut()[b * n_agents * obs_dim..(b + 1) * n_agents * obs_dim].copy_from_slice(&e.obs[t]);
                    s.row_mut(b).copy_from_slice(&e.states[t]);
                    m.data_mut()[b * n_agents * n_actions..(b + 1) * n_agents * n_actions].copy_from_slice(&e.avail[t]);
                } else {
                    // Padding: keep the no-op available so masked maxima stay finite.
                    for a in 0..n_agents {
                        m.set(b * n_agents + a, 0, 1.0);
                    }
                }
            }
            obs.push(o);
            states.push(s);
            avail.push(m);
        }
        let mut actions = Vec::with_capacity(max_len);
        let mut rewards = vec![0.0; max_len * size];
        let mut terminal = vec![0.0; max_len * size];
        let mut valid = vec![0.0; max_len * size];
        for t in 0..max_len {
            let mut row = vec![0; size * n_agents];
            for (b, e) in episodes.iter().enumerate() {
                if t < e.len() {
                    row[b * n_agents..(b + 1) * n_agents].copy_from_slice(&e.actions[t]);
                    rewards[t * size + b] = e.rewards[t];
                    valid[t * size + b] = 1.0;
                    if t + 1 == e.len() && e.terminated {
                        terminal[t * size + b] = 1.0;
                    }
                }
            }
            actions.push(row);
        }
        Ok(Self {
            size,
            n_agents,
            n_actions,
            max_len,
            lens: episodes.iter().map(|e| e.len()).collect(),
            initial_states: states[0].clone(),
            obs,
            states,
            avail,
            actions,
            rewards,
            terminal,
            valid,
            latents: episodes.iter().map(|e| e.latent).collect(),
            returns: episodes.iter().map(|e| e.total_reward()).collect(),
        })
    }

    /// One-hot of the previous joint action for step `t` (zeros at `t = 0`).
    pub fn last_actions(&self, t: usize) -> Tensor {
        let mut m = Tensor::zeros(self.size * self.n_agents, self.n_actions);
        if t > 0 {
            for (r, &a) in self.actions[t - 1].iter().enumerate() {
                if t - 1 < self.lens[r / self.n_agents] {
                    m.set(r, a, 1.0);
                }
            }
        }
        m
    }
}
