//! Value-decomposition team learners: QMIX, QVMix and MAVEN.
//!
//! All three share a recurrent per-agent utility network whose parameters
//! are shared across a team's agents, a replay buffer of whole episodes and
//! hard-copied target networks. They differ in how the team value is formed
//! and bootstrapped.

pub mod episode;
pub mod learner;
pub mod losses;
pub mod nets;
pub mod select;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::env::{obs_dim, state_dim, EnvSpec};
use crate::error::{Error, Result};

pub use episode::{Batch, EpisodeRecord, ReplayBuffer};
pub use learner::{PolicySnapshot, TeamLearner, TrainStats};
pub use nets::{AgentNet, Classifier, Head, Mixer};
pub use select::{masked_argmax, masked_max, select_actions, UNAVAILABLE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Qmix,
    Qvmix,
    Maven,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Qmix, Method::Qvmix, Method::Maven];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Qmix => "qmix",
            Method::Qvmix => "qvmix",
            Method::Maven => "maven",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "qmix" => Ok(Method::Qmix),
            "qvmix" => Ok(Method::Qvmix),
            "maven" => Ok(Method::Maven),
            other => Err(Error::config("learner.method", format!("unknown method `{other}`"))),
        }
    }
}

/// Problem dimensions a learner is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LearnerSpec {
    pub n_agents: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
    pub n_actions: usize,
}

impl LearnerSpec {
    pub fn from_env(spec: &EnvSpec) -> Self {
        Self {
            n_agents: spec.map.team_size(),
            obs_dim: obs_dim(spec),
            state_dim: state_dim(spec),
            n_actions: spec.map.num_actions(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerConfig {
    pub method: Method,
    /// Recurrent cell width.
    pub hidden: usize,
    /// Mixer embedding width.
    pub embed: usize,
    /// Init bound of the hypernetwork layers producing mixer weights.
    pub hyper_init: f64,
    pub gamma: f64,
    pub lr: f64,
    pub rms_alpha: f64,
    pub rms_eps: f64,
    pub grad_clip: f64,
    pub buffer_size: usize,
    pub batch_size: usize,
    /// Hard target copy after this many new episodes.
    pub target_update_episodes: u64,
    /// Number of latent categories (MAVEN).
    pub noise_dim: usize,
    /// Weight of the latent discriminator loss (MAVEN).
    pub lambda_mi: f64,
    /// Learning rate of the latent policy (MAVEN).
    pub latent_lr: f64,
    /// Decay of the running-mean return baseline (MAVEN).
    pub baseline_decay: f64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            method: Method::Qmix,
            hidden: 64,
            embed: 32,
            hyper_init: 0.01,
            gamma: 0.99,
            lr: 0.0005,
            rms_alpha: 0.99,
            rms_eps: 1e-5,
            grad_clip: 10.0,
            buffer_size: 5000,
            batch_size: 32,
            target_update_episodes: 200,
            noise_dim: 16,
            lambda_mi: 0.001,
            latent_lr: 0.0005,
            baseline_decay: 0.99,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("learner.hidden", self.hidden > 0),
            ("learner.embed", self.embed > 0),
            ("learner.hyper_init", self.hyper_init > 0.0),
            ("learner.gamma", (0.0..1.0).contains(&self.gamma)),
            ("learner.lr", self.lr > 0.0),
            ("learner.rms_alpha", (0.0..1.0).contains(&self.rms_alpha)),
            ("learner.rms_eps", self.rms_eps > 0.0),
            ("learner.grad_clip", self.grad_clip > 0.0),
            ("learner.buffer_size", self.buffer_size > 0),
            ("learner.batch_size", self.batch_size > 0 && self.batch_size <= self.buffer_size),
            ("learner.target_update_episodes", self.target_update_episodes > 0),
            ("learner.noise_dim", self.noise_dim > 0),
            ("learner.lambda_mi", self.lambda_mi >= 0.0),
            ("learner.latent_lr", self.latent_lr > 0.0),
            ("learner.baseline_decay", (0.0..1.0).contains(&self.baseline_decay)),
        ];
        for (key, ok) in checks {
            if !ok {
                return Err(Error::config(key, "out of range"));
            }
        }
        Ok(())
    }
}

pub mod testkit;

#[cfg(test)]
mod tests;
