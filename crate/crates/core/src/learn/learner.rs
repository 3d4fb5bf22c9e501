//! A team learner owning online/target parameters, optimizers and replay.

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::episode::{Batch, EpisodeRecord, ReplayBuffer};
use super::losses;
use super::nets::{AgentNet, Classifier, Mixer};
use super::select::select_actions;
use super::{LearnerConfig, LearnerSpec, Method};
use crate::error::{Error, Result};
use crate::game::Observation;
use crate::nn::{Archive, ParamStore, RmsProp, RmsPropConfig, Tape, Tensor};

/// Network layouts; parameters live in the learner's stores.
#[derive(Debug, Clone, PartialEq)]
pub struct Networks {
    pub agent: AgentNet,
    pub mixer: Mixer,
    pub discriminator: Option<Classifier>,
    pub v_agent: Option<AgentNet>,
    pub v_mixer: Option<Mixer>,
    pub latent_policy: Option<Classifier>,
}

/// Parameter groups: `q` (utilities, mixer, discriminator), `v` (QVMix
/// value nets) and `latent` (MAVEN latent policy). A group that a method does
/// not use is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct Stores {
    pub q: ParamStore,
    pub v: ParamStore,
    pub latent: ParamStore,
}

impl Networks {
    pub fn build(spec: LearnerSpec, cfg: &LearnerConfig, rng: &mut impl Rng) -> (Self, Stores) {
        let mut q = ParamStore::new();
        let mut v = ParamStore::new();
        let mut latent = ParamStore::new();
        let maven = cfg.method == Method::Maven;
        let agent = AgentNet::new(
            &mut q,
            "agent",
            spec.obs_dim + spec.n_actions,
            cfg.hidden,
            spec.n_actions,
            maven.then_some(cfg.noise_dim),
            rng,
        );
        let mixer = Mixer::new(&mut q, "mixer", spec.n_agents, spec.state_dim, cfg.embed, cfg.hyper_init, rng);
        let discriminator = maven
            .then(|| Classifier::new(&mut q, "disc", spec.n_actions + spec.obs_dim, cfg.embed, cfg.noise_dim, rng));
        let (v_agent, v_mixer) = if cfg.method == Method::Qvmix {
            let a = AgentNet::new(&mut v, "vagent", spec.obs_dim, cfg.hidden, 1, None, rng);
            let m = Mixer::new(&mut v, "vmixer", spec.n_agents, spec.state_dim, cfg.embed, cfg.hyper_init, rng);
            (Some(a), Some(m))
        } else {
            (None, None)
        };
        let latent_policy =
            maven.then(|| Classifier::new(&mut latent, "latent", spec.state_dim, cfg.embed, cfg.noise_dim, rng));
        let nets = Self { agent, mixer, discriminator, v_agent, v_mixer, latent_policy };
        (nets, Stores { q, v, latent })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainStats {
    pub loss: f64,
    pub v_loss: Option<f64>,
    pub mi_loss: Option<f64>,
    pub latent_loss: Option<f64>,
    pub grad_norm: f64,
}

/// Read-only acting policy; cheap to share between rollout workers.
#[derive(Debug, Clone)]
pub struct PolicySnapshot {
    pub method: Method,
    pub spec: LearnerSpec,
    pub noise_dim: usize,
    pub agent: AgentNet,
    pub q: ParamStore,
    pub latent_policy: Option<Classifier>,
    pub latent: ParamStore,
}

/// Per-episode acting state of one team.
#[derive(Debug, Clone)]
pub struct ActingState {
    hidden: Tensor,
    last_actions: Option<Vec<usize>>,
    z: Option<Tensor>,
    pub latent: usize,
}

impl PolicySnapshot {
    /// Starts an episode. With `explore_latent` the MAVEN latent is uniform,
    /// otherwise it is drawn from the latent policy given the initial state.
    pub fn begin(&self, initial_state: &[f64], explore_latent: bool, rng: &mut impl Rng) -> Result<ActingState> {
        let n = self.spec.n_agents;
        let (latent, z) = match &self.latent_policy {
            Some(policy) => {
                let x = if explore_latent {
                    rng.gen_range(0..self.noise_dim)
                } else {
                    let logits = policy.infer(&self.latent, &Tensor::row_vector(initial_state.to_vec()))?;
                    sample_softmax(logits.row(0), rng)
                };
                let mut z = Tensor::zeros(n, self.noise_dim);
                for a in 0..n {
                    z.set(a, x, 1.0);
                }
                (x, Some(z))
            }
            None => (0, None),
        };
        Ok(ActingState { hidden: self.agent.initial_hidden(n), last_actions: None, z, latent })
    }

    /// Advances the recurrent state on the current observations and returns
    /// the `n x A` utilities.
    pub fn utilities(&self, st: &mut ActingState, obs: &[Observation]) -> Result<Tensor> {
        let (n, od, na) = (self.spec.n_agents, self.spec.obs_dim, self.spec.n_actions);
        let mut x = Tensor::zeros(n, od + na);
        for (a, o) in obs.iter().enumerate() {
            let row = x.row_mut(a);
            row[..od].copy_from_slice(&o.features);
            if let Some(last) = &st.last_actions {
                row[od + last[a]] = 1.0;
            }
        }
        let (q, h) = self.agent.infer(&self.q, &x, &st.hidden, st.z.as_ref())?;
        st.hidden = h;
        Ok(q)
    }

    pub fn act(&self, st: &mut ActingState, obs: &[Observation], epsilon: f64, rng: &mut impl Rng) -> Result<Vec<usize>> {
        let q = self.utilities(st, obs)?;
        let na = self.spec.n_actions;
        let mut avail = Tensor::zeros(obs.len(), na);
        for (a, o) in obs.iter().enumerate() {
            avail.row_mut(a).copy_from_slice(&o.mask.as_f64());
        }
        let actions = select_actions(&q, &avail, epsilon, rng);
        st.last_actions = Some(actions.clone());
        Ok(actions)
    }
}

fn sample_softmax(logits: &[f64], rng: &mut impl Rng) -> usize {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

#[derive(Debug, Clone)]
pub struct TeamLearner {
    pub spec: LearnerSpec,
    pub config: LearnerConfig,
    pub nets: Networks,
    pub online: Stores,
    pub target: Stores,
    q_opt: RmsProp,
    v_opt: RmsProp,
    latent_opt: RmsProp,
    pub baseline: Option<f64>,
    pub buffer: ReplayBuffer,
    pub episodes: u64,
    pub last_target_copy: u64,
    pub train_steps: u64,
    rng: ChaCha8Rng,
}

#[derive(Serialize, Deserialize)]
struct LearnerMeta {
    spec: LearnerSpec,
    config: LearnerConfig,
    baseline: Option<f64>,
    episodes: u64,
    last_target_copy: u64,
    train_steps: u64,
    rng_seed: [u8; 32],
    rng_stream: u64,
    rng_word_pos: String,
}

impl TeamLearner {
    pub fn new(spec: LearnerSpec, config: LearnerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
        let (nets, online) = Networks::build(spec, &config, &mut init_rng);
        let rms = |lr| RmsPropConfig { lr, alpha: config.rms_alpha, eps: config.rms_eps, clip_norm: Some(config.grad_clip) };
        let q_opt = RmsProp::new(rms(config.lr), &online.q);
        let v_opt = RmsProp::new(rms(config.lr), &online.v);
        let latent_opt = RmsProp::new(rms(config.latent_lr), &online.latent);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Ok(Self {
            spec,
            config,
            nets,
            target: online.clone(),
            online,
            q_opt,
            v_opt,
            latent_opt,
            baseline: None,
            buffer: ReplayBuffer::new(config.buffer_size),
            episodes: 0,
            last_target_copy: 0,
            train_steps: 0,
            rng,
        })
    }

    pub fn method(&self) -> Method {
        self.config.method
    }

    pub fn snapshot(&self) -> PolicySnapshot {
        PolicySnapshot {
            method: self.config.method,
            spec: self.spec,
            noise_dim: self.config.noise_dim,
            agent: self.nets.agent.clone(),
            q: self.online.q.clone(),
            latent_policy: self.nets.latent_policy.clone(),
            latent: self.online.latent.clone(),
        }
    }

    pub fn shared_snapshot(&self) -> Arc<PolicySnapshot> {
        Arc::new(self.snapshot())
    }

    pub fn observe_episode(&mut self, episode: EpisodeRecord) -> Result<()> {
        episode.validate(self.spec.n_agents, self.spec.obs_dim, self.spec.state_dim, self.spec.n_actions)?;
        self.buffer.push(episode);
        Ok(())
    }

    /// Counts finished episodes and hard-copies the targets once
    /// `target_update_episodes` new ones have accumulated. Returns whether a
    /// copy happened.
    pub fn note_episodes(&mut self, count: u64) -> bool {
        self.episodes += count;
        if self.episodes - self.last_target_copy >= self.config.target_update_episodes {
            self.update_targets();
            self.last_target_copy = self.episodes;
            true
        } else {
            false
        }
    }

    pub fn update_targets(&mut self) {
        self.target = self.online.clone();
    }

    /// Samples a batch and trains on it; `None` while the buffer is too small.
    pub fn train_step(&mut self) -> Result<Option<TrainStats>> {
        if !self.buffer.can_sample(self.config.batch_size) {
            return Ok(None);
        }
        let episodes = self.buffer.sample(self.config.batch_size, &mut self.rng);
        let batch = Batch::new(&episodes, self.spec.n_agents, self.spec.n_actions)?;
        self.train_on_batch(&batch).map(Some)
    }

    pub fn train_on_batch(&mut self, batch: &Batch) -> Result<TrainStats> {
        let cfg = self.config;
        let nets = &self.nets;
        let mut stats = TrainStats::default();
        match cfg.method {
            Method::Qmix => {
                let mut tape = Tape::new();
                let (loss, _) =
                    losses::qmix_loss(&mut tape, &nets.agent, &nets.mixer, &self.online.q, &self.target.q, batch, cfg.gamma, None)?;
                let grads = tape.backward(loss)?.for_store(&self.online.q);
                stats.loss = tape.value(loss).item();
                stats.grad_norm = self.q_opt.step(&mut self.online.q, &grads)?;
            }
            Method::Qvmix => {
                let (va, vm) = (nets.v_agent.as_ref().expect("qvmix nets"), nets.v_mixer.as_ref().expect("qvmix nets"));
                let ys = losses::v_targets(va, vm, &self.target.v, batch, cfg.gamma)?;

                let mut tape = Tape::new();
                let v = losses::vtot(&mut tape, va, vm, &self.online.v, batch)?;
                let lv = tape.masked_mse(v, &ys, &batch.valid)?;
                let grads = tape.backward(lv)?.for_store(&self.online.v);
                stats.v_loss = Some(tape.value(lv).item());
                self.v_opt.step(&mut self.online.v, &grads)?;

                let mut tape = Tape::new();
                let (q, _) = losses::chosen_qtot(&mut tape, &nets.agent, &nets.mixer, &self.online.q, batch, None)?;
                let lq = tape.masked_mse(q, &ys, &batch.valid)?;
                let grads = tape.backward(lq)?.for_store(&self.online.q);
                stats.loss = tape.value(lq).item();
                stats.grad_norm = self.q_opt.step(&mut self.online.q, &grads)?;
            }
            Method::Maven => {
                let disc = nets.discriminator.as_ref().expect("maven nets");
                let z = losses::latent_rows(batch, cfg.noise_dim);
                let mut tape = Tape::new();
                let (td, qs) = losses::qmix_loss(
                    &mut tape,
                    &nets.agent,
                    &nets.mixer,
                    &self.online.q,
                    &self.target.q,
                    batch,
                    cfg.gamma,
                    Some(&z),
                )?;
                let mi = losses::mi_loss(&mut tape, disc, &self.online.q, &qs, batch)?;
                let weighted = tape.scale(mi, cfg.lambda_mi)?;
                let total = tape.add(td, weighted)?;
                let grads = tape.backward(total)?.for_store(&self.online.q);
                stats.loss = tape.value(td).item();
                stats.mi_loss = Some(tape.value(mi).item());
                stats.grad_norm = self.q_opt.step(&mut self.online.q, &grads)?;

                let policy = nets.latent_policy.as_ref().expect("maven nets");
                let mean_return = batch.returns.iter().sum::<f64>() / batch.size as f64;
                let baseline = self.baseline.unwrap_or(mean_return);
                let mut tape = Tape::new();
                let pg = losses::latent_policy_loss(&mut tape, policy, &self.online.latent, batch, baseline)?;
                let grads = tape.backward(pg)?.for_store(&self.online.latent);
                stats.latent_loss = Some(tape.value(pg).item());
                self.latent_opt.step(&mut self.online.latent, &grads)?;
                self.baseline = Some(cfg.baseline_decay * baseline + (1.0 - cfg.baseline_decay) * mean_return);
            }
        }
        self.train_steps += 1;
        Ok(stats)
    }

    /// Full learner state. `meta` is stored alongside as `meta.extra`.
    pub fn to_archive(&self, extra: serde_json::Value, include_buffer: bool) -> Archive {
        let meta = LearnerMeta {
            spec: self.spec,
            config: self.config,
            baseline: self.baseline,
            episodes: self.episodes,
            last_target_copy: self.last_target_copy,
            train_steps: self.train_steps,
            rng_seed: self.rng.get_seed(),
            rng_stream: self.rng.get_stream(),
            rng_word_pos: self.rng.get_word_pos().to_string(),
        };
        let mut ar = Archive::new(json!({ "learner": meta, "extra": extra }));
        for (prefix, stores) in [("online", &self.online), ("target", &self.target)] {
            ar.push_store(&format!("{prefix}.q"), &stores.q);
            ar.push_store(&format!("{prefix}.v"), &stores.v);
            ar.push_store(&format!("{prefix}.latent"), &stores.latent);
        }
        for (prefix, opt) in [("opt.q", &self.q_opt), ("opt.v", &self.v_opt), ("opt.latent", &self.latent_opt)] {
            for (i, m) in opt.moments().iter().enumerate() {
                ar.push(format!("{prefix}/{i}"), m.clone());
            }
        }
        if include_buffer {
            self.buffer.push_to(&mut ar, "replay");
        }
        ar
    }

    /// Rebuilds a learner from [`TeamLearner::to_archive`] output.
    pub fn from_archive(mut ar: Archive) -> Result<(Self, serde_json::Value)> {
        let meta: LearnerMeta = serde_json::from_value(ar.meta["learner"].clone())?;
        let extra = ar.meta["extra"].clone();
        let mut learner = Self::new(meta.spec, meta.config, 0)?;
        learner.restore(&mut ar, &meta)?;
        Ok((learner, extra))
    }

    /// Loads parameters into this learner, rejecting archives whose
    /// dimensions or method differ.
    pub fn load_into(&mut self, ar: Archive) -> Result<serde_json::Value> {
        let mut ar = ar;
        let meta: LearnerMeta = serde_json::from_value(ar.meta["learner"].clone())?;
        if meta.spec != self.spec || meta.config.method != self.config.method {
            return Err(Error::CheckpointShape(format!(
                "checkpoint is {} {:?}, learner is {} {:?}",
                meta.config.method, meta.spec, self.config.method, self.spec
            )));
        }
        let extra = ar.meta["extra"].clone();
        self.restore(&mut ar, &meta)?;
        Ok(extra)
    }

    fn restore(&mut self, ar: &mut Archive, meta: &LearnerMeta) -> Result<()> {
        for (prefix, stores) in [("online", &mut self.online), ("target", &mut self.target)] {
            ar.restore_store(&format!("{prefix}.q"), &mut stores.q)?;
            ar.restore_store(&format!("{prefix}.v"), &mut stores.v)?;
            ar.restore_store(&format!("{prefix}.latent"), &mut stores.latent)?;
        }
        for (prefix, opt) in [("opt.q", &mut self.q_opt), ("opt.v", &mut self.v_opt), ("opt.latent", &mut self.latent_opt)] {
            let moments = (0..opt.moments().len())
                .map(|i| ar.get(&format!("{prefix}/{i}")).cloned().ok_or_else(|| Error::CheckpointShape(format!("missing {prefix}/{i}"))))
                .collect::<Result<Vec<_>>>()?;
            opt.set_moments(moments)?;
        }
        if ar.get("replay.info").is_some() {
            self.buffer.take_from(ar, "replay")?;
        }
        self.baseline = meta.baseline;
        self.episodes = meta.episodes;
        self.last_target_copy = meta.last_target_copy;
        self.train_steps = meta.train_steps;
        let mut rng = ChaCha8Rng::from_seed(meta.rng_seed);
        rng.set_stream(meta.rng_stream);
        let pos: u128 = meta.rng_word_pos.parse().map_err(|_| Error::CheckpointShape("rng position".into()))?;
        rng.set_word_pos(pos);
        self.rng = rng;
        Ok(())
    }

    pub fn save(&self, path: &Path, extra: serde_json::Value, include_buffer: bool) -> Result<()> {
        self.to_archive(extra, include_buffer).write(path)
    }

    pub fn load(path: &Path) -> Result<(Self, serde_json::Value)> {
        Self::from_archive(Archive::read(path)?).map_err(|e| match e {
            Error::Json(j) => Error::CheckpointLoad { path: path.to_path_buf(), reason: j.to_string() },
            other => other,
        })
    }
}
