//! Learning scenarios: a team against the heuristic, self-play, and a
//! population of teams matched uniformly against each other.
//!
//! A team's consumed samples are the summed lengths of its episodes times the
//! number of sides it controlled, so a self-play episode is charged twice.
//! Exploration anneals on consumed samples.

use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::env::EnvSpec;
use crate::error::{Error, Result};
use crate::game::{TeamId, Winner};
use crate::learn::{LearnerSpec, PolicySnapshot, TeamLearner};
use crate::play::{derive_seed, play_episode, Controller, EpisodeResult};

pub const WORKERS_ENV: &str = "TEAMDUEL_WORKERS";
const EPISODE_STREAM: u64 = 0x45_5049;
const MATCH_STREAM: u64 = 0x4d_4154;
const TEAM_STREAM: u64 = 0x54_4541;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    VsHeuristic,
    SelfPlay,
    Population,
}

impl ScenarioKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::VsHeuristic => "vs_heuristic",
            ScenarioKind::SelfPlay => "self_play",
            ScenarioKind::Population => "population",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    /// Number of learning teams in a population run.
    pub population_size: usize,
    /// Samples each learning team consumes before the run stops.
    pub sample_budget: u64,
    pub checkpoint_every: u64,
    pub update_every_episodes: u64,
    pub epsilon_start: f64,
    pub epsilon_floor: f64,
    pub epsilon_anneal_steps: u64,
    /// Rollout workers; the environment variable `TEAMDUEL_WORKERS` overrides it.
    pub workers: Option<usize>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            kind: ScenarioKind::VsHeuristic,
            population_size: 5,
            sample_budget: 10_000_000,
            checkpoint_every: 200_000,
            update_every_episodes: 8,
            epsilon_start: 1.0,
            epsilon_floor: 0.05,
            epsilon_anneal_steps: 2_000_000,
            workers: None,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("scenario.population_size", self.kind != ScenarioKind::Population || self.population_size >= 2),
            ("scenario.sample_budget", self.sample_budget > 0),
            ("scenario.checkpoint_every", self.checkpoint_every > 0),
            ("scenario.update_every_episodes", self.update_every_episodes > 0),
            ("scenario.epsilon_start", (0.0..=1.0).contains(&self.epsilon_start)),
            ("scenario.epsilon_floor", (0.0..=self.epsilon_start).contains(&self.epsilon_floor)),
            ("scenario.epsilon_anneal_steps", self.epsilon_anneal_steps > 0),
            ("scenario.workers", self.workers.is_none_or(|w| w > 0)),
        ];
        for (key, ok) in checks {
            if !ok {
                return Err(Error::config(key, "out of range"));
            }
        }
        Ok(())
    }

    pub fn num_teams(&self) -> usize {
        match self.kind {
            ScenarioKind::Population => self.population_size,
            _ => 1,
        }
    }
}

/// Linear decay from `epsilon_start` to `epsilon_floor` over the anneal steps.
pub fn anneal_epsilon(t: u64, cfg: &ScenarioConfig) -> f64 {
    let frac = t as f64 / cfg.epsilon_anneal_steps as f64;
    (cfg.epsilon_start - (cfg.epsilon_start - cfg.epsilon_floor) * frac).max(cfg.epsilon_floor)
}

/// True once every `every` episodes.
pub fn should_update(episodes_done: u64, every: u64) -> bool {
    episodes_done > 0 && episodes_done % every == 0
}

/// A population pairing: `sides[0]` plays Plus, `sides[1]` plays Minus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Matchup {
    pub focal: usize,
    pub opponent: usize,
    pub sides: [usize; 2],
}

/// Opponent drawn uniformly from the whole population, the focal team
/// included; sides by a fair coin.
pub fn sample_matchup(focal: usize, population: usize, rng: &mut impl Rng) -> Matchup {
    let opponent = rng.gen_range(0..population);
    let sides = if rng.gen::<bool>() { [focal, opponent] } else { [opponent, focal] };
    Matchup { focal, opponent, sides }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
enum Side {
    Team(usize),
    Heuristic,
}

#[derive(Debug, Clone, Copy)]
struct Plan {
    index: u64,
    seed: u64,
    sides: [Side; 2],
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeamLedger {
    pub consumed: u64,
    pub env_steps: u64,
    pub episodes: u64,
    pub episodes_plus: u64,
    pub episodes_minus: u64,
    pub train_steps: u64,
    pub checkpoints: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunLedger {
    pub teams: Vec<TeamLedger>,
    pub env_steps: u64,
    pub episodes: u64,
}

/// One metrics.csv row: one side of one episode played by a learning team.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub episode: u64,
    pub team: usize,
    pub side: String,
    pub opponent: String,
    pub length: u64,
    pub consumed: u64,
    pub epsilon: f64,
    pub episode_return: f64,
    pub outcome: String,
    pub loss: Option<f64>,
}

pub fn outcome_label(w: Winner, team: TeamId) -> &'static str {
    match w.score_for(team) {
        Some(s) if s == 1.0 => "win",
        Some(s) if s == 0.0 => "loss",
        _ => "draw",
    }
}

/// Entry of a run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub team: usize,
    pub timestep: u64,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub method: String,
    pub scenario: String,
    pub map: String,
    pub seed: u64,
    pub metrics: String,
    pub checkpoints: Vec<CheckpointEntry>,
}

impl RunManifest {
    pub const FILE: &'static str = "manifest.json";

    pub fn load(run_dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(run_dir.join(Self::FILE))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Checks every referenced file exists and matches its recorded digest.
    pub fn verify(&self, run_dir: &Path) -> Result<()> {
        for c in &self.checkpoints {
            let path = run_dir.join(&c.path);
            let bytes = fs::read(&path).map_err(|e| Error::CheckpointLoad { path: path.clone(), reason: e.to_string() })?;
            if hex_digest(&bytes) != c.sha256 {
                return Err(Error::Corruption { path, reason: "digest differs from manifest".into() });
            }
        }
        if !run_dir.join(&self.metrics).exists() {
            return Err(Error::MissingData(format!("{} not found", self.metrics)));
        }
        Ok(())
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize, Deserialize)]
struct TrainerState {
    config: RunConfig,
    ledger: RunLedger,
}

/// Number of rollout workers: the environment override, then the config,
/// then one less than the available cores.
pub fn resolve_workers(cfg: &ScenarioConfig) -> usize {
    if let Some(w) = std::env::var(WORKERS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        return w.max(1);
    }
    cfg.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get().saturating_sub(1)).max(1))
}

pub fn checkpoint_path(team: usize, timestep: u64) -> PathBuf {
    PathBuf::from("checkpoints").join(format!("team{team}")).join(format!("{timestep:010}.tdar"))
}

/// Drives one scenario. Workers generate episodes in chunks from the policies
/// at the start of the chunk; results are applied in episode order, so runs
/// with one worker are exactly reproducible and resumable.
pub struct Trainer {
    pub config: RunConfig,
    pub spec: Arc<EnvSpec>,
    pub teams: Vec<TeamLearner>,
    pub ledger: RunLedger,
    pub workers: usize,
    run_dir: Option<PathBuf>,
    metrics: Option<csv::Writer<File>>,
    last_loss: Vec<Option<f64>>,
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
}

impl Trainer {
    /// Trainer that keeps everything in memory.
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let spec = Arc::new(config.env_spec());
        let lspec = LearnerSpec::from_env(&spec);
        let n = config.scenario.num_teams();
        let teams = (0..n)
            .map(|i| TeamLearner::new(lspec, config.learner, derive_seed(config.seed ^ TEAM_STREAM, i as u64)))
            .collect::<Result<Vec<_>>>()?;
        let workers = resolve_workers(&config.scenario);
        Ok(Self {
            ledger: RunLedger { teams: vec![TeamLedger::default(); n], ..Default::default() },
            config,
            spec,
            teams,
            workers,
            run_dir: None,
            metrics: None,
            last_loss: vec![None; n],
            #[cfg(feature = "parallel")]
            pool: None,
        })
    }

    /// Fresh run writing into `dir`.
    pub fn create(config: RunConfig, dir: &Path) -> Result<Self> {
        let mut t = Self::new(config)?;
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.toml"), t.config.to_toml_string())?;
        t.attach(dir, false)?;
        Ok(t)
    }

    /// Continues the run saved in `dir`. Only the sample budget and worker
    /// count may differ from the saved config.
    pub fn resume(config: RunConfig, dir: &Path) -> Result<Self> {
        let state_dir = dir.join("state");
        let text = fs::read_to_string(state_dir.join("trainer.json"))
            .map_err(|e| Error::ResumeMismatch(format!("no resumable state in {}: {e}", dir.display())))?;
        let saved: TrainerState = serde_json::from_str(&text)?;
        let mut a = saved.config.clone();
        let mut b = config.clone();
        for c in [&mut a, &mut b] {
            c.scenario.sample_budget = 0;
            c.scenario.workers = None;
        }
        if a != b {
            return Err(Error::ResumeMismatch("config differs from the saved run beyond the sample budget".into()));
        }
        let mut t = Self::new(config)?;
        for (i, team) in t.teams.iter_mut().enumerate() {
            let (learner, _) = TeamLearner::load(&state_dir.join(format!("team{i}.tdar")))?;
            if learner.spec != team.spec || learner.config != team.config {
                return Err(Error::ResumeMismatch(format!("team {i} state does not match the config")));
            }
            *team = learner;
        }
        t.ledger = saved.ledger;
        fs::write(dir.join("config.toml"), t.config.to_toml_string())?;
        t.attach(dir, true)?;
        Ok(t)
    }

    fn attach(&mut self, dir: &Path, append: bool) -> Result<()> {
        let path = dir.join("metrics.csv");
        let has_rows = append && path.exists() && fs::metadata(&path)?.len() > 0;
        let file = OpenOptions::new().create(true).append(true).truncate(false).open(&path)?;
        if !append {
            file.set_len(0)?;
        }
        self.metrics = Some(csv::WriterBuilder::new().has_headers(!has_rows).from_writer(file));
        self.run_dir = Some(dir.to_path_buf());
        Ok(())
    }

    pub fn run_dir(&self) -> Option<&Path> {
        self.run_dir.as_deref()
    }

    pub fn is_done(&self) -> bool {
        self.ledger.teams.iter().all(|t| t.consumed >= self.config.scenario.sample_budget)
    }

    fn plan(&self, index: u64) -> Plan {
        let seed = derive_seed(self.config.seed ^ EPISODE_STREAM, index);
        let sides = match self.config.scenario.kind {
            ScenarioKind::VsHeuristic if index % 2 == 0 => [Side::Team(0), Side::Heuristic],
            ScenarioKind::VsHeuristic => [Side::Heuristic, Side::Team(0)],
            ScenarioKind::SelfPlay => [Side::Team(0), Side::Team(0)],
            ScenarioKind::Population => {
                let p = self.teams.len();
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed ^ MATCH_STREAM, index));
                let m = sample_matchup((index % p as u64) as usize, p, &mut rng);
                [Side::Team(m.sides[0]), Side::Team(m.sides[1])]
            }
        };
        Plan { index, seed, sides }
    }

    fn play_chunk(&mut self, plans: &[Plan], snaps: &[PolicySnapshot], eps: &[f64]) -> Result<Vec<EpisodeResult>> {
        let spec = &self.spec;
        let run = |p: &Plan| {
            let c = |s: Side| match s {
                Side::Team(i) => Controller::Learned { policy: &snaps[i], epsilon: eps[i], explore_latent: true },
                Side::Heuristic => Controller::Heuristic,
            };
            play_episode(spec, p.seed, c(p.sides[0]), c(p.sides[1]), true)
        };
        #[cfg(feature = "parallel")]
        if plans.len() > 1 {
            use rayon::prelude::*;
            if self.pool.is_none() {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(self.workers)
                    .build()
                    .map_err(|e| Error::Unsupported(format!("worker pool: {e}")))?;
                self.pool = Some(pool);
            }
            let pool = self.pool.as_ref().expect("pool built");
            return pool.install(|| plans.par_iter().map(run).collect());
        }
        plans.iter().map(run).collect()
    }

    /// Plays and applies up to one chunk of episodes. Returns false once the
    /// budget is met.
    pub fn step_chunk(&mut self) -> Result<bool> {
        if self.is_done() {
            return Ok(false);
        }
        let plans: Vec<Plan> = (0..self.workers as u64).map(|k| self.plan(self.ledger.episodes + k)).collect();
        let snaps: Vec<PolicySnapshot> = self.teams.iter().map(|t| t.snapshot()).collect();
        let eps: Vec<f64> = self.ledger.teams.iter().map(|t| anneal_epsilon(t.consumed, &self.config.scenario)).collect();
        let results = self.play_chunk(&plans, &snaps, &eps)?;
        for (plan, result) in plans.iter().zip(results) {
            self.apply(plan, result, &eps)?;
            if self.is_done() {
                break;
            }
        }
        Ok(!self.is_done())
    }

    fn apply(&mut self, plan: &Plan, mut result: EpisodeResult, eps: &[f64]) -> Result<()> {
        let len = result.length as u64;
        self.ledger.env_steps += len;
        self.ledger.episodes = plan.index + 1;
        let mut touched: Vec<usize> = Vec::with_capacity(2);
        for (k, team) in TeamId::BOTH.into_iter().enumerate() {
            if let Side::Team(i) = plan.sides[k] {
                let tl = &mut self.ledger.teams[i];
                tl.consumed += len;
                match team {
                    TeamId::Plus => tl.episodes_plus += 1,
                    TeamId::Minus => tl.episodes_minus += 1,
                }
                let mut record = result.records[k].take().expect("learned sides are recorded");
                record.id = plan.index;
                self.teams[i].observe_episode(record)?;
                if !touched.contains(&i) {
                    touched.push(i);
                }
            }
        }
        self.last_loss.iter_mut().for_each(|l| *l = None);
        for &i in &touched {
            let tl = &mut self.ledger.teams[i];
            tl.env_steps += len;
            tl.episodes += 1;
            let episodes = tl.episodes;
            self.teams[i].note_episodes(1);
            if should_update(episodes, self.config.scenario.update_every_episodes) {
                if let Some(stats) = self.teams[i].train_step()? {
                    self.ledger.teams[i].train_steps += 1;
                    self.last_loss[i] = Some(stats.loss);
                }
            }
        }
        if let Some(w) = self.metrics.as_mut() {
            for (k, team) in TeamId::BOTH.into_iter().enumerate() {
                if let Side::Team(i) = plan.sides[k] {
                    let opponent = match plan.sides[1 - k] {
                        Side::Heuristic => "heuristic".to_string(),
                        Side::Team(j) if j == i => "self".to_string(),
                        Side::Team(j) => format!("team{j}"),
                    };
                    w.serialize(MetricsRow {
                        episode: plan.index,
                        team: i,
                        side: if team == TeamId::Plus { "plus" } else { "minus" }.into(),
                        opponent,
                        length: len,
                        consumed: self.ledger.teams[i].consumed,
                        epsilon: eps[i],
                        episode_return: result.returns[k],
                        outcome: outcome_label(result.winner, team).into(),
                        loss: self.last_loss[i],
                    })?;
                }
            }
        }
        for &i in &touched {
            self.write_due_checkpoints(i)?;
        }
        Ok(())
    }

    fn write_due_checkpoints(&mut self, i: usize) -> Result<()> {
        let sc = &self.config.scenario;
        let reached = self.ledger.teams[i].consumed.min(sc.sample_budget);
        loop {
            let next = (self.ledger.teams[i].checkpoints + 1) * sc.checkpoint_every;
            if next > reached {
                return Ok(());
            }
            if let Some(dir) = &self.run_dir {
                let path = dir.join(checkpoint_path(i, next));
                fs::create_dir_all(path.parent().expect("checkpoint dir"))?;
                let extra = serde_json::json!({
                    "team": i,
                    "timestep": next,
                    "consumed": self.ledger.teams[i].consumed,
                    "method": self.config.learner.method.as_str(),
                    "scenario": self.config.scenario.kind.as_str(),
                    "map": self.config.map.as_str(),
                    "seed": self.config.seed,
                });
                self.teams[i].save(&path, extra, false)?;
            }
            self.ledger.teams[i].checkpoints += 1;
        }
    }

    /// Trains until every team has consumed its budget, then writes the
    /// resumable state, ledger and manifest. `progress` sees the ledger after
    /// every chunk.
    pub fn run(&mut self, mut progress: impl FnMut(&RunLedger)) -> Result<&RunLedger> {
        while self.step_chunk()? {
            progress(&self.ledger);
        }
        progress(&self.ledger);
        self.finish()?;
        Ok(&self.ledger)
    }

    fn finish(&mut self) -> Result<()> {
        if let Some(w) = self.metrics.as_mut() {
            w.flush()?;
        }
        let Some(dir) = self.run_dir.clone() else { return Ok(()) };
        let state_dir = dir.join("state");
        fs::create_dir_all(&state_dir)?;
        for (i, team) in self.teams.iter().enumerate() {
            team.save(&state_dir.join(format!("team{i}.tdar")), serde_json::json!({ "team": i }), true)?;
        }
        let state = TrainerState { config: self.config.clone(), ledger: self.ledger.clone() };
        fs::write(state_dir.join("trainer.json"), serde_json::to_string_pretty(&state)?)?;
        fs::write(dir.join("ledger.json"), serde_json::to_string_pretty(&self.ledger)?)?;
        self.write_manifest(&dir)
    }

    fn write_manifest(&self, dir: &Path) -> Result<()> {
        let mut checkpoints = Vec::new();
        for (i, tl) in self.ledger.teams.iter().enumerate() {
            for k in 1..=tl.checkpoints {
                let timestep = k * self.config.scenario.checkpoint_every;
                let rel = checkpoint_path(i, timestep);
                let bytes = fs::read(dir.join(&rel))?;
                checkpoints.push(CheckpointEntry {
                    team: i,
                    timestep,
                    path: rel.to_string_lossy().replace('\\', "/"),
                    sha256: hex_digest(&bytes),
                });
            }
        }
        let manifest = RunManifest {
            version: 1,
            method: self.config.learner.method.as_str().into(),
            scenario: self.config.scenario.kind.as_str().into(),
            map: self.config.map.as_str().into(),
            seed: self.config.seed,
            metrics: "metrics.csv".into(),
            checkpoints,
        };
        fs::write(dir.join(RunManifest::FILE), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }
}
