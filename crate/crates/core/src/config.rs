//! Run configuration files.
//!
//! A config is a TOML document. Missing keys take defaults that depend on
//! the map and on the chosen preset; unknown keys are rejected with their
//! full key path.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, EnvSpec, MapName};
use crate::error::{Error, Result};
use crate::learn::LearnerConfig;
use crate::train::{ScenarioConfig, ScenarioKind};

/// Default scale of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Budgets and buffer sizes of the original experiments.
    Paper,
    /// Budget 10⁶, anneal 2×10⁵, buffer 500, checkpoints every 2×10⁴.
    Desk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub map: MapName,
    pub seed: u64,
    pub preset: Preset,
    pub scenario: ScenarioConfig,
    pub env: EnvConfig,
    pub learner: LearnerConfig,
}

impl RunConfig {
    /// Fully defaulted config for a map and preset.
    pub fn defaults(map: MapName, preset: Preset) -> Self {
        let mut scenario = ScenarioConfig {
            update_every_episodes: match map {
                MapName::ThreeM | MapName::TwoM => 8,
                MapName::ThreeS5Z => 1,
            },
            ..ScenarioConfig::default()
        };
        let mut learner = LearnerConfig::default();
        if preset == Preset::Desk {
            scenario.sample_budget = 1_000_000;
            scenario.epsilon_anneal_steps = 200_000;
            scenario.checkpoint_every = 20_000;
            learner.buffer_size = 500;
        }
        Self { map, seed: 0, preset, scenario, env: EnvConfig::default(), learner }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::config("<document>", e.message()))?;
        let map: MapName = match user.get("map") {
            Some(v) => v.clone().try_into().map_err(|_| Error::config("map", "expected one of 3m, 3s5z, 2m"))?,
            None => return Err(Error::config("map", "missing")),
        };
        let preset: Preset = match user.get("preset") {
            Some(v) => v.clone().try_into().map_err(|_| Error::config("preset", "expected paper or desk"))?,
            None => Preset::Paper,
        };
        let mut merged = toml::Table::try_from(Self::defaults(map, preset)).expect("defaults serialise");
        merge(&mut merged, user);
        let config: RunConfig = serde_path_to_error::deserialize(toml::Value::Table(merged)).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().message())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// The resolved config, every key written out.
    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.env.validate()?;
        self.learner.validate()
    }

    pub fn env_spec(&self) -> EnvSpec {
        EnvSpec::new(self.map, self.env)
    }

    pub fn scenario_kind(&self) -> ScenarioKind {
        self.scenario.kind
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
