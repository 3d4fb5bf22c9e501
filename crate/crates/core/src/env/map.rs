use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::units::UnitKind;
use crate::error::{Error, Result};
use crate::game::TeamId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MapName {
    /// Three marines per team, 100 steps.
    #[serde(rename = "3m")]
    ThreeM,
    /// Three stalkers and five zealots per team, 150 steps.
    #[serde(rename = "3s5z")]
    ThreeS5Z,
    /// Two marines per team on a small arena. Desk-scale test map.
    #[serde(rename = "2m")]
    TwoM,
}

impl MapName {
    pub fn as_str(self) -> &'static str {
        match self {
            MapName::ThreeM => "3m",
            MapName::ThreeS5Z => "3s5z",
            MapName::TwoM => "2m",
        }
    }
}

impl fmt::Display for MapName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MapName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "3m" => Ok(MapName::ThreeM),
            "3s5z" => Ok(MapName::ThreeS5Z),
            "2m" => Ok(MapName::TwoM),
            other => Err(Error::config("map", format!("unknown map `{other}` (expected 3m, 3s5z or 2m)"))),
        }
    }
}

/// Axis-aligned rectangle in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Zone {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Zone {
    pub fn contains(&self, p: (f64, f64)) -> bool {
        p.0 >= self.x_min && p.0 <= self.x_max && p.1 >= self.y_min && p.1 <= self.y_max
    }

    pub fn centre(&self) -> (f64, f64) {
        ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSpec {
    pub name: MapName,
    pub composition: Vec<UnitKind>,
    pub episode_limit: u32,
    pub width: f64,
    pub height: f64,
    /// Start zone of Plus (west). Minus starts in its point reflection (east).
    pub plus_zone: Zone,
    /// Formation offsets from the zone centre, one per unit, in the team frame.
    pub formation: Vec<(f64, f64)>,
}

impl MapSpec {
    pub fn new(name: MapName) -> Self {
        match name {
            MapName::ThreeM => Self {
                name,
                composition: vec![UnitKind::Marine; 3],
                episode_limit: 100,
                width: 24.0,
                height: 16.0,
                plus_zone: Zone { x_min: 3.0, x_max: 7.0, y_min: 5.0, y_max: 11.0 },
                formation: vec![(0.0, -2.0), (0.0, 0.0), (0.0, 2.0)],
            },
            MapName::ThreeS5Z => {
                let mut composition = vec![UnitKind::Stalker; 3];
                composition.extend([UnitKind::Zealot; 5]);
                Self {
                    name,
                    composition,
                    episode_limit: 150,
                    width: 32.0,
                    height: 20.0,
                    plus_zone: Zone { x_min: 3.0, x_max: 9.0, y_min: 4.0, y_max: 16.0 },
                    formation: vec![
                        (-1.5, -2.0),
                        (-1.5, 0.0),
                        (-1.5, 2.0),
                        (1.5, -4.0),
                        (1.5, -2.0),
                        (1.5, 0.0),
                        (1.5, 2.0),
                        (1.5, 4.0),
                    ],
                }
            }
            MapName::TwoM => Self {
                name,
                composition: vec![UnitKind::Marine; 2],
                episode_limit: 60,
                width: 16.0,
                height: 12.0,
                plus_zone: Zone { x_min: 1.0, x_max: 4.0, y_min: 3.0, y_max: 9.0 },
                formation: vec![(0.0, -1.0), (0.0, 1.0)],
            },
        }
    }

    pub fn team_size(&self) -> usize {
        self.composition.len()
    }

    pub fn num_actions(&self) -> usize {
        crate::game::ActionId::num_actions(self.team_size())
    }

    pub fn centre(&self) -> (f64, f64) {
        (self.width / 2.0, self.height / 2.0)
    }

    /// True when more than one unit kind appears; observations then carry kind bits.
    pub fn heterogeneous(&self) -> bool {
        self.composition.iter().any(|&k| k != self.composition[0])
    }

    pub fn kinds(&self) -> Vec<UnitKind> {
        let mut kinds: Vec<UnitKind> = UnitKind::ALL.into_iter().filter(|k| self.composition.contains(k)).collect();
        kinds.dedup();
        kinds
    }

    /// Point reflection through the arena centre.
    pub fn reflect(&self, p: (f64, f64)) -> (f64, f64) {
        (self.width - p.0, self.height - p.1)
    }

    /// Converts between world coordinates and `team`'s frame (an involution).
    pub fn to_team_frame(&self, team: TeamId, p: (f64, f64)) -> (f64, f64) {
        match team {
            TeamId::Plus => p,
            TeamId::Minus => self.reflect(p),
        }
    }

    /// Start zone of `team` in world coordinates.
    pub fn start_zone(&self, team: TeamId) -> Zone {
        match team {
            TeamId::Plus => self.plus_zone,
            TeamId::Minus => {
                let (a, b) = (
                    self.reflect((self.plus_zone.x_min, self.plus_zone.y_min)),
                    self.reflect((self.plus_zone.x_max, self.plus_zone.y_max)),
                );
                Zone { x_min: b.0, x_max: a.0, y_min: b.1, y_max: a.1 }
            }
        }
    }

    pub fn in_bounds(&self, p: (f64, f64)) -> bool {
        p.0 >= 0.0 && p.0 <= self.width && p.1 >= 0.0 && p.1 <= self.height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardModel {
    pub damage_weight: f64,
    pub kill_bonus: f64,
    pub win_bonus: f64,
    /// Divisor applied to the raw reward. `None` scales the best possible
    /// episode return to `reward_scale`.
    pub normaliser: Option<f64>,
    pub reward_scale: f64,
}

impl Default for RewardModel {
    fn default() -> Self {
        Self { damage_weight: 1.0, kill_bonus: 10.0, win_bonus: 200.0, normaliser: None, reward_scale: 20.0 }
    }
}

/// Tunable mechanics. Defaults: sight 9, shoot 6, zealot melee 1, speed 1,
/// shield regeneration of 2 points per step after 10 undamaged steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub sight_range: f64,
    pub shoot_range: f64,
    pub melee_range: f64,
    pub move_speed: f64,
    pub regen_delay: u32,
    pub regen_rate: f64,
    /// Maximum start-position jitter, quantised to quarter units.
    pub start_jitter: f64,
    pub reward: RewardModel,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            sight_range: 9.0,
            shoot_range: 6.0,
            melee_range: 1.0,
            move_speed: 1.0,
            regen_delay: 10,
            regen_rate: 2.0,
            start_jitter: 0.5,
            reward: RewardModel::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("env.sight_range", self.sight_range > 0.0),
            ("env.shoot_range", self.shoot_range > 0.0 && self.shoot_range < self.sight_range),
            ("env.melee_range", self.melee_range > 0.0),
            ("env.move_speed", self.move_speed > 0.0),
            ("env.regen_rate", self.regen_rate >= 0.0),
            ("env.start_jitter", self.start_jitter >= 0.0),
            ("env.reward.damage_weight", self.reward.damage_weight >= 0.0),
            ("env.reward.kill_bonus", self.reward.kill_bonus >= 0.0),
            ("env.reward.win_bonus", self.reward.win_bonus >= 0.0),
            ("env.reward.normaliser", self.reward.normaliser.is_none_or(|n| n > 0.0)),
            ("env.reward.reward_scale", self.reward.reward_scale > 0.0),
        ];
        for (key, ok) in checks {
            if !ok {
                return Err(Error::config(key, "out of range"));
            }
        }
        Ok(())
    }
}

/// A map together with its mechanics; shared by every state of an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub map: MapSpec,
    pub config: EnvConfig,
}

impl EnvSpec {
    pub fn new(map: MapName, config: EnvConfig) -> Self {
        Self { map: MapSpec::new(map), config }
    }

    pub fn shoot_range(&self, kind: UnitKind) -> f64 {
        if kind.stats().melee {
            self.config.melee_range
        } else {
            self.config.shoot_range
        }
    }

    /// Divisor turning raw reward points into the emitted reward.
    pub fn reward_normaliser(&self) -> f64 {
        let r = &self.config.reward;
        r.normaliser.unwrap_or_else(|| {
            let max_health: f64 = self
                .map
                .composition
                .iter()
                .map(|k| {
                    let s = k.stats();
                    s.max_hp + s.max_shield
                })
                .sum();
            let best = r.damage_weight * max_health + r.kill_bonus * self.map.team_size() as f64 + r.win_bonus;
            best / r.reward_scale
        })
    }
}
