//! Deterministic two-team micro-combat arena with the 3m and 3s5z unit
//! mechanics, plus a small 2m map for desk-scale experiments.

pub mod map;
pub mod observe;
pub mod state;
pub mod trace;
pub mod units;

pub use map::{EnvConfig, EnvSpec, MapName, MapSpec, RewardModel, Zone};
pub use observe::{build_observation, obs_dim, state_dim, state_features, team_observations};
pub use state::{compute_rewards, regen_shields, resolve_attack, winner, GameState};
pub use units::{UnitKind, UnitRecord, UnitStats};
