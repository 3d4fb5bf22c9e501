//! Per-agent observations and team-frame state features.
//!
//! Everything is expressed in the observing team's frame (Minus sees the
//! arena rotated by half a turn), so a policy trained on one side plays the
//! other unchanged. Layout per agent:
//!
//! * own block: hp, shield, x and y relative to the centre (in `[-1, 1]`),
//!   four move-availability flags N/S/E/W, then kind bits on mixed maps;
//! * per ally in sight: distance, dx, dy (over sight range), hp, shield,
//!   kind bits, last-action one-hot;
//! * per enemy in sight: distance, dx, dy, hp, shield, kind bits,
//!   in-shooting-range flag.
//!
//! Units out of sight or dead contribute zeros; a dead observer sees only zeros.

use super::map::EnvSpec;
use super::state::GameState;
use super::units::UnitRecord;
use crate::error::Result;
use crate::game::{AgentId, Observation, TeamId};

fn kind_bits(spec: &EnvSpec) -> usize {
    if spec.map.heterogeneous() {
        spec.map.kinds().len()
    } else {
        0
    }
}

fn push_kind(spec: &EnvSpec, u: &UnitRecord, out: &mut Vec<f64>) {
    if spec.map.heterogeneous() {
        for k in spec.map.kinds() {
            out.push((u.kind == k) as u8 as f64);
        }
    }
}

fn frac(v: f64, max: f64) -> f64 {
    if max > 0.0 {
        v / max
    } else {
        0.0
    }
}

pub fn own_block_dim(spec: &EnvSpec) -> usize {
    8 + kind_bits(spec)
}

pub fn ally_block_dim(spec: &EnvSpec) -> usize {
    5 + kind_bits(spec) + spec.map.num_actions()
}

pub fn enemy_block_dim(spec: &EnvSpec) -> usize {
    6 + kind_bits(spec)
}

pub fn obs_dim(spec: &EnvSpec) -> usize {
    let n = spec.map.team_size();
    own_block_dim(spec) + (n - 1) * ally_block_dim(spec) + n * enemy_block_dim(spec)
}

pub fn state_unit_dim(spec: &EnvSpec) -> usize {
    4 + kind_bits(spec) + spec.map.num_actions()
}

pub fn state_dim(spec: &EnvSpec) -> usize {
    2 * spec.map.team_size() * state_unit_dim(spec)
}

pub fn build_observation(state: &GameState, agent: AgentId) -> Result<Observation> {
    let spec = &*state.spec;
    let map = &spec.map;
    let me = state.unit(agent)?;
    let mask = state.action_mask(agent)?;
    let dim = obs_dim(spec);
    if !me.alive {
        return Ok(Observation { features: vec![0.0; dim], mask });
    }
    let mut f = Vec::with_capacity(dim);
    let team = agent.team;
    let (cx, cy) = map.centre();
    let me_pos = map.to_team_frame(team, me.position);
    let st = me.stats();
    f.push(frac(me.hp, st.max_hp));
    f.push(frac(me.shield, st.max_shield));
    f.push((me_pos.0 - cx) / cx);
    f.push((me_pos.1 - cy) / cy);
    for i in 0..4 {
        f.push(mask.available[1 + i] as u8 as f64);
    }
    push_kind(spec, me, &mut f);

    let sight = spec.config.sight_range;
    let rel = |u: &UnitRecord| {
        let p = map.to_team_frame(team, u.position);
        let (dx, dy) = (p.0 - me_pos.0, p.1 - me_pos.1);
        let d = (dx * dx + dy * dy).sqrt();
        (d, dx, dy)
    };

    let a = map.num_actions();
    for (i, ally) in state.team_units(team).iter().enumerate() {
        if i == agent.index {
            continue;
        }
        let (d, dx, dy) = rel(ally);
        if ally.alive && d < sight {
            let s = ally.stats();
            f.extend([d / sight, dx / sight, dy / sight, frac(ally.hp, s.max_hp), frac(ally.shield, s.max_shield)]);
            push_kind(spec, ally, &mut f);
            let mut onehot = vec![0.0; a];
            onehot[ally.last_action.0] = 1.0;
            f.extend(onehot);
        } else {
            f.extend(std::iter::repeat_n(0.0, ally_block_dim(spec)));
        }
    }

    let range = spec.shoot_range(me.kind);
    for enemy in state.team_units(team.opponent()) {
        let (d, dx, dy) = rel(enemy);
        if enemy.alive && d < sight {
            let s = enemy.stats();
            f.extend([d / sight, dx / sight, dy / sight, frac(enemy.hp, s.max_hp), frac(enemy.shield, s.max_shield)]);
            push_kind(spec, enemy, &mut f);
            f.push((d <= range) as u8 as f64);
        } else {
            f.extend(std::iter::repeat_n(0.0, enemy_block_dim(spec)));
        }
    }
    debug_assert_eq!(f.len(), dim);
    Ok(Observation { features: f, mask })
}

/// Observations of every agent of `team`, in slot order.
pub fn team_observations(state: &GameState, team: TeamId) -> Result<Vec<Observation>> {
    (0..state.team_size()).map(|i| build_observation(state, AgentId::new(team, i))).collect()
}

/// Global state summary in `team`'s frame: own units first, then opponents;
/// per unit hp, shield, centred position, kind bits and last-action one-hot.
pub fn state_features(state: &GameState, team: TeamId) -> Vec<f64> {
    let spec = &*state.spec;
    let map = &spec.map;
    let (cx, cy) = map.centre();
    let mut f = Vec::with_capacity(state_dim(spec));
    for side in [team, team.opponent()] {
        for u in state.team_units(side) {
            if !u.alive {
                f.extend(std::iter::repeat_n(0.0, state_unit_dim(spec)));
                continue;
            }
            let s = u.stats();
            let p = map.to_team_frame(team, u.position);
            f.extend([frac(u.hp, s.max_hp), frac(u.shield, s.max_shield), (p.0 - cx) / cx, (p.1 - cy) / cy]);
            push_kind(spec, u, &mut f);
            let mut onehot = vec![0.0; map.num_actions()];
            onehot[u.last_action.0] = 1.0;
            f.extend(onehot);
        }
    }
    f
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::env::{EnvConfig, MapName};
    use crate::game::{ActionId, JointAction};

    fn fresh(map: MapName, seed: u64) -> GameState {
        GameState::new_episode(Arc::new(EnvSpec::new(map, EnvConfig::default())), seed)
    }

    #[test]
    fn dims() {
        let s = fresh(MapName::TwoM, 0);
        assert_eq!(obs_dim(&s.spec), 8 + 12 + 2 * 6);
        let s = fresh(MapName::ThreeM, 0);
        assert_eq!(obs_dim(&s.spec), 8 + 2 * 13 + 3 * 6);
        let s = fresh(MapName::ThreeS5Z, 0);
        for team in TeamId::BOTH {
            for o in team_observations(&s, team).unwrap() {
                assert_eq!(o.features.len(), obs_dim(&s.spec));
            }
            assert_eq!(state_features(&s, team).len(), state_dim(&s.spec));
        }
    }

    #[test]
    fn fresh_episode_hides_enemies() {
        let s = fresh(MapName::ThreeM, 5);
        let spec = &s.spec;
        let start = own_block_dim(spec) + 2 * ally_block_dim(spec);
        for team in TeamId::BOTH {
            for o in team_observations(&s, team).unwrap() {
                assert!(o.features[start..].iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn centre_agent_has_zero_offset() {
        let mut s = fresh(MapName::ThreeM, 0);
        s.units[0].position = s.spec.map.centre();
        let o = build_observation(&s, AgentId::new(TeamId::Plus, 0)).unwrap();
        assert_eq!(&o.features[2..4], &[0.0, 0.0]);
    }

    #[test]
    fn enemy_in_range_flag_and_attack() {
        let mut s = fresh(MapName::ThreeM, 0);
        s.units[0].position = (10.0, 8.0);
        s.units[3].position = (14.0, 8.0); // distance 4
        s.units[4].position = (10.0, 16.0); // distance 8: seen, out of range
        s.units[5].position = (22.0, 8.0); // unseen
        let o = build_observation(&s, AgentId::new(TeamId::Plus, 0)).unwrap();
        let spec = &s.spec;
        let e0 = own_block_dim(spec) + 2 * ally_block_dim(spec);
        let ed = enemy_block_dim(spec);
        assert_eq!(o.features[e0 + ed - 1], 1.0);
        assert_eq!(o.features[e0 + 2 * ed - 1], 0.0);
        assert!(o.features[e0 + ed..e0 + 2 * ed - 1].iter().any(|&v| v != 0.0));
        assert!(o.features[e0 + 2 * ed..e0 + 3 * ed].iter().all(|&v| v == 0.0));
        assert!(o.mask.is_available(ActionId::attack(0)));
        assert!(!o.mask.is_available(ActionId::attack(1)));
        assert!(!o.mask.is_available(ActionId::attack(2)));
    }

    #[test]
    fn ally_last_action_visible() {
        let mut s = fresh(MapName::ThreeM, 0);
        s.units[0].position = (10.0, 8.0);
        s.units[1].position = (10.0, 9.0);
        s.units[5].position = (13.0, 9.0);
        let mut j = JointAction::no_ops(3);
        j.plus[1] = ActionId::attack(2);
        let (next, _) = s.step(&j).unwrap();
        let o = build_observation(&next, AgentId::new(TeamId::Plus, 0)).unwrap();
        let base = own_block_dim(&s.spec) + 5;
        let onehot = &o.features[base..base + 8];
        assert_eq!(onehot.iter().position(|&v| v == 1.0), Some(ActionId::attack(2).0));
        assert_eq!(onehot.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn north_wall_flag() {
        let mut s = fresh(MapName::ThreeM, 0);
        s.units[0].position = (5.0, s.spec.map.height);
        let o = build_observation(&s, AgentId::new(TeamId::Plus, 0)).unwrap();
        assert_eq!(o.features[4], 0.0);
        assert_eq!(o.features[5], 1.0);
    }

    #[test]
    fn dead_observer_sees_nothing() {
        let mut s = fresh(MapName::ThreeM, 0);
        s.units[2].alive = false;
        s.units[2].hp = 0.0;
        let o = build_observation(&s, AgentId::new(TeamId::Plus, 2)).unwrap();
        assert!(o.features.iter().all(|&v| v == 0.0));
        assert_eq!(o.mask.count(), 1);
    }
}
