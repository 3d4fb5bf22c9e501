//! The scripted opponent: walk toward the opposing start zone, stop once
//! inside it, and shoot the nearest enemy whenever one is in range.

use serde::{Deserialize, Serialize};

use crate::env::{GameState, Zone};
use crate::error::{Error, Result};
use crate::game::{ActionId, AgentId, Direction, TeamId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Advancing,
    Holding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeuristicState {
    pub phases: Vec<Phase>,
    /// Opposing start zone in world coordinates.
    pub target_zone: Zone,
}

impl HeuristicState {
    pub fn new(state: &GameState, team: TeamId) -> Self {
        Self { phases: vec![Phase::Advancing; state.team_size()], target_zone: state.spec.map.start_zone(team.opponent()) }
    }
}

/// One agent's action. Attack beats movement; distance ties go to the lowest
/// enemy slot and movement ties follow N, S, E, W order.
pub fn heuristic_action(state: &GameState, agent: AgentId, hstate: &HeuristicState) -> Result<(ActionId, HeuristicState)> {
    let me = state.unit(agent)?;
    let mask = state.action_mask(agent)?;
    let mut next = hstate.clone();
    if !me.alive {
        return Ok((ActionId::NO_OP, next));
    }
    if hstate.target_zone.contains(me.position) {
        next.phases[agent.index] = Phase::Holding;
    }

    let mut best: Option<(f64, usize)> = None;
    for (k, e) in state.team_units(agent.team.opponent()).iter().enumerate() {
        if !mask.is_available(ActionId::attack(k)) {
            continue;
        }
        let d = me.distance_to(e);
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, k));
        }
    }
    if let Some((_, k)) = best {
        return Ok((ActionId::attack(k), next));
    }

    if next.phases[agent.index] == Phase::Advancing {
        let goal = hstate.target_zone.centre();
        let dist = |p: (f64, f64)| ((p.0 - goal.0).powi(2) + (p.1 - goal.1).powi(2)).sqrt();
        let mut choice: Option<(f64, ActionId)> = None;
        for dir in Direction::ALL {
            let a = ActionId::movement(dir);
            if !mask.is_available(a) {
                continue;
            }
            let (dx, dy) = state.world_delta(agent.team, dir);
            let d = dist((me.position.0 + dx, me.position.1 + dy));
            if choice.is_none_or(|(cd, _)| d < cd) {
                choice = Some((d, a));
            }
        }
        if let Some((d, a)) = choice {
            if d < dist(me.position) {
                return Ok((a, next));
            }
        }
    }
    Ok((ActionId::NO_OP, next))
}

/// Actions for a whole team, advancing its heuristic state.
pub fn heuristic_team_actions(state: &GameState, team: TeamId, hstate: &mut HeuristicState) -> Result<Vec<ActionId>> {
    let mut out = Vec::with_capacity(state.team_size());
    for i in 0..state.team_size() {
        let (a, next) = heuristic_action(state, AgentId::new(team, i), hstate)?;
        *hstate = next;
        out.push(a);
    }
    Ok(out)
}

/// Interface for the engine's built-in target-priority AI. Not implemented.
#[derive(Debug, Clone, Default)]
pub struct PriorityScoreAi;

impl PriorityScoreAi {
    pub fn action(&self, _state: &GameState, _agent: AgentId) -> Result<ActionId> {
        Err(Error::Unsupported("built-in priority-score AI".into()))
    }
}
