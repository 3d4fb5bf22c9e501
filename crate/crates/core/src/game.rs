//! Vocabulary of the two-team Markov game shared by the environment, the
//! scripted policies and the learners.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TeamId {
    Plus,
    Minus,
}

impl TeamId {
    pub const BOTH: [TeamId; 2] = [TeamId::Plus, TeamId::Minus];

    pub fn opponent(self) -> TeamId {
        match self {
            TeamId::Plus => TeamId::Minus,
            TeamId::Minus => TeamId::Plus,
        }
    }

    /// `+1` or `-1`.
    pub fn sign(self) -> i32 {
        match self {
            TeamId::Plus => 1,
            TeamId::Minus => -1,
        }
    }

    /// 0 for Plus, 1 for Minus.
    pub fn index(self) -> usize {
        match self {
            TeamId::Plus => 0,
            TeamId::Minus => 1,
        }
    }
}

impl std::ops::Neg for TeamId {
    type Output = TeamId;
    fn neg(self) -> TeamId {
        self.opponent()
    }
}

impl fmt::Display for TeamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TeamId::Plus => "+1",
            TeamId::Minus => "-1",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AgentId {
    pub team: TeamId,
    pub index: usize,
}

impl AgentId {
    pub fn new(team: TeamId, index: usize) -> Self {
        Self { team, index }
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.team, self.index)
    }
}

/// Movement directions in the acting team's own frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    North,
    South,
    East,
    West,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::North, Direction::South, Direction::East, Direction::West];

    /// Unit displacement `(dx, dy)`; north is `+y`, east is `+x`.
    pub fn delta(self) -> (f64, f64) {
        match self {
            Direction::North => (0.0, 1.0),
            Direction::South => (0.0, -1.0),
            Direction::East => (1.0, 0.0),
            Direction::West => (-1.0, 0.0),
        }
    }
}

/// Index into an agent's action space: 0 no-op, 1..=4 moves (N, S, E, W),
/// `5 + k` attacks opponent slot `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActionId(pub usize);

pub const NUM_NON_ATTACK_ACTIONS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    NoOp,
    Move(Direction),
    Attack(usize),
}

impl ActionId {
    pub const NO_OP: ActionId = ActionId(0);

    pub fn num_actions(team_size: usize) -> usize {
        NUM_NON_ATTACK_ACTIONS + team_size
    }

    pub fn attack(slot: usize) -> ActionId {
        ActionId(NUM_NON_ATTACK_ACTIONS + slot)
    }

    pub fn movement(dir: Direction) -> ActionId {
        ActionId(1 + Direction::ALL.iter().position(|&d| d == dir).unwrap())
    }

    pub fn decode(self) -> Action {
        match self.0 {
            0 => Action::NoOp,
            1..=4 => Action::Move(Direction::ALL[self.0 - 1]),
            k => Action::Attack(k - NUM_NON_ATTACK_ACTIONS),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionMask {
    pub available: Vec<bool>,
}

impl ActionMask {
    pub fn none(n: usize) -> Self {
        Self { available: vec![false; n] }
    }

    pub fn no_op_only(n: usize) -> Self {
        let mut m = Self::none(n);
        m.available[0] = true;
        m
    }

    pub fn len(&self) -> usize {
        self.available.len()
    }

    pub fn is_empty(&self) -> bool {
        self.available.is_empty()
    }

    pub fn is_available(&self, a: ActionId) -> bool {
        self.available.get(a.0).copied().unwrap_or(false)
    }

    pub fn available_ids(&self) -> impl Iterator<Item = ActionId> + '_ {
        self.available.iter().enumerate().filter(|(_, &ok)| ok).map(|(i, _)| ActionId(i))
    }

    pub fn count(&self) -> usize {
        self.available.iter().filter(|&&ok| ok).count()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.available.iter().map(|&b| b as u8 as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub features: Vec<f64>,
    pub mask: ActionMask,
}

/// Actions of every agent of both teams, each expressed in its own team's frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointAction {
    pub plus: Vec<ActionId>,
    pub minus: Vec<ActionId>,
}

impl JointAction {
    pub fn new(plus: Vec<ActionId>, minus: Vec<ActionId>) -> Self {
        Self { plus, minus }
    }

    pub fn no_ops(team_size: usize) -> Self {
        Self { plus: vec![ActionId::NO_OP; team_size], minus: vec![ActionId::NO_OP; team_size] }
    }

    pub fn team(&self, team: TeamId) -> &[ActionId] {
        match team {
            TeamId::Plus => &self.plus,
            TeamId::Minus => &self.minus,
        }
    }

    pub fn from_teams(team: TeamId, mine: Vec<ActionId>, theirs: Vec<ActionId>) -> Self {
        match team {
            TeamId::Plus => Self::new(mine, theirs),
            TeamId::Minus => Self::new(theirs, mine),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Winner {
    Plus,
    Minus,
    Draw,
    Ongoing,
}

impl Winner {
    pub fn team(team: TeamId) -> Winner {
        match team {
            TeamId::Plus => Winner::Plus,
            TeamId::Minus => Winner::Minus,
        }
    }

    /// Elo score of `team`: 1 win, 0.5 draw, 0 loss. `None` while ongoing.
    pub fn score_for(self, team: TeamId) -> Option<f64> {
        match self {
            Winner::Ongoing => None,
            Winner::Draw => Some(0.5),
            w if w == Winner::team(team) => Some(1.0),
            _ => Some(0.0),
        }
    }

    pub fn swapped(self) -> Winner {
        match self {
            Winner::Plus => Winner::Minus,
            Winner::Minus => Winner::Plus,
            w => w,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    /// `[r_plus, r_minus]`, shared by every agent of the team.
    pub rewards: [f64; 2],
    pub terminal: bool,
    pub winner: Winner,
}

impl StepOutcome {
    pub fn reward(&self, team: TeamId) -> f64 {
        self.rewards[team.index()]
    }
}

/// `Σ_k γ^k r_k`.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    assert!((0.0..1.0).contains(&gamma), "gamma must lie in [0, 1)");
    rewards.iter().rev().fold(0.0, |acc, r| r + gamma * acc)
}
