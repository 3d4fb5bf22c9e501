use serde::{Deserialize, Serialize};

use crate::game::{ActionId, TeamId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitKind {
    Marine,
    Stalker,
    Zealot,
}

impl UnitKind {
    pub const ALL: [UnitKind; 3] = [UnitKind::Marine, UnitKind::Stalker, UnitKind::Zealot];

    pub fn stats(self) -> UnitStats {
        match self {
            UnitKind::Marine => UnitStats { max_hp: 45.0, max_shield: 0.0, melee: false, damage_to_shield: 6.0 },
            UnitKind::Stalker => UnitStats { max_hp: 80.0, max_shield: 80.0, melee: false, damage_to_shield: 13.0 },
            UnitKind::Zealot => UnitStats { max_hp: 100.0, max_shield: 50.0, melee: true, damage_to_shield: 16.0 },
        }
    }

    /// Hit-point damage dealt by one attack of `self` on a `target` unit.
    ///
    /// Marines deal 6 to anything. Stalkers deal 12 to zealots and 17 to
    /// stalkers; zealots deal 14 to both. Stalker and zealot attacks on
    /// marines never occur on the shipped maps and reuse the shield value.
    pub fn damage_to_hp(self, target: UnitKind) -> f64 {
        match (self, target) {
            (UnitKind::Marine, _) => 6.0,
            (UnitKind::Stalker, UnitKind::Zealot) => 12.0,
            (UnitKind::Stalker, UnitKind::Stalker) => 17.0,
            (UnitKind::Stalker, UnitKind::Marine) => 13.0,
            (UnitKind::Zealot, _) => 14.0,
        }
    }

    pub fn symbol(self) -> char {
        match self {
            UnitKind::Marine => 'M',
            UnitKind::Stalker => 'S',
            UnitKind::Zealot => 'Z',
        }
    }
}

/// Fixed per-kind statistics. Ranges and speed live in [`super::EnvConfig`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitStats {
    pub max_hp: f64,
    pub max_shield: f64,
    pub melee: bool,
    pub damage_to_shield: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitRecord {
    pub kind: UnitKind,
    pub team: TeamId,
    /// World coordinates.
    pub position: (f64, f64),
    pub hp: f64,
    pub shield: f64,
    /// Last action in the owning team's frame.
    pub last_action: ActionId,
    pub last_damaged_at: Option<u32>,
    pub alive: bool,
}

impl UnitRecord {
    pub fn fresh(kind: UnitKind, team: TeamId, position: (f64, f64)) -> Self {
        let s = kind.stats();
        Self {
            kind,
            team,
            position,
            hp: s.max_hp,
            shield: s.max_shield,
            last_action: ActionId::NO_OP,
            last_damaged_at: None,
            alive: true,
        }
    }

    pub fn stats(&self) -> UnitStats {
        self.kind.stats()
    }

    pub fn distance_to(&self, other: &UnitRecord) -> f64 {
        let dx = self.position.0 - other.position.0;
        let dy = self.position.1 - other.position.1;
        (dx * dx + dy * dy).sqrt()
    }

    pub fn health(&self) -> f64 {
        self.hp + self.shield
    }
}
