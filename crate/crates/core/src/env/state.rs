use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::map::EnvSpec;
use super::units::UnitRecord;
use crate::error::{Error, Result};
use crate::game::{Action, ActionId, ActionMask, AgentId, Direction, JointAction, StepOutcome, TeamId, Winner};

/// Full environment state. Plus units occupy slots `0..n`, Minus units `n..2n`.
#[derive(Debug, Clone)]
pub struct GameState {
    pub spec: Arc<EnvSpec>,
    pub units: Vec<UnitRecord>,
    pub t: u32,
    pub seed: u64,
    /// Per-episode random stream. The dynamics are currently deterministic, so
    /// only episode setup draws from it.
    pub rng: ChaCha8Rng,
}

impl PartialEq for GameState {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.units == other.units && self.t == other.t
    }
}

fn quantised_jitter(rng: &mut ChaCha8Rng, max: f64) -> f64 {
    let steps = (max * 4.0).floor() as i64;
    if steps == 0 {
        return 0.0;
    }
    rng.gen_range(-steps..=steps) as f64 * 0.25
}

impl GameState {
    /// Places both teams in their mirrored start zones at full health.
    /// Minus positions are the exact point reflections of Plus positions.
    pub fn new_episode(spec: Arc<EnvSpec>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let map = &spec.map;
        let (cx, cy) = map.plus_zone.centre();
        let mut plus = Vec::with_capacity(map.team_size());
        for (&kind, &(ox, oy)) in map.composition.iter().zip(&map.formation) {
            let jx = quantised_jitter(&mut rng, spec.config.start_jitter);
            let jy = quantised_jitter(&mut rng, spec.config.start_jitter);
            plus.push(UnitRecord::fresh(kind, TeamId::Plus, (cx + ox + jx, cy + oy + jy)));
        }
        let minus: Vec<UnitRecord> = plus
            .iter()
            .map(|u| UnitRecord::fresh(u.kind, TeamId::Minus, map.reflect(u.position)))
            .collect();
        let mut units = plus;
        units.extend(minus);
        Self { spec, units, t: 0, seed, rng }
    }

    pub fn team_size(&self) -> usize {
        self.spec.map.team_size()
    }

    pub fn num_actions(&self) -> usize {
        self.spec.map.num_actions()
    }

    pub fn slot(&self, agent: AgentId) -> Result<usize> {
        let n = self.team_size();
        if agent.index >= n {
            return Err(Error::InvalidAgent(format!("{agent} on a {n}-unit team")));
        }
        Ok(agent.team.index() * n + agent.index)
    }

    pub fn unit(&self, agent: AgentId) -> Result<&UnitRecord> {
        Ok(&self.units[self.slot(agent)?])
    }

    pub fn team_units(&self, team: TeamId) -> &[UnitRecord] {
        let n = self.team_size();
        &self.units[team.index() * n..(team.index() + 1) * n]
    }

    pub fn winner(&self) -> Winner {
        winner(self)
    }

    pub fn is_terminal(&self) -> bool {
        self.winner() != Winner::Ongoing
    }

    /// World displacement of `dir` issued by a unit of `team`.
    pub fn world_delta(&self, team: TeamId, dir: Direction) -> (f64, f64) {
        let (dx, dy) = dir.delta();
        let s = self.spec.config.move_speed;
        match team {
            TeamId::Plus => (dx * s, dy * s),
            TeamId::Minus => (-dx * s, -dy * s),
        }
    }

    pub fn action_mask(&self, agent: AgentId) -> Result<ActionMask> {
        let slot = self.slot(agent)?;
        let a = self.num_actions();
        let u = &self.units[slot];
        if !u.alive {
            return Ok(ActionMask::no_op_only(a));
        }
        let mut mask = ActionMask::none(a);
        mask.available[0] = true;
        for (i, &dir) in Direction::ALL.iter().enumerate() {
            let (dx, dy) = self.world_delta(agent.team, dir);
            mask.available[1 + i] = self.spec.map.in_bounds((u.position.0 + dx, u.position.1 + dy));
        }
        let range = self.spec.shoot_range(u.kind);
        for (k, e) in self.team_units(agent.team.opponent()).iter().enumerate() {
            mask.available[ActionId::attack(k).0] = e.alive && u.distance_to(e) <= range;
        }
        Ok(mask)
    }

    /// Advances one simultaneous step.
    ///
    /// Attacks resolve against start-of-step positions, so every attack that
    /// passed the mask lands; hits on one target apply in attacker slot order.
    /// Moves apply afterwards, then shields regenerate.
    pub fn step(&self, joint: &JointAction) -> Result<(GameState, StepOutcome)> {
        if self.is_terminal() {
            return Err(Error::TerminalState);
        }
        let n = self.team_size();
        for team in TeamId::BOTH {
            let actions = joint.team(team);
            if actions.len() != n {
                return Err(Error::InvalidAgent(format!("team {team} sent {} actions for {n} units", actions.len())));
            }
            for (i, &a) in actions.iter().enumerate() {
                let agent = AgentId::new(team, i);
                if !self.action_mask(agent)?.is_available(a) {
                    return Err(Error::MaskedAction { agent: agent.to_string(), action: a.0 });
                }
            }
        }

        let mut next = self.clone();
        next.t = self.t + 1;

        for target_team in TeamId::BOTH {
            let attacker_team = target_team.opponent();
            for (i, &a) in joint.team(attacker_team).iter().enumerate() {
                if let Action::Attack(k) = a.decode() {
                    let attacker = &self.units[attacker_team.index() * n + i];
                    let tslot = target_team.index() * n + k;
                    let hit = resolve_attack(&self.spec, attacker, &next.units[tslot], next.t)?;
                    next.units[tslot] = hit;
                }
            }
        }

        for team in TeamId::BOTH {
            for (i, &a) in joint.team(team).iter().enumerate() {
                let slot = team.index() * n + i;
                if let Action::Move(dir) = a.decode() {
                    let (dx, dy) = self.world_delta(team, dir);
                    let p = &mut next.units[slot].position;
                    *p = (p.0 + dx, p.1 + dy);
                }
                next.units[slot].last_action = a;
            }
        }

        for u in next.units.iter_mut() {
            if u.alive && u.hp <= 0.0 {
                u.hp = 0.0;
                u.shield = 0.0;
                u.alive = false;
            }
        }
        regen_shields(&mut next);

        let rewards = compute_rewards(self, &next);
        let w = winner(&next);
        Ok((next, StepOutcome { rewards, terminal: w != Winner::Ongoing, winner: w }))
    }

    /// Mirror image: positions reflected through the centre, teams swapped.
    pub fn swapped(&self) -> GameState {
        let n = self.team_size();
        let mut units = Vec::with_capacity(2 * n);
        for u in self.units[n..].iter().chain(&self.units[..n]) {
            let mut m = u.clone();
            m.team = u.team.opponent();
            m.position = self.spec.map.reflect(u.position);
            units.push(m);
        }
        Self { units, ..self.clone() }
    }

    /// Short hex digest of the dynamic state, used by episode traces.
    pub fn state_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.t.to_le_bytes());
        for u in &self.units {
            h.update([u.kind as u8, u.team.index() as u8, u.alive as u8]);
            for v in [u.position.0, u.position.1, u.hp, u.shield] {
                h.update(v.to_bits().to_le_bytes());
            }
            h.update((u.last_action.0 as u32).to_le_bytes());
            h.update(u.last_damaged_at.map_or(u32::MAX, |t| t).to_le_bytes());
        }
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Applies one attack: shield first, with the excess of the hit carried to
/// hit points at the target-specific HP rate, scaled by the fraction of the
/// hit the shield did not absorb.
pub fn resolve_attack(spec: &EnvSpec, attacker: &UnitRecord, target: &UnitRecord, now: u32) -> Result<UnitRecord> {
    let range = spec.shoot_range(attacker.kind);
    let distance = attacker.distance_to(target);
    if !attacker.alive || !target.alive || distance > range {
        return Err(Error::OutOfRange { distance, range });
    }
    let shield_hit = attacker.stats().damage_to_shield;
    let hp_hit = attacker.kind.damage_to_hp(target.kind);
    let mut out = target.clone();
    if out.shield >= shield_hit {
        out.shield -= shield_hit;
    } else {
        let leftover = (shield_hit - out.shield) / shield_hit;
        out.shield = 0.0;
        out.hp = (out.hp - hp_hit * leftover).max(0.0);
    }
    out.last_damaged_at = Some(now);
    Ok(out)
}

/// Regenerates shields of living units left undamaged for `regen_delay` steps.
pub fn regen_shields(state: &mut GameState) {
    let cfg = state.spec.config;
    let now = state.t;
    for u in state.units.iter_mut().filter(|u| u.alive) {
        let max = u.stats().max_shield;
        if max <= 0.0 {
            continue;
        }
        let idle = u.last_damaged_at.is_none_or(|d| now.saturating_sub(d) >= cfg.regen_delay);
        if idle {
            u.shield = (u.shield + cfg.regen_rate).min(max);
        }
    }
}

/// Team rewards `[plus, minus]` for the transition `before -> after`.
/// The win bonus goes only to a team left standing, so mutual elimination
/// pays damage and kills but no bonus.
pub fn compute_rewards(before: &GameState, after: &GameState) -> [f64; 2] {
    let r = after.spec.config.reward;
    let norm = after.spec.reward_normaliser();
    let mut out = [0.0; 2];
    for team in TeamId::BOTH {
        let victims = team.opponent();
        let (pre, post) = (before.team_units(victims), after.team_units(victims));
        let mut damage = 0.0;
        let mut kills = 0.0;
        for (a, b) in pre.iter().zip(post) {
            damage += (a.health() - b.health()).max(0.0);
            if a.alive && !b.alive {
                kills += 1.0;
            }
        }
        let won = post.iter().all(|u| !u.alive) && after.team_units(team).iter().any(|u| u.alive);
        let raw = r.damage_weight * damage + r.kill_bonus * kills + if won { r.win_bonus } else { 0.0 };
        out[team.index()] = raw / norm;
    }
    out
}

/// Elimination wins immediately (mutual elimination is a draw); at the step
/// limit the larger remaining hit-point total wins, shields excluded.
pub fn winner(state: &GameState) -> Winner {
    let plus_alive = state.team_units(TeamId::Plus).iter().any(|u| u.alive);
    let minus_alive = state.team_units(TeamId::Minus).iter().any(|u| u.alive);
    match (plus_alive, minus_alive) {
        (false, false) => return Winner::Draw,
        (true, false) => return Winner::Plus,
        (false, true) => return Winner::Minus,
        (true, true) => {}
    }
    if state.t < state.spec.map.episode_limit {
        return Winner::Ongoing;
    }
    let hp = |team| state.team_units(team).iter().map(|u| u.hp).sum::<f64>();
    let (p, m) = (hp(TeamId::Plus), hp(TeamId::Minus));
    if p > m {
        Winner::Plus
    } else if m > p {
        Winner::Minus
    } else {
        Winner::Draw
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvConfig, MapName, UnitKind};

    fn spec(map: MapName) -> Arc<EnvSpec> {
        Arc::new(EnvSpec::new(map, EnvConfig::default()))
    }

    fn unit(kind: UnitKind, team: TeamId, pos: (f64, f64)) -> UnitRecord {
        UnitRecord::fresh(kind, team, pos)
    }

    #[test]
    fn fresh_3m_has_six_marines() {
        let s = GameState::new_episode(spec(MapName::ThreeM), 11);
        assert_eq!(s.units.len(), 6);
        assert!(s.units.iter().all(|u| u.kind == UnitKind::Marine && u.hp == 45.0 && u.shield == 0.0));
        assert_eq!(s.t, 0);
    }

    #[test]
    fn fresh_3s5z_composition() {
        let s = GameState::new_episode(spec(MapName::ThreeS5Z), 2);
        for team in TeamId::BOTH {
            let units = s.team_units(team);
            let stalkers: Vec<_> = units.iter().filter(|u| u.kind == UnitKind::Stalker).collect();
            let zealots: Vec<_> = units.iter().filter(|u| u.kind == UnitKind::Zealot).collect();
            assert_eq!(stalkers.len(), 3);
            assert_eq!(zealots.len(), 5);
            assert!(stalkers.iter().all(|u| u.hp == 80.0 && u.shield == 80.0));
            assert!(zealots.iter().all(|u| u.hp == 100.0 && u.shield == 50.0));
        }
    }

    #[test]
    fn same_seed_same_state() {
        let a = GameState::new_episode(spec(MapName::ThreeS5Z), 99);
        let b = GameState::new_episode(spec(MapName::ThreeS5Z), 99);
        assert_eq!(a, b);
        assert_eq!(a.state_hash(), b.state_hash());
    }

    #[test]
    fn opponents_start_out_of_sight() {
        for map in [MapName::ThreeM, MapName::ThreeS5Z, MapName::TwoM] {
            for seed in 0..50 {
                let s = GameState::new_episode(spec(map), seed);
                let n = s.team_size();
                for p in &s.units[..n] {
                    for m in &s.units[n..] {
                        assert!(p.distance_to(m) >= s.spec.config.sight_range, "{map} seed {seed}");
                    }
                }
            }
        }
    }

    #[test]
    fn damage_examples() {
        let sp = spec(MapName::ThreeS5Z);
        let a = unit(UnitKind::Marine, TeamId::Plus, (0.0, 0.0));
        let t = unit(UnitKind::Marine, TeamId::Minus, (3.0, 0.0));
        assert_eq!(resolve_attack(&sp, &a, &t, 1).unwrap().hp, 39.0);

        let a = unit(UnitKind::Stalker, TeamId::Plus, (0.0, 0.0));
        let t = unit(UnitKind::Stalker, TeamId::Minus, (3.0, 0.0));
        let hit = resolve_attack(&sp, &a, &t, 4).unwrap();
        assert_eq!((hit.shield, hit.hp, hit.last_damaged_at), (67.0, 80.0, Some(4)));

        let a = unit(UnitKind::Zealot, TeamId::Plus, (0.0, 0.0));
        let mut t = unit(UnitKind::Zealot, TeamId::Minus, (1.0, 0.0));
        t.shield = 0.0;
        assert_eq!(resolve_attack(&sp, &a, &t, 1).unwrap().hp, 86.0);
    }

    #[test]
    fn shield_overflow_is_prorated() {
        let sp = spec(MapName::ThreeS5Z);
        let a = unit(UnitKind::Stalker, TeamId::Plus, (0.0, 0.0));
        let mut t = unit(UnitKind::Zealot, TeamId::Minus, (2.0, 0.0));
        t.shield = 6.5;
        let hit = resolve_attack(&sp, &a, &t, 1).unwrap();
        // half the 13-point hit passes the shield: 12 * 0.5 HP
        assert_eq!((hit.shield, hit.hp), (0.0, 94.0));
    }

    #[test]
    fn out_of_range_attack_errors() {
        let sp = spec(MapName::ThreeS5Z);
        let a = unit(UnitKind::Zealot, TeamId::Plus, (0.0, 0.0));
        let t = unit(UnitKind::Stalker, TeamId::Minus, (1.5, 0.0));
        assert!(matches!(resolve_attack(&sp, &a, &t, 1), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn no_op_step_is_quiet() {
        let s = GameState::new_episode(spec(MapName::ThreeM), 1);
        let (next, out) = s.step(&JointAction::no_ops(3)).unwrap();
        assert_eq!(out.rewards, [0.0, 0.0]);
        assert_eq!(out.winner, Winner::Ongoing);
        assert!(!out.terminal);
        assert_eq!(next.t, 1);
    }

    #[test]
    fn masked_and_terminal_errors() {
        let s = GameState::new_episode(spec(MapName::ThreeM), 1);
        let mut j = JointAction::no_ops(3);
        j.plus[0] = ActionId::attack(0);
        assert!(matches!(s.step(&j), Err(Error::MaskedAction { .. })));

        let mut dead = s.clone();
        for u in dead.units[3..].iter_mut() {
            u.alive = false;
            u.hp = 0.0;
        }
        assert!(matches!(dead.step(&JointAction::no_ops(3)), Err(Error::TerminalState)));
    }

    fn duel_state(map: MapName) -> GameState {
        let mut s = GameState::new_episode(spec(map), 0);
        let n = s.team_size();
        for i in 0..n {
            s.units[i].position = (5.0, 5.0);
            s.units[n + i].position = (8.0, 5.0);
        }
        s
    }

    #[test]
    fn last_kill_wins_and_pays_bonuses() {
        let mut s = duel_state(MapName::TwoM);
        s.units[2].hp = 6.0;
        s.units[3].alive = false;
        s.units[3].hp = 0.0;
        let j = JointAction::new(vec![ActionId::attack(0), ActionId::NO_OP], vec![ActionId::NO_OP; 2]);
        let (_, out) = s.step(&j).unwrap();
        assert!(out.terminal);
        assert_eq!(out.winner, Winner::Plus);
        let r = s.spec.config.reward;
        let expected = (6.0 + r.kill_bonus + r.win_bonus) / s.spec.reward_normaliser();
        assert_eq!(out.rewards, [expected, 0.0]);
    }

    #[test]
    fn mutual_elimination_pays_no_win_bonus() {
        let mut s = duel_state(MapName::TwoM);
        for u in [1, 3] {
            s.units[u].alive = false;
            s.units[u].hp = 0.0;
        }
        s.units[0].hp = 6.0;
        s.units[2].hp = 6.0;
        let j = JointAction::new(vec![ActionId::attack(0), ActionId::NO_OP], vec![ActionId::attack(0), ActionId::NO_OP]);
        let (_, out) = s.step(&j).unwrap();
        assert_eq!(out.winner, Winner::Draw);
        let r = s.spec.config.reward;
        let expected = (6.0 + r.kill_bonus) / s.spec.reward_normaliser();
        assert_eq!(out.rewards, [expected, expected]);
    }

    #[test]
    fn single_hit_reward_with_unit_normaliser() {
        let mut cfg = EnvConfig::default();
        cfg.reward.normaliser = Some(1.0);
        let sp = Arc::new(EnvSpec::new(MapName::ThreeM, cfg));
        let mut s = GameState::new_episode(sp, 0);
        for i in 0..3 {
            s.units[i].position = (5.0, 5.0);
            s.units[3 + i].position = (8.0, 5.0);
        }
        let j = JointAction::new(vec![ActionId::attack(1), ActionId::NO_OP, ActionId::NO_OP], vec![ActionId::NO_OP; 3]);
        let (_, out) = s.step(&j).unwrap();
        assert_eq!(out.rewards, [6.0, 0.0]);
    }

    #[test]
    fn simultaneous_kills_draw() {
        let mut s = duel_state(MapName::TwoM);
        for i in [1, 3] {
            s.units[i].alive = false;
            s.units[i].hp = 0.0;
        }
        s.units[0].hp = 3.0;
        s.units[2].hp = 3.0;
        let j = JointAction::new(
            vec![ActionId::attack(0), ActionId::NO_OP],
            vec![ActionId::attack(0), ActionId::NO_OP],
        );
        let (next, out) = s.step(&j).unwrap();
        assert_eq!(out.winner, Winner::Draw);
        assert!(next.units.iter().all(|u| !u.alive));
    }

    #[test]
    fn timeout_compares_hit_points() {
        let mut s = duel_state(MapName::TwoM);
        s.t = s.spec.map.episode_limit;
        s.units[0].hp = 5.0;
        s.units[1].hp = 45.0;
        s.units[2].hp = 4.0;
        s.units[3].hp = 45.0;
        assert_eq!(s.winner(), Winner::Plus);
        s.units[2].hp = 5.0;
        assert_eq!(s.winner(), Winner::Draw);
        s.units[2].hp = 6.0;
        assert_eq!(s.winner(), Winner::Minus);
    }

    #[test]
    fn timeout_ignores_shields() {
        let mut s = duel_state(MapName::ThreeS5Z);
        s.t = s.spec.map.episode_limit;
        for u in s.units[..8].iter_mut() {
            u.shield = 0.0;
        }
        assert_eq!(s.winner(), Winner::Draw);
    }

    #[test]
    fn shield_regeneration_schedule() {
        let sp = spec(MapName::ThreeS5Z);
        let mut s = GameState::new_episode(sp, 0);
        s.units[0].shield = 67.0;
        s.units[0].last_damaged_at = Some(0);
        let mut shields = Vec::new();
        for _ in 0..11 {
            let (next, _) = s.step(&JointAction::no_ops(8)).unwrap();
            s = next;
            shields.push(s.units[0].shield);
        }
        // undamaged since t=0: regen starts at t=10
        assert_eq!(&shields[..9], &[67.0; 9]);
        assert_eq!(shields[9], 69.0);
        assert_eq!(shields[10], 71.0);
    }

    #[test]
    fn regen_respects_cap_and_recent_damage() {
        let mut s = GameState::new_episode(spec(MapName::ThreeS5Z), 0);
        s.t = 50;
        s.units[0].last_damaged_at = Some(50);
        s.units[0].shield = 10.0;
        regen_shields(&mut s);
        assert_eq!(s.units[0].shield, 10.0);
        assert_eq!(s.units[1].shield, 80.0);
    }

    #[test]
    fn moves_blocked_at_walls() {
        let mut s = GameState::new_episode(spec(MapName::ThreeM), 0);
        s.units[0].position = (5.0, s.spec.map.height - 0.5);
        let mask = s.action_mask(AgentId::new(TeamId::Plus, 0)).unwrap();
        assert!(!mask.is_available(ActionId::movement(Direction::North)));
        assert!(mask.is_available(ActionId::movement(Direction::South)));
        // Minus north is world south
        s.units[3].position = (5.0, 0.5);
        let mask = s.action_mask(AgentId::new(TeamId::Minus, 0)).unwrap();
        assert!(!mask.is_available(ActionId::movement(Direction::North)));
    }

    #[test]
    fn dead_agents_only_no_op() {
        let mut s = GameState::new_episode(spec(MapName::ThreeM), 0);
        s.units[1].alive = false;
        s.units[1].hp = 0.0;
        let mask = s.action_mask(AgentId::new(TeamId::Plus, 1)).unwrap();
        assert_eq!(mask.count(), 1);
        assert!(mask.is_available(ActionId::NO_OP));
    }

    #[test]
    fn invalid_agent_rejected() {
        let s = GameState::new_episode(spec(MapName::ThreeM), 0);
        assert!(matches!(s.action_mask(AgentId::new(TeamId::Plus, 3)), Err(Error::InvalidAgent(_))));
    }
}
