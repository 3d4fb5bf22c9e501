//! Line-delimited JSON episode traces and a text renderer for replaying them.
//!
//! The first line is a [`TraceHeader`]; every following line is a
//! [`TraceStep`]. Because stepping is deterministic, the header plus the
//! joint actions reproduce the episode; the recorded hashes verify it.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::map::{EnvConfig, EnvSpec, MapName};
use super::state::GameState;
use crate::error::{Error, Result};
use crate::game::{ActionId, JointAction, TeamId, Winner};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub map: MapName,
    pub seed: u64,
    pub config: EnvConfig,
    pub initial_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub t: u32,
    pub hash: String,
    pub plus: Vec<usize>,
    pub minus: Vec<usize>,
    pub rewards: [f64; 2],
    pub winner: Winner,
}

pub struct TraceWriter<W: Write> {
    out: W,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(mut out: W, initial: &GameState) -> Result<Self> {
        let header = TraceHeader {
            map: initial.spec.map.name,
            seed: initial.seed,
            config: initial.spec.config,
            initial_hash: initial.state_hash(),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        Ok(Self { out })
    }

    pub fn record(&mut self, joint: &JointAction, next: &GameState, rewards: [f64; 2], winner: Winner) -> Result<()> {
        let step = TraceStep {
            t: next.t,
            hash: next.state_hash(),
            plus: joint.plus.iter().map(|a| a.0).collect(),
            minus: joint.minus.iter().map(|a| a.0).collect(),
            rewards,
            winner,
        };
        serde_json::to_writer(&mut self.out, &step)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Re-simulates a trace, checking every recorded hash, and returns the states.
pub fn replay_trace(input: impl BufRead) -> Result<Vec<GameState>> {
    let mut lines = input.lines();
    let header_line = lines.next().ok_or_else(|| Error::MissingData("empty trace".into()))??;
    let header: TraceHeader = serde_json::from_str(&header_line)?;
    let spec = Arc::new(EnvSpec::new(header.map, header.config));
    let mut state = GameState::new_episode(spec, header.seed);
    if state.state_hash() != header.initial_hash {
        return Err(Error::MissingData("initial state hash mismatch".into()));
    }
    let mut states = vec![state.clone()];
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let step: TraceStep = serde_json::from_str(&line)?;
        let joint = JointAction::new(
            step.plus.iter().map(|&a| ActionId(a)).collect(),
            step.minus.iter().map(|&a| ActionId(a)).collect(),
        );
        let (next, _) = state.step(&joint)?;
        if next.state_hash() != step.hash {
            return Err(Error::MissingData(format!("state hash mismatch at t={}", step.t)));
        }
        state = next;
        states.push(state.clone());
    }
    Ok(states)
}

/// Text frame: one character cell per distance unit, Plus in capitals,
/// Minus in lower case, followed by a health table.
pub fn render_frame(state: &GameState) -> String {
    let map = &state.spec.map;
    let (w, h) = (map.width.ceil() as usize + 1, map.height.ceil() as usize + 1);
    let mut grid = vec![vec!['.'; w]; h];
    for u in state.units.iter().filter(|u| u.alive) {
        let (x, y) = (u.position.0.round() as usize, u.position.1.round() as usize);
        let c = u.kind.symbol();
        let c = if u.team == TeamId::Plus { c } else { c.to_ascii_lowercase() };
        grid[h - 1 - y.min(h - 1)][x.min(w - 1)] = c;
    }
    let mut out = String::new();
    let _ = writeln!(out, "t={} winner={:?}", state.t, state.winner());
    for row in grid {
        out.extend(row);
        out.push('\n');
    }
    for team in TeamId::BOTH {
        let cells: Vec<String> = state
            .team_units(team)
            .iter()
            .map(|u| format!("{}:{:.0}/{:.0}", u.kind.symbol(), u.hp, u.shield))
            .collect();
        let _ = writeln!(out, "{team}: {}", cells.join(" "));
    }
    out
}
