//! WebAssembly bindings for a static demo page.
//!
//! Three operations are exposed: stepping a scripted arena episode, the Elo
//! expected-score and update rules, and a heat map of a randomly initialised
//! two-agent mixer over a grid of agent utilities.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use teamduel::env::trace::render_frame;
use teamduel::env::{EnvConfig, EnvSpec, GameState, MapName};
use teamduel::game::{JointAction, TeamId, Winner};
use teamduel::heuristic::{heuristic_team_actions, HeuristicState};
use teamduel::learn::nets::Mixer;
use teamduel::nn::{ParamStore, Tensor};
use teamduel::rating::{expected_score, update_rating};
use wasm_bindgen::prelude::*;

// Errors cross the boundary as strings so the bindings also run natively.
fn js_err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// A scripted-versus-scripted episode advanced one step at a time.
#[wasm_bindgen]
pub struct Arena {
    state: GameState,
    plus: HeuristicState,
    minus: HeuristicState,
}

#[wasm_bindgen]
impl Arena {
    #[wasm_bindgen(constructor)]
    pub fn new(map: &str, seed: u64) -> Result<Arena, String> {
        let map = match map {
            "3m" => MapName::ThreeM,
            "3s5z" => MapName::ThreeS5Z,
            "2m" => MapName::TwoM,
            other => return Err(format!("unknown map {other}")),
        };
        let state = GameState::new_episode(Arc::new(EnvSpec::new(map, EnvConfig::default())), seed);
        let plus = HeuristicState::new(&state, TeamId::Plus);
        let minus = HeuristicState::new(&state, TeamId::Minus);
        Ok(Arena { state, plus, minus })
    }

    /// Advances one step; returns false once the episode has ended.
    pub fn step(&mut self) -> Result<bool, String> {
        if self.state.is_terminal() {
            return Ok(false);
        }
        let plus = heuristic_team_actions(&self.state, TeamId::Plus, &mut self.plus).map_err(js_err)?;
        let minus = heuristic_team_actions(&self.state, TeamId::Minus, &mut self.minus).map_err(js_err)?;
        let (next, _) = self.state.step(&JointAction::new(plus, minus)).map_err(js_err)?;
        self.state = next;
        Ok(!self.state.is_terminal())
    }

    pub fn frame(&self) -> String {
        render_frame(&self.state)
    }

    pub fn time(&self) -> u32 {
        self.state.t
    }

    /// `plus`, `minus`, `draw` or `ongoing`.
    pub fn winner(&self) -> String {
        match self.state.winner() {
            Winner::Plus => "plus",
            Winner::Minus => "minus",
            Winner::Draw => "draw",
            Winner::Ongoing => "ongoing",
        }
        .to_string()
    }

    /// Flat `[x, y, team, alive, health_fraction]` per unit, for drawing.
    pub fn units(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.state.units.len() * 5);
        for u in &self.state.units {
            let s = u.stats();
            out.extend([
                u.position.0,
                u.position.1,
                u.team.index() as f64,
                if u.alive { 1.0 } else { 0.0 },
                (u.hp + u.shield) / (s.max_hp + s.max_shield),
            ]);
        }
        out
    }

    pub fn width(&self) -> f64 {
        self.state.spec.map.width
    }

    pub fn height(&self) -> f64 {
        self.state.spec.map.height
    }
}

/// Expected scores `[E_a, E_b]` of two ratings.
#[wasm_bindgen]
pub fn elo_expected(ra: f64, rb: f64, scale: f64) -> Vec<f64> {
    let (ea, eb) = expected_score(ra, rb, scale);
    vec![ea, eb]
}

/// Ratings after one game; `score` is 1, 0.5 or 0 from A's side.
#[wasm_bindgen]
pub fn elo_update(ra: f64, rb: f64, score: f64, k: f64, scale: f64) -> Vec<f64> {
    let (ea, eb) = expected_score(ra, rb, scale);
    vec![update_rating(ra, ea, score, k), update_rating(rb, eb, 1.0 - score, k)]
}

/// Mixer output on a `size x size` grid of utilities `(q1, q2)` spanning
/// `[-range, range]`, row-major with `q2` increasing down the rows.
#[wasm_bindgen]
pub fn mixer_heatmap(seed: u64, size: usize, range: f64) -> Result<Vec<f64>, String> {
    if size < 2 {
        return Err("grid size must be at least 2".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let state_dim = 4;
    let mixer = Mixer::new(&mut store, "mixer", 2, state_dim, 8, 0.5, &mut rng);
    let n = size * size;
    let step = 2.0 * range / (size - 1) as f64;
    let mut qs = Tensor::zeros(n, 2);
    for r in 0..size {
        for c in 0..size {
            let row = qs.row_mut(r * size + c);
            row[0] = -range + c as f64 * step;
            row[1] = -range + r as f64 * step;
        }
    }
    let states = Tensor::from_vec(n, state_dim, (0..n).flat_map(|_| [0.5, -0.25, 1.0, 0.0]).collect()).map_err(js_err)?;
    let y = mixer.infer(&store, &qs, &states).map_err(js_err)?;
    Ok((0..n).map(|i| y.row(i)[0]).collect())
}
