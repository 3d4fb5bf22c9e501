//! Elo ratings, round-robin tournaments and checkpoint win-rate matchups.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, EnvSpec, MapName};
use crate::error::{Error, Result};
use crate::game::{TeamId, Winner};
use crate::learn::{PolicySnapshot, TeamLearner};
use crate::play::{derive_seed, parallel_map, play_episode, Controller};
use crate::train::RunManifest;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EloConfig {
    pub initial_rating: f64,
    /// Largest possible single-game change.
    pub k_factor: f64,
    /// Rating gap at which the stronger side is ten times as likely to win.
    pub scale: f64,
}

impl Default for EloConfig {
    fn default() -> Self {
        Self { initial_rating: 1000.0, k_factor: 10.0, scale: 400.0 }
    }
}

/// Expected scores `(E_A, E_B)`.
pub fn expected_score(ra: f64, rb: f64, scale: f64) -> (f64, f64) {
    let ea = 1.0 / (1.0 + 10f64.powf((rb - ra) / scale));
    let eb = 1.0 / (1.0 + 10f64.powf((ra - rb) / scale));
    (ea, eb)
}

/// `R + cst (S - E)`.
pub fn update_rating(rating: f64, expected: f64, score: f64, cst: f64) -> f64 {
    rating + cst * (score - expected)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EloEntry {
    pub entrant: String,
    pub rating: f64,
    pub games: u32,
    pub wins: u32,
    pub draws: u32,
    pub losses: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EloTable {
    pub config: EloConfig,
    pub entries: Vec<EloEntry>,
}

impl EloTable {
    pub fn new(names: impl IntoIterator<Item = String>, config: EloConfig) -> Self {
        let entries = names
            .into_iter()
            .map(|entrant| EloEntry { entrant, rating: config.initial_rating, games: 0, wins: 0, draws: 0, losses: 0 })
            .collect();
        Self { config, entries }
    }

    /// Records a game between `a` and `b` where `a` scored `score_a`.
    pub fn record(&mut self, a: usize, b: usize, score_a: f64) {
        let (ra, rb) = (self.entries[a].rating, self.entries[b].rating);
        let (ea, eb) = expected_score(ra, rb, self.config.scale);
        let k = self.config.k_factor;
        self.entries[a].rating = update_rating(ra, ea, score_a, k);
        self.entries[b].rating = update_rating(rb, eb, 1.0 - score_a, k);
        for (i, s) in [(a, score_a), (b, 1.0 - score_a)] {
            let e = &mut self.entries[i];
            e.games += 1;
            match s {
                s if s == 1.0 => e.wins += 1,
                s if s == 0.0 => e.losses += 1,
                _ => e.draws += 1,
            }
        }
    }

    pub fn total_rating(&self) -> f64 {
        self.entries.iter().map(|e| e.rating).sum()
    }

    pub fn rating_of(&self, name: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.entrant == name).map(|e| e.rating)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for e in &self.entries {
            w.serialize(e)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Kind of player in a roster.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntrantKind {
    Checkpoint,
    Heuristic,
    Noop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntrantSpec {
    pub name: String,
    pub kind: EntrantKind,
    /// Checkpoint file, relative to the roster file.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    /// Training population the entrant belongs to, for grouped statistics.
    #[serde(default)]
    pub group: Option<String>,
}

/// Tournament roster file: a map and a list of `[[entrant]]` tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Roster {
    pub map: MapName,
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default)]
    pub elo: EloConfig,
    pub entrant: Vec<EntrantSpec>,
}

impl Roster {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut roster: Roster = toml::from_str(&text).map_err(|e| Error::config("roster", e.message()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for e in &mut roster.entrant {
            if let Some(c) = &e.checkpoint {
                if c.is_relative() {
                    e.checkpoint = Some(base.join(c));
                }
            }
        }
        Ok(roster)
    }
}

/// A roster entry ready to play.
#[derive(Debug, Clone)]
pub struct Entrant {
    pub name: String,
    pub group: Option<String>,
    pub policy: Option<Arc<PolicySnapshot>>,
    pub kind: EntrantKind,
}

impl Entrant {
    pub fn heuristic(name: &str) -> Self {
        Self { name: name.into(), group: None, policy: None, kind: EntrantKind::Heuristic }
    }

    pub fn noop(name: &str) -> Self {
        Self { name: name.into(), group: None, policy: None, kind: EntrantKind::Noop }
    }

    pub fn learned(name: &str, policy: PolicySnapshot, group: Option<String>) -> Self {
        Self { name: name.into(), group, policy: Some(Arc::new(policy)), kind: EntrantKind::Checkpoint }
    }

    /// Evaluation controller: greedy for learned policies.
    pub fn controller(&self) -> Controller<'_> {
        match (&self.kind, &self.policy) {
            (EntrantKind::Checkpoint, Some(p)) => Controller::greedy(p),
            (EntrantKind::Heuristic, _) => Controller::Heuristic,
            _ => Controller::NoOp,
        }
    }

    /// Loads a checkpoint written for `map`.
    pub fn load_checkpoint(name: &str, path: &Path, map: MapName, group: Option<String>) -> Result<Self> {
        let wrap = |e: Error| match e {
            Error::Io(io) => Error::CheckpointLoad { path: path.to_path_buf(), reason: io.to_string() },
            other => other,
        };
        let (learner, extra) = TeamLearner::load(path).map_err(wrap)?;
        if let Some(m) = extra.get("map").and_then(|m| m.as_str()) {
            if m != map.as_str() {
                return Err(Error::MapMismatch(format!("{} was trained on {m}, roster plays {}", path.display(), map.as_str())));
            }
        }
        let expected = crate::learn::LearnerSpec::from_env(&EnvSpec::new(map, EnvConfig::default()));
        if learner.spec != expected {
            return Err(Error::MapMismatch(format!("{} has network shape for a different map", path.display())));
        }
        Ok(Self::learned(name, learner.snapshot(), group))
    }
}

pub fn load_roster(roster: &Roster) -> Result<Vec<Entrant>> {
    roster
        .entrant
        .iter()
        .map(|e| match e.kind {
            EntrantKind::Heuristic => Ok(Entrant { group: e.group.clone(), ..Entrant::heuristic(&e.name) }),
            EntrantKind::Noop => Ok(Entrant { group: e.group.clone(), ..Entrant::noop(&e.name) }),
            EntrantKind::Checkpoint => {
                let path = e.checkpoint.as_ref().ok_or_else(|| Error::config(format!("entrant.{}.checkpoint", e.name), "missing"))?;
                Entrant::load_checkpoint(&e.name, path, roster.map, e.group.clone())
            }
        })
        .collect()
}

/// One scheduled game: entrant `a` plays on `a_side` against `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledGame {
    pub a: usize,
    pub b: usize,
    pub a_side: TeamId,
    pub seed: u64,
}

/// Every unordered pair plays `games_per_pair` games: side-swapped pairs of
/// games sharing a seed, so each pair splits sides exactly. The whole list
/// is shuffled with `seed`.
pub fn schedule(entrants: usize, games_per_pair: usize, seed: u64) -> Result<Vec<ScheduledGame>> {
    if games_per_pair % 2 != 0 {
        return Err(Error::config("games_per_pair", "must be even so sides balance"));
    }
    let mut games = Vec::new();
    let mut pair = 0u64;
    for a in 0..entrants {
        for b in a + 1..entrants {
            for g in 0..games_per_pair {
                let s = derive_seed(seed, pair * games_per_pair as u64 + (g / 2) as u64);
                let a_side = if g % 2 == 0 { TeamId::Plus } else { TeamId::Minus };
                games.push(ScheduledGame { a, b, a_side, seed: s });
            }
            pair += 1;
        }
    }
    games.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(games)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameLog {
    pub order: usize,
    pub plus: String,
    pub minus: String,
    pub winner: String,
    pub length: usize,
    pub seed: u64,
    pub plus_rating_after: f64,
    pub minus_rating_after: f64,
}

#[derive(Debug, Clone)]
pub struct TournamentResult {
    pub table: EloTable,
    pub games: Vec<GameLog>,
    pub seed: u64,
}

impl TournamentResult {
    /// Writes elo.csv and games.csv.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.table.write_csv(&dir.join("elo.csv"))?;
        let mut w = csv::Writer::from_path(dir.join("games.csv"))?;
        for g in &self.games {
            w.serialize(g)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn play_scheduled(spec: &Arc<EnvSpec>, entrants: &[Entrant], g: &ScheduledGame) -> Result<(Winner, usize)> {
    let (a, b) = (entrants[g.a].controller(), entrants[g.b].controller());
    let (plus, minus) = if g.a_side == TeamId::Plus { (a, b) } else { (b, a) };
    let r = play_episode(spec, g.seed, plus, minus, false)?;
    Ok((r.winner, r.length))
}

/// Plays the full schedule and applies rating updates in schedule order.
/// Games may run on several workers; the result does not depend on how many.
pub fn run_tournament(
    spec: &Arc<EnvSpec>,
    entrants: &[Entrant],
    games_per_pair: usize,
    seed: u64,
    elo: EloConfig,
    workers: usize,
) -> Result<TournamentResult> {
    let games = schedule(entrants.len(), games_per_pair, seed)?;
    let outcomes = parallel_map(&games, workers, |g| play_scheduled(spec, entrants, g));
    let mut table = EloTable::new(entrants.iter().map(|e| e.name.clone()), elo);
    let mut log = Vec::with_capacity(games.len());
    for (order, (g, outcome)) in games.iter().zip(outcomes).enumerate() {
        let (winner, length) = outcome?;
        let score_a = winner.score_for(g.a_side).expect("finished game");
        table.record(g.a, g.b, score_a);
        let (p, m) = if g.a_side == TeamId::Plus { (g.a, g.b) } else { (g.b, g.a) };
        log.push(GameLog {
            order,
            plus: entrants[p].name.clone(),
            minus: entrants[m].name.clone(),
            winner: match winner {
                Winner::Plus => entrants[p].name.clone(),
                Winner::Minus => entrants[m].name.clone(),
                _ => "draw".into(),
            },
            length,
            seed: g.seed,
            plus_rating_after: table.entries[p].rating,
            minus_rating_after: table.entries[m].rating,
        });
    }
    Ok(TournamentResult { table, games: log, seed })
}

/// Win, draw and loss counts of one side of a series.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub wins: u32,
    pub draws: u32,
    pub losses: u32,
}

impl Tally {
    pub fn games(&self) -> u32 {
        self.wins + self.draws + self.losses
    }

    pub fn add(&mut self, score: f64) {
        match score {
            s if s == 1.0 => self.wins += 1,
            s if s == 0.0 => self.losses += 1,
            _ => self.draws += 1,
        }
    }

    /// `(win, draw, loss)` rates; draw is the remainder, so the three sum to 1.
    pub fn rates(&self) -> (f64, f64, f64) {
        let n = self.games().max(1) as f64;
        let (w, l) = (self.wins as f64 / n, self.losses as f64 / n);
        (w, 1.0 - (w + l), l)
    }
}

/// `games` side-balanced games of `a` against `b`, from `a`'s point of view.
pub fn play_series(spec: &Arc<EnvSpec>, a: Controller, b: Controller, games: usize, seed: u64) -> Result<Tally> {
    let mut tally = Tally::default();
    for g in 0..games {
        let s = derive_seed(seed, (g / 2) as u64);
        let (side, r) = if g % 2 == 0 {
            (TeamId::Plus, play_episode(spec, s, a, b, false)?)
        } else {
            (TeamId::Minus, play_episode(spec, s, b, a, false)?)
        };
        tally.add(r.winner.score_for(side).expect("finished game"));
    }
    Ok(tally)
}

/// Learning teams of one or several runs, grouped by checkpoint timestep.
#[derive(Debug, Clone, Default)]
pub struct CheckpointSet {
    pub by_timestep: BTreeMap<u64, Vec<Entrant>>,
}

impl CheckpointSet {
    /// Reads `dir`, which is either a run directory with a manifest or a
    /// directory of run directories.
    pub fn load(dir: &Path, map: MapName) -> Result<Self> {
        let mut runs = Vec::new();
        if dir.join(RunManifest::FILE).exists() {
            runs.push(dir.to_path_buf());
        } else {
            let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.join(RunManifest::FILE).exists())
                .collect();
            subdirs.sort();
            runs.extend(subdirs);
        }
        if runs.is_empty() {
            return Err(Error::MissingData(format!("no run manifests under {}", dir.display())));
        }
        let mut set = CheckpointSet::default();
        for run in runs {
            let manifest = RunManifest::load(&run)?;
            manifest.verify(&run)?;
            let label = run.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            for c in &manifest.checkpoints {
                let name = format!("{label}/team{}@{}", c.team, c.timestep);
                let e = Entrant::load_checkpoint(&name, &run.join(&c.path), map, Some(label.clone()))?;
                set.by_timestep.entry(c.timestep).or_default().push(e);
            }
        }
        Ok(set)
    }
}

/// Rates of one checkpoint timestep, averaged over the teams of set A.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinrateRow {
    pub timestep: u64,
    pub teams_a: usize,
    pub teams_b: usize,
    pub games: u32,
    pub win_mean: f64,
    pub win_std: f64,
    pub draw_mean: f64,
    pub draw_std: f64,
    pub loss_mean: f64,
    pub loss_std: f64,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// At every timestep present in both sets, each team of A plays `games`
/// games against each team of B.
pub fn winrate_matchups(
    spec: &Arc<EnvSpec>,
    a: &CheckpointSet,
    b: &CheckpointSet,
    games: usize,
    seed: u64,
    workers: usize,
) -> Result<Vec<WinrateRow>> {
    let mut rows = Vec::new();
    for (&t, teams_a) in &a.by_timestep {
        let Some(teams_b) = b.by_timestep.get(&t) else { continue };
        let cells: Vec<(usize, usize)> = (0..teams_a.len()).flat_map(|i| (0..teams_b.len()).map(move |j| (i, j))).collect();
        let tallies = parallel_map(&cells, workers, |&(i, j)| {
            let s = derive_seed(derive_seed(seed, t), (i * teams_b.len() + j) as u64);
            play_series(spec, teams_a[i].controller(), teams_b[j].controller(), games, s)
        });
        let mut per_team = vec![Tally::default(); teams_a.len()];
        for (&(i, _), tally) in cells.iter().zip(tallies) {
            let tally = tally?;
            per_team[i].wins += tally.wins;
            per_team[i].draws += tally.draws;
            per_team[i].losses += tally.losses;
        }
        let rates: Vec<(f64, f64, f64)> = per_team.iter().map(Tally::rates).collect();
        let (win_mean, win_std) = mean_std(&rates.iter().map(|r| r.0).collect::<Vec<_>>());
        let (draw_mean, draw_std) = mean_std(&rates.iter().map(|r| r.1).collect::<Vec<_>>());
        let (loss_mean, loss_std) = mean_std(&rates.iter().map(|r| r.2).collect::<Vec<_>>());
        rows.push(WinrateRow {
            timestep: t,
            teams_a: teams_a.len(),
            teams_b: teams_b.len(),
            games: per_team.iter().map(Tally::games).sum(),
            win_mean,
            win_std,
            draw_mean,
            draw_std,
            loss_mean,
            loss_std,
        });
    }
    if rows.is_empty() {
        return Err(Error::MissingData("the two checkpoint sets share no timestep".into()));
    }
    Ok(rows)
}

pub fn write_winrates(rows: &[WinrateRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Linear interpolation between order statistics (`h = (n - 1) p`).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Box-plot summary; whiskers reach the furthest points within
/// `whisker` interquartile ranges of the box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub group: String,
    pub n: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: usize,
}

pub const WHISKER_IQR: f64 = 1.7;

pub fn box_stats(group: &str, values: &[f64], whisker: f64) -> Result<BoxStats> {
    if values.is_empty() {
        return Err(Error::MissingData(format!("no values for group {group}")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let (q1, median, q3) = (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75));
    let reach = whisker * (q3 - q1);
    let (lo_lim, hi_lim) = (q1 - reach, q3 + reach);
    let inside: Vec<f64> = v.iter().copied().filter(|x| *x >= lo_lim && *x <= hi_lim).collect();
    Ok(BoxStats {
        group: group.into(),
        n: v.len(),
        median,
        q1,
        q3,
        whisker_low: inside.first().copied().unwrap_or(q1),
        whisker_high: inside.last().copied().unwrap_or(q3),
        outliers: v.len() - inside.len(),
    })
}

/// Box statistics of final ratings per entrant group; ungrouped entrants
/// are skipped.
pub fn group_box_stats(table: &EloTable, groups: &[(String, Option<String>)]) -> Result<Vec<BoxStats>> {
    let mut by_group: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (name, group) in groups {
        if let (Some(g), Some(r)) = (group, table.rating_of(name)) {
            by_group.entry(g.as_str()).or_default().push(r);
        }
    }
    by_group.into_iter().map(|(g, v)| box_stats(g, &v, WHISKER_IQR)).collect()
}

/// Highest-rated entrant of each group.
pub fn best_of_groups(table: &EloTable, groups: &[(String, Option<String>)]) -> BTreeMap<String, String> {
    let mut best: BTreeMap<String, (String, f64)> = BTreeMap::new();
    for (name, group) in groups {
        let (Some(g), Some(r)) = (group, table.rating_of(name)) else { continue };
        let e = best.entry(g.clone()).or_insert((name.clone(), r));
        if r > e.1 {
            *e = (name.clone(), r);
        }
    }
    best.into_iter().map(|(g, (n, _))| (g, n)).collect()
}

pub fn write_box_stats(stats: &[BoxStats], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in stats {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}
