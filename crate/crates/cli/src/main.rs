use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use teamduel::config::RunConfig;
use teamduel::env::trace::{render_frame, replay_trace, TraceWriter};
use teamduel::env::{EnvConfig, EnvSpec, MapName};
use teamduel::play::{play_episode_observed, Controller};
use teamduel::rating::{
    best_of_groups, group_box_stats, load_roster, run_tournament, winrate_matchups, write_box_stats, write_winrates,
    CheckpointSet, Entrant, Roster,
};
use teamduel::train::{resolve_workers, RunManifest, ScenarioConfig, Trainer};
use teamduel::{Error, Result};

#[derive(Parser)]
#[command(name = "teamduel", version, about = "Two-team combat learners: training, evaluation and reports")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one scenario from a TOML config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue the run in this directory.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Run directory for a fresh run.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Round-robin Elo tournament over a roster file.
    Tournament {
        #[arg(long)]
        roster: PathBuf,
        #[arg(long, default_value_t = 20)]
        games_per_pair: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Checkpoint-wise win rates of the teams in A against the teams in B.
    Matchups {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = 24)]
        games: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory for winrates.csv (defaults to A).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Regenerate CSV summaries and SVG charts for a run or tournament directory.
    Report { dir: PathBuf },
    /// Render an episode trace as text frames, optionally recording it first.
    Replay {
        trace: PathBuf,
        /// Play a new episode and write its trace before rendering.
        #[arg(long)]
        record: bool,
        #[arg(long, default_value = "2m")]
        map: String,
        /// `heuristic`, `noop` or a checkpoint file.
        #[arg(long, default_value = "heuristic")]
        plus: String,
        #[arg(long, default_value = "heuristic")]
        minus: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train { config, resume, out } => train(&config, resume.as_deref(), out),
        Command::Tournament { roster, games_per_pair, seed, out } => tournament(&roster, games_per_pair, seed, &out),
        Command::Matchups { a, b, games, seed, out } => matchups(&a, &b, games, seed, out.as_deref().unwrap_or(&a)),
        Command::Report { dir } => {
            for path in teamduel::report::emit_reports(&dir)? {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        Command::Replay { trace, record, map, plus, minus, seed } => {
            if record {
                record_trace(&trace, &map, &plus, &minus, seed)?;
            }
            replay(&trace)
        }
    }
}

fn train(config_path: &Path, resume: Option<&Path>, out: Option<PathBuf>) -> Result<()> {
    let config = RunConfig::load(config_path)?;
    let mut trainer = match resume {
        Some(dir) => Trainer::resume(config, dir)?,
        None => {
            let dir = out.unwrap_or_else(|| {
                PathBuf::from("runs").join(format!(
                    "{}-{}-{}-s{}",
                    config.map.as_str(),
                    config.learner.method,
                    config.scenario.kind.as_str(),
                    config.seed
                ))
            });
            Trainer::create(config, &dir)?
        }
    };
    let dir = trainer.run_dir().expect("run directory").to_path_buf();
    println!("run directory: {}", dir.display());
    println!("resolved config: {}", dir.join("config.toml").display());
    println!("workers: {}", trainer.workers);
    let mut written = 0;
    trainer.run(|ledger| {
        let total: u64 = ledger.teams.iter().map(|t| t.checkpoints).sum();
        if total > written {
            written = total;
            let consumed: Vec<String> = ledger.teams.iter().map(|t| t.consumed.to_string()).collect();
            println!("episodes {} env steps {} consumed [{}]", ledger.episodes, ledger.env_steps, consumed.join(", "));
        }
    })?;
    println!("done: {} episodes, {} environment steps", trainer.ledger.episodes, trainer.ledger.env_steps);
    Ok(())
}

fn tournament(roster_path: &Path, games_per_pair: usize, seed: u64, out: &Path) -> Result<()> {
    let roster = Roster::load(roster_path)?;
    let entrants = load_roster(&roster)?;
    let spec = Arc::new(EnvSpec::new(roster.map, roster.env));
    let workers = resolve_workers(&ScenarioConfig::default());
    let result = run_tournament(&spec, &entrants, games_per_pair, seed, roster.elo, workers)?;
    result.write(out)?;
    let groups: Vec<(String, Option<String>)> = entrants.iter().map(|e| (e.name.clone(), e.group.clone())).collect();
    let stats = group_box_stats(&result.table, &groups)?;
    if !stats.is_empty() {
        write_box_stats(&stats, &out.join("boxstats.csv"))?;
        let best = best_of_groups(&result.table, &groups);
        std::fs::write(out.join("best.json"), serde_json::to_string_pretty(&best)?)?;
    }
    let mut entries = result.table.entries.clone();
    entries.sort_by(|a, b| b.rating.total_cmp(&a.rating));
    println!("{} games, seed {seed}", result.games.len());
    for e in entries {
        println!("{:>9.2}  {:<32} {}/{}/{}", e.rating, e.entrant, e.wins, e.draws, e.losses);
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn run_map(dir: &Path) -> Result<MapName> {
    let manifest_dir = if dir.join(RunManifest::FILE).exists() {
        dir.to_path_buf()
    } else {
        std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .find(|p| p.join(RunManifest::FILE).exists())
            .ok_or_else(|| Error::MissingData(format!("no run manifests under {}", dir.display())))?
    };
    let m = RunManifest::load(&manifest_dir)?;
    serde_json::from_value(serde_json::Value::String(m.map.clone())).map_err(|_| Error::MapMismatch(m.map))
}

fn matchups(a: &Path, b: &Path, games: usize, seed: u64, out: &Path) -> Result<()> {
    let map = run_map(a)?;
    if run_map(b)? != map {
        return Err(Error::MapMismatch("the two checkpoint sets were trained on different maps".into()));
    }
    let set_a = CheckpointSet::load(a, map)?;
    let set_b = CheckpointSet::load(b, map)?;
    let spec = Arc::new(EnvSpec::new(map, EnvConfig::default()));
    let rows = winrate_matchups(&spec, &set_a, &set_b, games, seed, resolve_workers(&ScenarioConfig::default()))?;
    std::fs::create_dir_all(out)?;
    write_winrates(&rows, &out.join("winrates.csv"))?;
    for r in &rows {
        println!("{:>10}  win {:.3} ± {:.3}  draw {:.3}  loss {:.3}", r.timestep, r.win_mean, r.win_std, r.draw_mean, r.loss_mean);
    }
    println!("wrote {}", out.join("winrates.csv").display());
    Ok(())
}

fn entrant(spec: &str, map: MapName) -> Result<Entrant> {
    match spec {
        "heuristic" => Ok(Entrant::heuristic("heuristic")),
        "noop" => Ok(Entrant::noop("noop")),
        path => Entrant::load_checkpoint(path, Path::new(path), map, None),
    }
}

fn record_trace(path: &Path, map: &str, plus: &str, minus: &str, seed: u64) -> Result<()> {
    let map: MapName = serde_json::from_value(serde_json::Value::String(map.into()))
        .map_err(|_| Error::config("map", "expected one of 3m, 3s5z, 2m"))?;
    let spec = Arc::new(EnvSpec::new(map, EnvConfig::default()));
    let (p, m) = (entrant(plus, map)?, entrant(minus, map)?);
    let file = BufWriter::new(File::create(path)?);
    let mut writer: Option<TraceWriter<BufWriter<File>>> = None;
    let mut file = Some(file);
    let controllers: [Controller; 2] = [p.controller(), m.controller()];
    play_episode_observed(&spec, seed, controllers[0], controllers[1], false, |before, joint, after, outcome| {
        if writer.is_none() {
            writer = Some(TraceWriter::new(file.take().expect("trace file"), before)?);
        }
        writer.as_mut().expect("trace writer").record(joint, after, outcome.rewards, outcome.winner)
    })?;
    if let Some(w) = writer {
        w.into_inner().flush()?;
    }
    Ok(())
}

fn replay(path: &Path) -> Result<()> {
    let states = replay_trace(BufReader::new(File::open(path)?))?;
    for s in &states {
        println!("{}", render_frame(s));
    }
    if let Some(last) = states.last() {
        println!("result: {:?} after {} steps", last.winner(), last.t);
    }
    Ok(())
}
