//! Report emission: CSV summaries and SVG charts regenerated from the CSV
//! files of run and tournament directories.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::rating::{box_stats, mean_std, BoxStats, EloEntry, WinrateRow, WHISKER_IQR};
use crate::train::MetricsRow;

/// A curve point with its band: mean ± half a standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub mean: f64,
    pub std: f64,
    pub band_low: f64,
    pub band_high: f64,
    pub n: usize,
}

/// Aggregates equally sampled series into mean ± std/2 bands.
pub fn band_curve(xs: &[f64], series: &[Vec<f64>]) -> Vec<CurvePoint> {
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let vals: Vec<f64> = series.iter().filter_map(|s| s.get(i).copied()).collect();
            let (mean, std) = mean_std(&vals);
            CurvePoint { x, mean, std, band_low: mean - std / 2.0, band_high: mean + std / 2.0, n: vals.len() }
        })
        .collect()
}

/// Per-team training win rate in consecutive windows of `window` consumed
/// samples. Windows without episodes repeat the previous value.
pub fn training_winrates(rows: &[MetricsRow], window: u64, budget: u64) -> BTreeMap<usize, Vec<f64>> {
    let bins = budget.div_ceil(window) as usize;
    let mut counts: BTreeMap<usize, Vec<(u32, u32)>> = BTreeMap::new();
    for r in rows {
        let bin = ((r.consumed.saturating_sub(1)) / window) as usize;
        let c = counts.entry(r.team).or_insert_with(|| vec![(0, 0); bins]);
        if bin < bins {
            c[bin].1 += 1;
            c[bin].0 += (r.outcome == "win") as u32;
        }
    }
    counts
        .into_iter()
        .map(|(team, c)| {
            let mut last = 0.0;
            let rates = c
                .into_iter()
                .map(|(w, n)| {
                    if n > 0 {
                        last = w as f64 / n as f64;
                    }
                    last
                })
                .collect();
            (team, rates)
        })
        .collect()
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<T>, _>>()?)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn run_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    if dir.join("metrics.csv").exists() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("metrics.csv").exists())
        .collect();
    out.sort();
    Ok(out)
}

/// Writes every report that the contents of `dir` support and returns the
/// files written.
pub fn emit_reports(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let runs = run_dirs(dir)?;
    if !runs.is_empty() {
        let mut series = Vec::new();
        let mut xs = Vec::new();
        for run in &runs {
            let cfg = RunConfig::load(&run.join("config.toml"))?;
            let sc = &cfg.scenario;
            let rows: Vec<MetricsRow> = read_csv(&run.join("metrics.csv"))?;
            if rows.is_empty() {
                return Err(Error::MissingData(format!("{} has no episodes", run.join("metrics.csv").display())));
            }
            let per_team = training_winrates(&rows, sc.checkpoint_every, sc.sample_budget);
            let these: Vec<f64> = (1..=sc.sample_budget.div_ceil(sc.checkpoint_every)).map(|k| (k * sc.checkpoint_every) as f64).collect();
            if these.len() > xs.len() {
                xs = these;
            }
            series.extend(per_team.into_values());
        }
        let curve = band_curve(&xs, &series);
        let csv_path = dir.join("training_winrate.csv");
        write_csv(&csv_path, &curve)?;
        let svg_path = dir.join("training_winrate.svg");
        fs::write(&svg_path, line_chart("Training win rate", "consumed samples", "win rate", &[("win", &curve)]))?;
        written.extend([csv_path, svg_path]);
    }
    let winrates = dir.join("winrates.csv");
    if winrates.exists() {
        let rows: Vec<WinrateRow> = read_csv(&winrates)?;
        if rows.is_empty() {
            return Err(Error::MissingData(format!("{} is empty", winrates.display())));
        }
        let to_curve = |m: fn(&WinrateRow) -> (f64, f64)| -> Vec<CurvePoint> {
            rows.iter()
                .map(|r| {
                    let (mean, std) = m(r);
                    CurvePoint { x: r.timestep as f64, mean, std, band_low: mean - std / 2.0, band_high: mean + std / 2.0, n: r.teams_a }
                })
                .collect()
        };
        let wins = to_curve(|r| (r.win_mean, r.win_std));
        let losses = to_curve(|r| (r.loss_mean, r.loss_std));
        let svg_path = dir.join("winrates.svg");
        fs::write(&svg_path, line_chart("Matchup rates", "timestep", "rate", &[("win", &wins), ("loss", &losses)]))?;
        written.push(svg_path);
    }
    let boxes = dir.join("boxstats.csv");
    let elo = dir.join("elo.csv");
    let stats: Option<Vec<BoxStats>> = if boxes.exists() {
        Some(read_csv(&boxes)?)
    } else if elo.exists() {
        let entries: Vec<EloEntry> = read_csv(&elo)?;
        let ratings: Vec<f64> = entries.iter().map(|e| e.rating).collect();
        let s = vec![box_stats("all", &ratings, WHISKER_IQR)?];
        let path = dir.join("boxstats.csv");
        write_csv(&path, &s)?;
        written.push(path);
        Some(s)
    } else {
        None
    };
    if let Some(stats) = stats {
        if stats.is_empty() {
            return Err(Error::MissingData(format!("{} is empty", boxes.display())));
        }
        let svg_path = dir.join("elo_boxes.svg");
        fs::write(&svg_path, box_chart("Elo ratings", &stats))?;
        written.push(svg_path);
    }
    if written.is_empty() {
        return Err(Error::MissingData(format!(
            "{} holds no metrics.csv, winrates.csv, elo.csv or boxstats.csv",
            dir.display()
        )));
    }
    Ok(written)
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const M: f64 = 56.0;
const COLOURS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn frame(svg: &mut String, title: &str, xlabel: &str, ylabel: &str, x: (f64, f64), y: (f64, f64)) {
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 10.0, escape(xlabel));
    let _ = writeln!(svg, r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#, H / 2.0, H / 2.0, escape(ylabel));
    let _ = writeln!(svg, r#"<rect x="{M}" y="{M}" width="{}" height="{}" fill="none" stroke="black"/>"#, W - 2.0 * M, H - 2.0 * M);
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let (xv, yv) = (x.0 + f * (x.1 - x.0), y.0 + f * (y.1 - y.0));
        let px = M + f * (W - 2.0 * M);
        let py = H - M - f * (H - 2.0 * M);
        let _ = writeln!(svg, r#"<text x="{px:.1}" y="{}" text-anchor="middle">{}</text>"#, H - M + 16.0, tick(xv));
        let _ = writeln!(svg, r#"<text x="{}" y="{py:.1}" text-anchor="end">{}</text>"#, M - 6.0, tick(yv));
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 1e4 {
        format!("{v:.1e}")
    } else if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Line chart with shaded bands.
pub fn line_chart(title: &str, xlabel: &str, ylabel: &str, series: &[(&str, &[CurvePoint])]) -> String {
    let xr = range(series.iter().flat_map(|(_, s)| s.iter().map(|p| p.x)));
    let yr = range(series.iter().flat_map(|(_, s)| s.iter().flat_map(|p| [p.band_low, p.band_high])));
    let sx = |x: f64| M + (x - xr.0) / (xr.1 - xr.0) * (W - 2.0 * M);
    let sy = |y: f64| H - M - (y - yr.0) / (yr.1 - yr.0) * (H - 2.0 * M);
    let mut svg = String::new();
    frame(&mut svg, title, xlabel, ylabel, xr, yr);
    for (k, (name, pts)) in series.iter().enumerate() {
        let c = COLOURS[k % COLOURS.len()];
        if pts.is_empty() {
            continue;
        }
        let mut band = String::new();
        for p in pts.iter() {
            let _ = write!(band, "{:.2},{:.2} ", sx(p.x), sy(p.band_high));
        }
        for p in pts.iter().rev() {
            let _ = write!(band, "{:.2},{:.2} ", sx(p.x), sy(p.band_low));
        }
        let _ = writeln!(svg, r#"<polygon points="{}" fill="{c}" fill-opacity="0.2" stroke="none"/>"#, band.trim_end());
        let line: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", sx(p.x), sy(p.mean))).collect();
        let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="2"/>"#, line.join(" "));
        let _ = writeln!(svg, r#"<text x="{}" y="{}" fill="{c}">{}</text>"#, W - M - 60.0, M + 16.0 + 16.0 * k as f64, escape(name));
    }
    svg.push_str("</svg>\n");
    svg
}

/// One box per group.
pub fn box_chart(title: &str, stats: &[BoxStats]) -> String {
    let yr = range(stats.iter().flat_map(|s| [s.whisker_low, s.whisker_high, s.q1, s.q3]));
    let sy = |y: f64| H - M - (y - yr.0) / (yr.1 - yr.0) * (H - 2.0 * M);
    let mut svg = String::new();
    frame(&mut svg, title, "", "rating", (0.0, stats.len() as f64), yr);
    let slot = (W - 2.0 * M) / stats.len().max(1) as f64;
    for (k, s) in stats.iter().enumerate() {
        let c = COLOURS[k % COLOURS.len()];
        let cx = M + slot * (k as f64 + 0.5);
        let half = slot * 0.25;
        let _ = writeln!(svg, r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/>"#, sy(s.whisker_low), sy(s.q1));
        let _ = writeln!(svg, r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/>"#, sy(s.q3), sy(s.whisker_high));
        for w in [s.whisker_low, s.whisker_high] {
            let _ = writeln!(svg, r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#, cx - half / 2.0, sy(w), cx + half / 2.0, sy(w));
        }
        let _ = writeln!(
            svg,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{c}" fill-opacity="0.4" stroke="black"/>"#,
            cx - half,
            sy(s.q3),
            2.0 * half,
            (sy(s.q1) - sy(s.q3)).max(0.5)
        );
        let _ = writeln!(svg, r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black" stroke-width="2"/>"#, cx - half, sy(s.median), cx + half, sy(s.median));
        let _ = writeln!(svg, r#"<text x="{cx:.2}" y="{}" text-anchor="middle">{}</text>"#, H - M + 30.0, escape(&s.group));
    }
    svg.push_str("</svg>\n");
    svg
}
