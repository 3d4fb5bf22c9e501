//! Acceptance run. Prints one PASS/FAIL line per criterion; the mini
//! replication (11) only flags.
//!
//! Environment:
//! - `ACCEPTANCE_FULL=1` runs the replication at the full desk budget.
//! - `ACCEPTANCE_STRICT=1` exits non-zero when a binding criterion fails.
//! - `ACCEPTANCE_ONLY=1,5,9` runs a subset.

use std::fmt::Write as _;
use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use teamduel::config::{Preset, RunConfig};
use teamduel::env::{resolve_attack, EnvConfig, EnvSpec, MapName, UnitKind, UnitRecord};
use teamduel::game::TeamId;
use teamduel::learn::learner::Networks;
use teamduel::learn::nets::Mixer;
use teamduel::learn::testkit::{random_batch, train_matrix_game};
use teamduel::learn::{losses, LearnerConfig, LearnerSpec, Method, PolicySnapshot, TeamLearner};
use teamduel::nn::{check_gradients, Dense, GruCell, HyperLinear, ParamStore, Tape, Tensor};
use teamduel::play::Controller;
use teamduel::rating::{
    expected_score, group_box_stats, play_series, run_tournament, schedule, update_rating, EloConfig, EloTable, Entrant,
};
use teamduel::train::{sample_matchup, ScenarioKind, Trainer};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

type Check = fn() -> teamduel::Result<Outcome>;

fn main() -> ExitCode {
    let flag = |name: &str| std::env::var(name).is_ok_and(|v| v == "1");
    let (full, strict) = (flag("ACCEPTANCE_FULL"), flag("ACCEPTANCE_STRICT"));
    let only: Option<Vec<u32>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let selected = |id: u32| only.as_ref().is_none_or(|o| o.contains(&id));
    let criteria: [(u32, &str, bool, Check); 10] = [
        (1, "elo exactness", true, elo_exactness),
        (2, "damage table", true, damage_table),
        (3, "mixer monotonicity", true, mixer_monotonicity),
        (4, "per-agent greedy attains joint maximum", true, igm_oracle),
        (5, "gradient checks", true, gradient_checks),
        (6, "matrix-game convergence", true, matrix_game),
        (7, "toy-combat learning", true, toy_combat),
        (8, "budget accounting", true, budget_accounting),
        (9, "protocol counts", true, protocol_counts),
        (10, "determinism and persistence", true, determinism),
    ];
    let mut failed = Vec::new();
    let mut report = |id: u32, name: &str, binding: bool, started: Instant, r: teamduel::Result<Outcome>| {
        let secs = started.elapsed().as_secs_f64();
        let (pass, detail) = match r {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let tag = match (pass, binding) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "FLAG",
        };
        if !pass && binding {
            failed.push(id);
        }
        println!("criterion {id:>2} {tag} {name}: {detail} [{secs:.1}s]");
    };
    for (id, name, binding, check) in criteria {
        if selected(id) {
            let t = Instant::now();
            report(id, name, binding, t, check());
        }
    }
    if selected(11) {
        let t = Instant::now();
        report(11, "mini replication", false, t, mini_replication(full));
    }
    if failed.is_empty() {
        println!("all binding criteria passed");
        return ExitCode::SUCCESS;
    }
    println!("binding criteria failed: {failed:?}");
    if strict {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

fn elo_exactness() -> teamduel::Result<Outcome> {
    let (ea, _) = expected_score(1400.0, 1000.0, 400.0);
    let ten_to_one = (ea - 10.0 / 11.0).abs() < 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_sum = 0.0f64;
    for _ in 0..1000 {
        let (a, b) = (rng.gen_range(0.0..3000.0), rng.gen_range(0.0..3000.0));
        let (x, y) = expected_score(a, b, 400.0);
        worst_sum = worst_sum.max((x + y - 1.0).abs());
    }
    let update = update_rating(1000.0, 0.5, 1.0, 10.0) == 1005.0;
    let names: Vec<String> = (0..8).map(|i| format!("e{i}")).collect();
    let mut table = EloTable::new(names, EloConfig::default());
    for _ in 0..10_000 {
        let a = rng.gen_range(0..8);
        let b = (a + rng.gen_range(1..8)) % 8;
        let score = [0.0, 0.5, 1.0][rng.gen_range(0..3)];
        table.record(a, b, score);
    }
    let drift = (table.total_rating() - 8.0 * 1000.0).abs();
    let pass = ten_to_one && worst_sum < 1e-12 && update && drift < 1e-9;
    Ok(outcome(pass, format!("E(400)=10/11 {ten_to_one}, max |E_A+E_B-1| {worst_sum:.1e}, update {update}, drift {drift:.1e}")))
}

fn damage_table() -> teamduel::Result<Outcome> {
    let spec = EnvSpec::new(MapName::ThreeS5Z, EnvConfig::default());
    // (attacker, target, damage to a shielded target's shield, damage to bare hit points)
    let expected = [
        (UnitKind::Marine, UnitKind::Marine, None, 6.0),
        (UnitKind::Marine, UnitKind::Stalker, Some(6.0), 6.0),
        (UnitKind::Marine, UnitKind::Zealot, Some(6.0), 6.0),
        (UnitKind::Stalker, UnitKind::Stalker, Some(13.0), 17.0),
        (UnitKind::Stalker, UnitKind::Zealot, Some(13.0), 12.0),
        (UnitKind::Zealot, UnitKind::Stalker, Some(16.0), 14.0),
        (UnitKind::Zealot, UnitKind::Zealot, Some(16.0), 14.0),
    ];
    let mut cases = 0;
    let mut bad = Vec::new();
    for (a, t, shield_hit, hp_hit) in expected {
        let attacker = UnitRecord::fresh(a, TeamId::Plus, (5.0, 5.0));
        let full = UnitRecord::fresh(t, TeamId::Minus, (5.5, 5.0));
        let after = resolve_attack(&spec, &attacker, &full, 1)?;
        cases += 1;
        match shield_hit {
            Some(s) if full.shield - after.shield != s || after.hp != full.hp => bad.push(format!("{a:?}->{t:?} shielded")),
            None if full.hp - after.hp != hp_hit => bad.push(format!("{a:?}->{t:?}")),
            _ => {}
        }
        if shield_hit.is_some() {
            let mut bare = full.clone();
            bare.shield = 0.0;
            let after = resolve_attack(&spec, &attacker, &bare, 1)?;
            cases += 1;
            if bare.hp - after.hp != hp_hit || after.shield != 0.0 {
                bad.push(format!("{a:?}->{t:?} unshielded"));
            }
        }
    }
    Ok(outcome(bad.is_empty(), format!("{cases} cases, mismatches {bad:?}")))
}

fn random_tensor(rng: &mut impl Rng, r: usize, c: usize, scale: f64) -> Tensor {
    Tensor::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-scale..scale)).collect()).expect("shape")
}

fn random_mixer(rng: &mut impl Rng, n_agents: usize, state_dim: usize) -> (Mixer, ParamStore) {
    let mut store = ParamStore::new();
    let hyper_init = rng.gen_range(0.05..1.0);
    let mixer = Mixer::new(&mut store, "m", n_agents, state_dim, rng.gen_range(2..9), hyper_init, rng);
    (mixer, store)
}

fn mixer_monotonicity() -> teamduel::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = f64::INFINITY;
    let mut draws = 0;
    for _ in 0..100 {
        let n = rng.gen_range(1..6);
        let sd = rng.gen_range(1..9);
        let (mixer, store) = random_mixer(&mut rng, n, sd);
        for _ in 0..10 {
            let qs = random_tensor(&mut rng, 1, n, 5.0);
            let s = random_tensor(&mut rng, 1, sd, 2.0);
            let base = mixer.infer(&store, &qs, &s)?.item();
            for a in 0..n {
                let mut up = qs.clone();
                up.row_mut(0)[a] += 1e-3;
                worst = worst.min(mixer.infer(&store, &up, &s)?.item() - base);
            }
            draws += 1;
        }
    }
    Ok(outcome(worst >= -1e-9, format!("{draws} draws, smallest change {worst:.3e}")))
}

fn igm_oracle() -> teamduel::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_gap = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(2..4);
        let actions = rng.gen_range(2..6);
        let sd = rng.gen_range(1..6);
        let (mixer, store) = random_mixer(&mut rng, n, sd);
        let q = random_tensor(&mut rng, n, actions, 3.0);
        let s = random_tensor(&mut rng, 1, sd, 2.0);
        let greedy: Vec<f64> = (0..n).map(|i| q.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
        let at_greedy = mixer.infer(&store, &Tensor::row_vector(greedy), &s)?.item();
        let mut best = f64::NEG_INFINITY;
        for code in 0..actions.pow(n as u32) {
            let joint: Vec<f64> = (0..n).map(|i| q.get(i, (code / actions.pow(i as u32)) % actions)).collect();
            best = best.max(mixer.infer(&store, &Tensor::row_vector(joint), &s)?.item());
        }
        worst_gap = worst_gap.max(best - at_greedy);
    }
    Ok(outcome(worst_gap <= 1e-12, format!("100 draws, largest shortfall {worst_gap:.1e}")))
}

fn perturbed(store: &ParamStore, rng: &mut impl Rng) -> ParamStore {
    let mut s = store.clone();
    let ids: Vec<_> = s.ids().collect();
    for id in ids {
        for v in s.get_mut(id).data_mut() {
            *v += rng.gen_range(-0.2..0.2);
        }
    }
    s
}

fn gradient_checks() -> teamduel::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let mut note = |name: &'static str, err: f64| match worst.iter_mut().find(|(n, _)| *n == name) {
        Some(w) => w.1 = w.1.max(err),
        None => worst.push((name, err)),
    };
    let spec = LearnerSpec { n_agents: 2, obs_dim: 3, state_dim: 4, n_actions: 4 };
    for _ in 0..10 {
        // Layers and structural ops.
        let mut store = ParamStore::new();
        let d1 = Dense::new(&mut store, "d1", 4, 5, &mut rng);
        let gru = GruCell::new(&mut store, "g", 5, 3, &mut rng);
        let hyper = HyperLinear::new(&mut store, "h", 4, 3, 4, true, 0.5, &mut rng);
        let x = random_tensor(&mut rng, 3, 4, 1.0);
        let labels = [0usize, 2, 1];
        let weights = [0.5, -1.0, 0.3];
        let target: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = |s: &ParamStore| {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone())?;
            let h = d1.forward(&mut tape, s, xv)?;
            let (a, b, c, r) = (tape.elu(h)?, tape.tanh(h)?, tape.sigmoid(h)?, tape.relu(h)?);
            let ab = tape.mul(a, b)?;
            let cr = tape.sub(c, r)?;
            let h = tape.add(ab, cr)?;
            let mut state = tape.constant(Tensor::zeros(3, 3))?;
            for _ in 0..3 {
                state = gru.forward(&mut tape, s, h, state)?;
            }
            let y = hyper.forward(&mut tape, s, xv, state)?;
            let sm = tape.softmax_rows(y)?;
            let y = tape.abs(y)?;
            let cat = tape.concat_cols(&[y, sm])?;
            let cat = tape.slice_cols(cat, 1, 4)?;
            let rows = tape.concat_rows(&[cat, cat])?;
            let rep = tape.repeat_rows(cat, 2)?;
            let both = tape.add(rows, rep)?;
            let picked = tape.gather(both, &[0, 2, 3, 1, 3, 0])?;
            let picked = tape.one_minus(picked)?;
            let wide = tape.concat_cols(&[picked, picked])?;
            let flat = tape.reshape(wide, 12, 1)?;
            let mse = tape.masked_mse(flat, &target, &[1.0; 12])?;
            let nll = tape.weighted_nll(y, &labels, &weights)?;
            let m = tape.mean(sm)?;
            let m = tape.scale(m, 0.3)?;
            let l = tape.add(mse, nll)?;
            let l = tape.add(l, m)?;
            Ok((tape.value(l).item(), tape.backward(l)?.for_store(s)))
        };
        note("layers", check_gradients(&store, f, 200, 1e-5, &mut rng)?.max_rel_error);

        // Losses.
        let small = |method| LearnerConfig { method, hidden: 5, embed: 4, hyper_init: 0.3, noise_dim: 3, lambda_mi: 0.5, ..LearnerConfig::default() };
        let cfg = small(Method::Maven);
        let (nets, stores) = Networks::build(spec, &cfg, &mut rng);
        let target = perturbed(&stores.q, &mut rng);
        let batch = random_batch(spec, 3, 4, cfg.noise_dim, &mut rng);
        let z = losses::latent_rows(&batch, cfg.noise_dim);
        let disc = nets.discriminator.clone().expect("discriminator");
        let composite = |s: &ParamStore| {
            let mut tape = Tape::new();
            let (td, qs) = losses::qmix_loss(&mut tape, &nets.agent, &nets.mixer, s, &target, &batch, 0.9, Some(&z))?;
            let mi = losses::mi_loss(&mut tape, &disc, s, &qs, &batch)?;
            let mi = tape.scale(mi, cfg.lambda_mi)?;
            let l = tape.add(td, mi)?;
            Ok((tape.value(l).item(), tape.backward(l)?.for_store(s)))
        };
        note("maven composite", check_gradients(&stores.q, composite, 150, 1e-5, &mut rng)?.max_rel_error);
        let policy = nets.latent_policy.clone().expect("latent policy");
        let pg = |s: &ParamStore| {
            let mut tape = Tape::new();
            let l = losses::latent_policy_loss(&mut tape, &policy, s, &batch, 0.1)?;
            Ok((tape.value(l).item(), tape.backward(l)?.for_store(s)))
        };
        note("latent policy", check_gradients(&stores.latent, pg, 150, 1e-5, &mut rng)?.max_rel_error);

        let (nets, stores) = Networks::build(spec, &small(Method::Qvmix), &mut rng);
        let target = perturbed(&stores.q, &mut rng);
        let batch = random_batch(spec, 3, 4, 1, &mut rng);
        let dqn = |s: &ParamStore| {
            let mut tape = Tape::new();
            let l = losses::dqn_loss(&mut tape, &nets.agent, s, &target, &batch, 0.9)?;
            Ok((tape.value(l).item(), tape.backward(l)?.for_store(s)))
        };
        note("td", check_gradients(&stores.q, dqn, 150, 1e-5, &mut rng)?.max_rel_error);
        let qmix = |s: &ParamStore| {
            let mut tape = Tape::new();
            let (l, _) = losses::qmix_loss(&mut tape, &nets.agent, &nets.mixer, s, &target, &batch, 0.9, None)?;
            Ok((tape.value(l).item(), tape.backward(l)?.for_store(s)))
        };
        note("qmix", check_gradients(&stores.q, qmix, 150, 1e-5, &mut rng)?.max_rel_error);
        let (va, vm) = (nets.v_agent.clone().expect("v agent"), nets.v_mixer.clone().expect("v mixer"));
        let vt = perturbed(&stores.v, &mut rng);
        let ys = losses::v_targets(&va, &vm, &vt, &batch, 0.9)?;
        let lv = |s: &ParamStore| {
            let mut tape = Tape::new();
            let v = losses::vtot(&mut tape, &va, &vm, s, &batch)?;
            let l = tape.masked_mse(v, &ys, &batch.valid)?;
            Ok((tape.value(l).item(), tape.backward(l)?.for_store(s)))
        };
        note("qvmix v", check_gradients(&stores.v, lv, 150, 1e-5, &mut rng)?.max_rel_error);
        let lq = |s: &ParamStore| {
            let mut tape = Tape::new();
            let (q, _) = losses::chosen_qtot(&mut tape, &nets.agent, &nets.mixer, s, &batch, None)?;
            let l = tape.masked_mse(q, &ys, &batch.valid)?;
            Ok((tape.value(l).item(), tape.backward(l)?.for_store(s)))
        };
        note("qvmix q", check_gradients(&stores.q, lq, 150, 1e-5, &mut rng)?.max_rel_error);
    }
    let pass = worst.iter().all(|(_, e)| *e < 1e-4);
    let mut detail = String::from("10 instances each, max relative error");
    for (name, e) in &worst {
        let _ = write!(detail, " {name} {e:.1e};");
    }
    Ok(outcome(pass, detail))
}

/// Every row (column) ordering agrees across all columns (rows), so a
/// function monotone in each agent's utility can reproduce the payoff.
fn has_monotone_factorisation(p: &[[f64; 3]; 3]) -> bool {
    let consistent = |f: &dyn Fn(usize, usize) -> f64| {
        (0..3).all(|a| {
            (0..3).all(|b| {
                let signs: Vec<f64> = (0..3).map(|k| (f(a, k) - f(b, k)).signum()).filter(|s| *s != 0.0).collect();
                signs.windows(2).all(|w| w[0] == w[1])
            })
        })
    };
    consistent(&|a, k| p[a][k]) && consistent(&|b, k| p[k][b])
}

fn matrix_game() -> teamduel::Result<Outcome> {
    let payoff = [[8.0, 2.0, 1.0], [3.0, 1.0, 0.0], [2.0, 0.0, -1.0]];
    if !has_monotone_factorisation(&payoff) {
        return Ok(outcome(false, "payoff is not monotone"));
    }
    let episodes = 20_000;
    let mut detail = format!("{episodes} episodes, greedy optimum share over the last 2000:");
    let mut pass = true;
    for method in [Method::Qmix, Method::Qvmix] {
        let mut shares = Vec::new();
        for seed in 0..5 {
            let r = train_matrix_game(method, &payoff, episodes, seed, 10, 200)?;
            pass &= r.optimal_frequency >= 0.95;
            shares.push(format!("{:.2}", r.optimal_frequency));
        }
        let _ = write!(detail, " {method:?} [{}]", shares.join(" "));
    }
    Ok(outcome(pass, detail))
}

fn toy_config(kind: ScenarioKind, seed: u64, budget: Option<u64>) -> RunConfig {
    let mut c = RunConfig::defaults(MapName::TwoM, Preset::Desk);
    c.seed = seed;
    c.scenario.kind = kind;
    c.scenario.population_size = 3;
    c.scenario.workers = Some(1);
    if let Some(b) = budget {
        c.scenario.sample_budget = b;
        c.scenario.epsilon_anneal_steps = b / 5;
        c.scenario.checkpoint_every = b / 5;
    }
    c
}

/// Trains the given configs concurrently and returns every team's policy.
fn train_all(configs: Vec<RunConfig>) -> teamduel::Result<Vec<Vec<PolicySnapshot>>> {
    std::thread::scope(|s| {
        let handles: Vec<_> = configs
            .into_iter()
            .map(|c| {
                s.spawn(move || -> teamduel::Result<Vec<PolicySnapshot>> {
                    let mut t = Trainer::new(c)?;
                    t.run(|_| {})?;
                    Ok(t.teams.iter().map(TeamLearner::snapshot).collect())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("training thread")).collect()
    })
}

fn toy_combat() -> teamduel::Result<Outcome> {
    let seeds = [0u64, 1, 2];
    let policies = train_all(seeds.iter().map(|&s| toy_config(ScenarioKind::VsHeuristic, s, None)).collect())?;
    let spec = Arc::new(EnvSpec::new(MapName::TwoM, EnvConfig::default()));
    let mut rates = Vec::new();
    for (i, p) in policies.iter().enumerate() {
        let t = play_series(&spec, Controller::greedy(&p[0]), Controller::Heuristic, 200, 1000 + i as u64)?;
        rates.push(t.rates());
    }
    let mean = rates.iter().map(|r| r.0).sum::<f64>() / rates.len() as f64;
    let per: Vec<String> = rates.iter().map(|r| format!("{:.2}/{:.2}/{:.2}", r.0, r.1, r.2)).collect();
    Ok(outcome(mean >= 0.8, format!("2m, 10^6 samples, greedy win/draw/loss per seed [{}], mean win {mean:.3} (need 0.80)", per.join(" "))))
}

fn small_learner(c: &mut RunConfig) {
    c.learner.hidden = 16;
    c.learner.embed = 8;
}

fn budget_accounting() -> teamduel::Result<Outcome> {
    let mut sp = RunConfig::defaults(MapName::ThreeM, Preset::Paper);
    sp.scenario.kind = ScenarioKind::SelfPlay;
    sp.scenario.sample_budget = 10_000;
    sp.scenario.checkpoint_every = 2_000;
    sp.scenario.workers = Some(1);
    small_learner(&mut sp);
    let limit = sp.env_spec().map.episode_limit as u64;
    let mut t = Trainer::new(sp)?;
    t.run(|_| {})?;
    let steps = t.ledger.env_steps;
    let self_play_ok = steps >= 5_000 && steps < 5_000 + limit && t.ledger.teams[0].consumed == 2 * steps;

    let mut pop = RunConfig::defaults(MapName::ThreeM, Preset::Paper);
    pop.scenario.kind = ScenarioKind::Population;
    pop.scenario.population_size = 5;
    pop.scenario.sample_budget = 10_000;
    pop.scenario.checkpoint_every = 2_000;
    pop.scenario.workers = Some(1);
    small_learner(&mut pop);
    let mut t = Trainer::new(pop)?;
    t.run(|_| {})?;
    let pop_steps = t.ledger.env_steps;
    let every_team = t.ledger.teams.iter().all(|x| x.consumed >= 10_000);
    let pop_ok = pop_steps >= 25_000 && every_team;
    Ok(outcome(
        self_play_ok && pop_ok,
        format!("self-play 10^4 budget: {steps} env steps (5000 + at most one episode of {limit}); population of 5: {pop_steps} env steps (>= 25000), every team at budget {every_team}"),
    ))
}

fn protocol_counts() -> teamduel::Result<Outcome> {
    let games = schedule(4, 20, 9)?;
    let mut plus = [0usize; 4];
    let mut minus = [0usize; 4];
    let mut pair_plus = [[0i32; 4]; 4];
    for g in &games {
        let (p, m) = if g.a_side == TeamId::Plus { (g.a, g.b) } else { (g.b, g.a) };
        plus[p] += 1;
        minus[m] += 1;
        pair_plus[p][m] += 1;
    }
    let pairs_balanced = (0..4).all(|a| (0..4).all(|b| a == b || pair_plus[a][b] == 10));
    let count_ok = games.len() == 120 && plus == minus && pairs_balanced;

    let spec = Arc::new(EnvSpec::new(MapName::TwoM, EnvConfig::default()));
    let mut sums_exact = true;
    for (g, seed) in [(6usize, 1u64), (7, 2), (10, 3)] {
        for (a, b) in [(Controller::Heuristic, Controller::NoOp), (Controller::NoOp, Controller::Heuristic), (Controller::NoOp, Controller::NoOp)] {
            let (w, d, l) = play_series(&spec, a, b, g, seed)?.rates();
            sums_exact &= w + d + l == 1.0;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (n, population) = (100_000usize, 5usize);
    let mut counts = [0usize; 5];
    let (mut focal_plus, mut distinct) = (0usize, 0usize);
    for i in 0..n {
        let m = sample_matchup(i % population, population, &mut rng);
        counts[m.opponent] += 1;
        if m.opponent != m.focal {
            distinct += 1;
            focal_plus += usize::from(m.sides[0] == m.focal);
        }
    }
    let p = 1.0 / population as f64;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    let worst_z = counts.iter().map(|&c| (c as f64 - n as f64 * p).abs() / sigma).fold(0.0, f64::max);
    let coin_z = (focal_plus as f64 - distinct as f64 / 2.0).abs() / (distinct as f64 * 0.25).sqrt();
    let uniform = worst_z <= 3.0 && coin_z <= 3.0;
    Ok(outcome(
        count_ok && sums_exact && uniform,
        format!("{} games, sides balanced {}, rate sums exact {sums_exact}, opponent z max {worst_z:.2}, side coin z {coin_z:.2}", games.len(), plus == minus && pairs_balanced),
    ))
}

fn probe_outputs(p: &PolicySnapshot, spec: &EnvSpec) -> teamduel::Result<Vec<u64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let state = teamduel::env::GameState::new_episode(Arc::new(spec.clone()), 5);
    let obs = teamduel::env::team_observations(&state, TeamId::Plus)?;
    let mut st = p.begin(&teamduel::env::state_features(&state, TeamId::Plus), false, &mut rng)?;
    let mut bits = Vec::new();
    for _ in 0..3 {
        bits.extend(p.utilities(&mut st, &obs)?.data().iter().map(|v| v.to_bits()));
    }
    Ok(bits)
}

fn determinism() -> teamduel::Result<Outcome> {
    let mut identical = true;
    let mut detail = String::new();
    for kind in [ScenarioKind::VsHeuristic, ScenarioKind::SelfPlay, ScenarioKind::Population] {
        let config = |budget: u64| {
            let mut c = toy_config(kind, 17, Some(3_000));
            c.scenario.sample_budget = budget;
            c.scenario.checkpoint_every = 500;
            c.learner.batch_size = 8;
            small_learner(&mut c);
            c
        };
        let straight = tempfile::tempdir()?;
        let mut a = Trainer::create(config(3_000), straight.path())?;
        a.run(|_| {})?;
        let split = tempfile::tempdir()?;
        Trainer::create(config(1_500), split.path())?.run(|_| {})?;
        let mut b = Trainer::resume(config(3_000), split.path())?;
        b.run(|_| {})?;
        let same_params = a.teams.iter().zip(&b.teams).all(|(x, y)| x.online == y.online && x.target == y.target);
        let read = |d: &Path| std::fs::read(d.join("metrics.csv"));
        let same = a.ledger == b.ledger && same_params && read(straight.path())? == read(split.path())?;
        identical &= same;
        let _ = write!(detail, "{} resume identical {same}; ", kind.as_str());
    }

    let spec = EnvSpec::new(MapName::TwoM, EnvConfig::default());
    let dir = tempfile::tempdir()?;
    let mut learner = TeamLearner::new(LearnerSpec::from_env(&spec), LearnerConfig::default(), 4)?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let batch = random_batch(learner.spec, 4, 6, 1, &mut rng);
    learner.train_on_batch(&batch)?;
    let path = dir.path().join("probe.tdar");
    learner.save(&path, serde_json::json!({ "map": "2m" }), false)?;
    let loaded = Entrant::load_checkpoint("probe", &path, MapName::TwoM, None)?;
    let probe_same = probe_outputs(&learner.snapshot(), &spec)? == probe_outputs(loaded.policy.as_ref().expect("policy"), &spec)?;
    let _ = write!(detail, "checkpoint probe identical {probe_same}");
    Ok(outcome(identical && probe_same, detail))
}

fn mini_replication(full: bool) -> teamduel::Result<Outcome> {
    let budget = if full { None } else { Some(100_000) };
    let kinds = [ScenarioKind::VsHeuristic, ScenarioKind::SelfPlay, ScenarioKind::Population];
    let mut configs = Vec::new();
    for kind in kinds {
        for seed in 0..3 {
            configs.push(toy_config(kind, 100 + seed, budget));
        }
    }
    let labels: Vec<(ScenarioKind, u64)> = configs.iter().map(|c| (c.scenario.kind, c.seed)).collect();
    let policies = train_all(configs)?;
    let mut entrants = Vec::new();
    for ((kind, seed), teams) in labels.iter().zip(policies) {
        for (i, p) in teams.into_iter().enumerate() {
            entrants.push(Entrant::learned(&format!("{}-s{seed}-t{i}", kind.as_str()), p, Some(kind.as_str().to_string())));
        }
    }
    let spec = Arc::new(EnvSpec::new(MapName::TwoM, EnvConfig::default()));
    let result = run_tournament(&spec, &entrants, 10, 7, EloConfig::default(), 1)?;
    let groups: Vec<(String, Option<String>)> = entrants.iter().map(|e| (e.name.clone(), e.group.clone())).collect();
    let mut stats = group_box_stats(&result.table, &groups)?;
    stats.sort_by(|a, b| b.median.total_cmp(&a.median));
    let order: Vec<String> = stats.iter().map(|s| format!("{} {:.1}", s.group, s.median)).collect();
    let population_top = stats.first().is_some_and(|s| s.group == ScenarioKind::Population.as_str());
    let scale = if full { "desk budget" } else { "10^5 samples (ACCEPTANCE_FULL=1 for 10^6)" };
    Ok(outcome(
        population_top,
        format!("{scale}, {} entrants, {} games; median Elo order: {}", entrants.len(), result.games.len(), order.join(" > ")),
    ))
}
