use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::episode::{Batch, EpisodeRecord};
use super::learner::{Networks, TeamLearner};
use super::losses;
use super::testkit::{random_batch, random_episode, train_matrix_game};
use super::{LearnerConfig, LearnerSpec, Method};
use crate::nn::{check_gradients, ParamStore, Tape, Tensor};

const SPEC: LearnerSpec = LearnerSpec { n_agents: 2, obs_dim: 3, state_dim: 4, n_actions: 4 };

fn small(method: Method) -> LearnerConfig {
    LearnerConfig { method, hidden: 5, embed: 4, hyper_init: 0.3, noise_dim: 3, ..LearnerConfig::default() }
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

fn assert_grad_ok(err: f64) {
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn dqn_and_qmix_loss_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..3 {
        let cfg = small(Method::Qmix);
        let (nets, stores) = Networks::build(SPEC, &cfg, &mut rng);
        let target = perturbed(&stores.q, &mut rng);
        let batch = random_batch(SPEC, 3, 4, 1, &mut rng);
        let dqn = |s: &ParamStore| {
            let mut tape = Tape::new();
            let l = losses::dqn_loss(&mut tape, &nets.agent, s, &target, &batch, 0.9)?;
            Ok((tape.value(l).item(), tape.backward(l)?.for_store(s)))
        };
        assert_grad_ok(check_gradients(&stores.q, dqn, 150, 1e-5, &mut rng).unwrap().max_rel_error);
        let qmix = |s: &ParamStore| {
            let mut tape = Tape::new();
            let (l, _) = losses::qmix_loss(&mut tape, &nets.agent, &nets.mixer, s, &target, &batch, 0.9, None)?;
            Ok((tape.value(l).item(), tape.backward(l)?.for_store(s)))
        };
        assert_grad_ok(check_gradients(&stores.q, qmix, 150, 1e-5, &mut rng).unwrap().max_rel_error);
    }
}

#[test]
fn qvmix_loss_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = small(Method::Qvmix);
    let (nets, stores) = Networks::build(SPEC, &cfg, &mut rng);
    let (va, vm) = (nets.v_agent.clone().unwrap(), nets.v_mixer.clone().unwrap());
    let vt = perturbed(&stores.v, &mut rng);
    let batch = random_batch(SPEC, 3, 4, 1, &mut rng);
    let ys = losses::v_targets(&va, &vm, &vt, &batch, 0.9).unwrap();
    let lv = |s: &ParamStore| {
        let mut tape = Tape::new();
        let v = losses::vtot(&mut tape, &va, &vm, s, &batch)?;
        let l = tape.masked_mse(v, &ys, &batch.valid)?;
        Ok((tape.value(l).item(), tape.backward(l)?.for_store(s)))
    };
    assert_grad_ok(check_gradients(&stores.v, lv, 150, 1e-5, &mut rng).unwrap().max_rel_error);
    let lq = |s: &ParamStore| {
        let mut tape = Tape::new();
        let (q, _) = losses::chosen_qtot(&mut tape, &nets.agent, &nets.mixer, s, &batch, None)?;
        let l = tape.masked_mse(q, &ys, &batch.valid)?;
        Ok((tape.value(l).item(), tape.backward(l)?.for_store(s)))
    };
    assert_grad_ok(check_gradients(&stores.q, lq, 150, 1e-5, &mut rng).unwrap().max_rel_error);
}

#[test]
fn maven_composite_and_latent_policy_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = LearnerConfig { lambda_mi: 0.5, ..small(Method::Maven) };
    let (nets, stores) = Networks::build(SPEC, &cfg, &mut rng);
    let target = perturbed(&stores.q, &mut rng);
    let batch = random_batch(SPEC, 3, 4, cfg.noise_dim, &mut rng);
    let z = losses::latent_rows(&batch, cfg.noise_dim);
    let disc = nets.discriminator.clone().unwrap();
    let composite = |s: &ParamStore| {
        let mut tape = Tape::new();
        let (td, qs) = losses::qmix_loss(&mut tape, &nets.agent, &nets.mixer, s, &target, &batch, 0.9, Some(&z))?;
        let mi = losses::mi_loss(&mut tape, &disc, s, &qs, &batch)?;
        let mi = tape.scale(mi, cfg.lambda_mi)?;
        let l = tape.add(td, mi)?;
        Ok((tape.value(l).item(), tape.backward(l)?.for_store(s)))
    };
    assert_grad_ok(check_gradients(&stores.q, composite, 200, 1e-5, &mut rng).unwrap().max_rel_error);
    let policy = nets.latent_policy.clone().unwrap();
    let pg = |s: &ParamStore| {
        let mut tape = Tape::new();
        let l = losses::latent_policy_loss(&mut tape, &policy, s, &batch, 0.1)?;
        Ok((tape.value(l).item(), tape.backward(l)?.for_store(s)))
    };
    assert_grad_ok(check_gradients(&stores.latent, pg, 200, 1e-5, &mut rng).unwrap().max_rel_error);
}

#[test]
fn terminal_transition_has_no_bootstrap() {
    let spec = LearnerSpec { n_agents: 1, obs_dim: 1, state_dim: 1, n_actions: 2 };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (nets, mut stores) = Networks::build(spec, &small(Method::Qmix), &mut rng);
    let ids: Vec<_> = stores.q.ids().collect();
    for id in ids {
        let t = stores.q.get(id);
        *stores.q.get_mut(id) = Tensor::zeros(t.rows(), t.cols());
    }
    let ep = EpisodeRecord {
        id: 0,
        obs: vec![vec![0.3]; 2],
        states: vec![vec![0.1]; 2],
        avail: vec![vec![1.0, 1.0]; 2],
        actions: vec![vec![1]],
        rewards: vec![1.0],
        terminated: true,
        latent: 0,
    };
    let batch = Batch::new(&[&ep], 1, 2).unwrap();
    let mut target = stores.q.clone();
    // A huge target value must not leak into a terminal target.
    let v2b = nets.mixer.v2.b;
    *target.get_mut(v2b) = Tensor::scalar(1e3);
    let mut tape = Tape::new();
    let (l, _) = losses::qmix_loss(&mut tape, &nets.agent, &nets.mixer, &stores.q, &target, &batch, 0.99, None).unwrap();
    assert_eq!(tape.value(l).item(), 1.0);
}

#[test]
fn per_agent_greedy_target_equals_joint_maximum() {
    let spec = LearnerSpec { n_agents: 2, obs_dim: 2, state_dim: 3, n_actions: 2 };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let (nets, stores) = Networks::build(spec, &small(Method::Qmix), &mut rng);
        let mut ep = random_episode(spec, 1, 0, &mut rng);
        ep.terminated = false;
        ep.avail = vec![vec![1.0; 4]; 2];
        ep.rewards = vec![0.0];
        let batch = Batch::new(&[&ep], 2, 2).unwrap();
        let y = losses::q_targets(&nets.agent, &nets.mixer, &stores.q, &batch, 1.0, None).unwrap()[0];
        let outs = losses::unroll_infer(&nets.agent, &stores.q, &batch, true, None).unwrap();
        let q = &outs[1];
        let mut best = f64::NEG_INFINITY;
        for a in 0..2 {
            for b in 0..2 {
                let qs = Tensor::row_vector(vec![q.get(0, a), q.get(1, b)]);
                let s = Tensor::row_vector(batch.states[1].row(0).to_vec());
                best = best.max(nets.mixer.infer(&stores.q, &qs, &s).unwrap().item());
            }
        }
        assert!((y - best).abs() < 1e-12, "{y} vs {best}");
    }
}

#[test]
fn qvmix_reaches_bellman_fixed_point() {
    // One state, one action, reward 1, no termination, γ = 0.5: V = Q = 2.
    let spec = LearnerSpec { n_agents: 1, obs_dim: 1, state_dim: 1, n_actions: 1 };
    let cfg = LearnerConfig {
        method: Method::Qvmix,
        hidden: 4,
        embed: 4,
        hyper_init: 0.1,
        gamma: 0.5,
        lr: 0.01,
        batch_size: 1,
        buffer_size: 1,
        target_update_episodes: 10,
        ..LearnerConfig::default()
    };
    let mut learner = TeamLearner::new(spec, cfg, 7).unwrap();
    let ep = EpisodeRecord {
        id: 0,
        obs: vec![vec![1.0]; 2],
        states: vec![vec![1.0]; 2],
        avail: vec![vec![1.0]; 2],
        actions: vec![vec![0]],
        rewards: vec![1.0],
        terminated: false,
        latent: 0,
    };
    learner.observe_episode(ep.clone()).unwrap();
    for _ in 0..8000 {
        learner.train_step().unwrap();
        learner.note_episodes(1);
    }
    let batch = Batch::new(&[&ep], 1, 1).unwrap();
    let nets = &learner.nets;
    let mut tape = Tape::new();
    let v = losses::vtot(&mut tape, nets.v_agent.as_ref().unwrap(), nets.v_mixer.as_ref().unwrap(), &learner.online.v, &batch).unwrap();
    let v = tape.value(v).item();
    let mut tape = Tape::new();
    let (q, _) = losses::chosen_qtot(&mut tape, &nets.agent, &nets.mixer, &learner.online.q, &batch, None).unwrap();
    let q = tape.value(q).item();
    assert!((v - 2.0).abs() < 0.05, "V = {v}");
    assert!((q - 2.0).abs() < 0.05, "Q = {q}");
}

#[test]
fn maven_without_latent_or_mi_matches_qmix() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let qcfg = small(Method::Qmix);
    let mcfg = LearnerConfig { lambda_mi: 0.0, noise_dim: 1, ..small(Method::Maven) };
    let mut q = TeamLearner::new(SPEC, qcfg, 1).unwrap();
    let mut m = TeamLearner::new(SPEC, mcfg, 2).unwrap();
    // Copy every shared parameter, and express the plain head through the latent head.
    for (name, t) in q.online.q.iter() {
        if let Some(id) = m.online.q.id(name) {
            *m.online.q.get_mut(id) = t.clone();
        }
    }
    let set = |m: &mut TeamLearner, dst: &str, t: Tensor| {
        let id = m.online.q.id(dst).unwrap();
        *m.online.q.get_mut(id) = t;
    };
    let head_w = q.online.q.get(q.online.q.id("agent.head.w").unwrap()).clone();
    let head_b = q.online.q.get(q.online.q.id("agent.head.b").unwrap()).clone();
    let zeros = Tensor::zeros(1, head_w.len());
    set(&mut m, "agent.zhyper.w", Tensor::from_vec(1, head_w.len(), head_w.data().to_vec()).unwrap());
    set(&mut m, "agent.zhyper.b", zeros);
    set(&mut m, "agent.head_bias", head_b);
    q.update_targets();
    m.update_targets();
    let batch = random_batch(SPEC, 4, 5, 1, &mut rng);
    let before_q = q.online.q.clone();
    let before_m = m.online.q.clone();
    let sq = q.train_on_batch(&batch).unwrap();
    let sm = m.train_on_batch(&batch).unwrap();
    assert!((sq.loss - sm.loss).abs() < 1e-12);
    for (name, t) in q.online.q.iter() {
        if let Some(id) = m.online.q.id(name) {
            let dq: Vec<f64> = t.data().iter().zip(before_q.get(before_q.id(name).unwrap()).data()).map(|(a, b)| a - b).collect();
            let dm: Vec<f64> = m.online.q.get(id).data().iter().zip(before_m.get(id).data()).map(|(a, b)| a - b).collect();
            for (a, b) in dq.iter().zip(&dm) {
                assert!((a - b).abs() < 1e-9, "{name}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn identical_returns_give_zero_latent_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cfg = small(Method::Maven);
    let (nets, stores) = Networks::build(SPEC, &cfg, &mut rng);
    let mut batch = random_batch(SPEC, 6, 3, cfg.noise_dim, &mut rng);
    batch.returns = vec![4.0; 6];
    let mut tape = Tape::new();
    let l = losses::latent_policy_loss(&mut tape, nets.latent_policy.as_ref().unwrap(), &stores.latent, &batch, 4.0).unwrap();
    let g = tape.backward(l).unwrap().for_store(&stores.latent);
    assert!(g.global_norm() < 1e-12);
}

#[test]
fn discriminator_separates_latent_driven_behaviour() {
    // Toy: the latent decides whether agents drift up or down, which shows
    // in the observation differences. Only the discriminator is trained.
    let spec = LearnerSpec { n_agents: 2, obs_dim: 2, state_dim: 2, n_actions: 3 };
    let cfg = LearnerConfig { lambda_mi: 1.0, noise_dim: 2, lr: 0.01, ..small(Method::Maven) };
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (nets, mut stores) = Networks::build(spec, &cfg, &mut rng);
    let disc = nets.discriminator.clone().unwrap();
    let make = |rng: &mut ChaCha8Rng, n: usize| {
        let eps: Vec<EpisodeRecord> = (0..n)
            .map(|i| {
                let mut e = random_episode(spec, 6, i as u64, rng);
                e.latent = rng.gen_range(0..2);
                let drift = if e.latent == 0 { 0.2 } else { -0.2 };
                for t in 0..e.obs.len() {
                    for v in e.obs[t].iter_mut() {
                        *v = drift * t as f64 + rng.gen_range(-0.1..0.1);
                    }
                }
                e
            })
            .collect();
        eps
    };
    let disc_ids: Vec<_> = stores.q.ids().filter(|&id| stores.q.name(id).starts_with("disc")).collect();
    let mut opt = crate::nn::RmsProp::new(crate::nn::RmsPropConfig { lr: 0.01, ..Default::default() }, &stores.q);
    for _ in 0..150 {
        let eps = make(&mut rng, 16);
        let refs: Vec<&EpisodeRecord> = eps.iter().collect();
        let batch = Batch::new(&refs, 2, 3).unwrap();
        let z = losses::latent_rows(&batch, 2);
        let mut tape = Tape::new();
        let zv = tape.constant(z).unwrap();
        let qs = losses::unroll(&mut tape, &nets.agent, &stores.q, &batch, true, Some(zv), batch.max_len).unwrap();
        let mi = losses::mi_loss(&mut tape, &disc, &stores.q, &qs, &batch).unwrap();
        let mut g = tape.backward(mi).unwrap().for_store(&stores.q);
        for id in stores.q.ids() {
            if !disc_ids.contains(&id) {
                let t = g.0[id.index()].clone();
                g.0[id.index()] = Tensor::zeros(t.rows(), t.cols());
            }
        }
        opt.step(&mut stores.q, &g).unwrap();
    }
    let eps = make(&mut rng, 200);
    let refs: Vec<&EpisodeRecord> = eps.iter().collect();
    let batch = Batch::new(&refs, 2, 3).unwrap();
    let mut tape = Tape::new();
    let z = tape.constant(losses::latent_rows(&batch, 2)).unwrap();
    let qs = losses::unroll(&mut tape, &nets.agent, &stores.q, &batch, true, Some(z), batch.max_len).unwrap();
    // Recompute pooled logits through the loss path: lower loss means higher accuracy,
    // but accuracy is measured directly from per-episode pooled features.
    let _ = qs;
    let mut correct = 0;
    for e in &eps {
        let b = Batch::new(&[e], 2, 3).unwrap();
        let mut best = (0, f64::INFINITY);
        for guess in 0..2 {
            let mut b2 = b.clone();
            b2.latents = vec![guess];
            let mut tape = Tape::new();
            let z = tape.constant(losses::latent_rows(&b2, 2)).unwrap();
            let qs = losses::unroll(&mut tape, &nets.agent, &stores.q, &b2, true, Some(z), b2.max_len).unwrap();
            let l = losses::mi_loss(&mut tape, &disc, &stores.q, &qs, &b2).unwrap();
            let l = tape.value(l).item();
            if l < best.1 {
                best = (guess, l);
            }
        }
        correct += (best.0 == e.latent) as usize;
    }
    let acc = correct as f64 / eps.len() as f64;
    assert!(acc > 0.9, "accuracy {acc}");
}

#[test]
fn target_copy_every_200_episodes() {
    let mut l = TeamLearner::new(SPEC, small(Method::Qmix), 3).unwrap();
    let id = l.online.q.ids().next().unwrap();
    l.online.q.get_mut(id).data_mut()[0] += 1.0;
    assert!(!l.note_episodes(199));
    assert_ne!(l.online, l.target);
    assert!(l.note_episodes(1));
    assert_eq!(l.online, l.target);
    l.update_targets();
    assert_eq!(l.online, l.target);
}

#[test]
fn checkpoint_round_trip_and_shape_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for method in Method::ALL {
        let mut l = TeamLearner::new(SPEC, small(method), 5).unwrap();
        for i in 0..40 {
            let mut e = random_episode(SPEC, 3, i, &mut rng);
            e.latent = rng.gen_range(0..3);
            l.observe_episode(e).unwrap();
        }
        let cfg_batch = LearnerConfig { batch_size: 8, ..small(method) };
        l.config = cfg_batch;
        l.train_step().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.tdar");
        l.save(&path, serde_json::json!({"timestep": 7}), true).unwrap();
        let (back, extra) = TeamLearner::load(&path).unwrap();
        assert_eq!(extra["timestep"], 7);
        assert_eq!(back.online, l.online);
        assert_eq!(back.target, l.target);
        let probe = random_batch(SPEC, 2, 4, 3, &mut rng);
        let a = losses::unroll_infer(&l.nets.agent, &l.online.q, &probe, true, Some(&losses::latent_rows(&probe, 3))).unwrap();
        let b = losses::unroll_infer(&back.nets.agent, &back.online.q, &probe, true, Some(&losses::latent_rows(&probe, 3))).unwrap();
        assert_eq!(a, b);
        // Training continues identically after a reload.
        let mut l2 = back;
        let s1 = l.train_step().unwrap();
        let s2 = l2.train_step().unwrap();
        assert_eq!(s1, s2);
        assert_eq!(l.online, l2.online);

        let other = LearnerSpec { n_actions: 5, ..SPEC };
        let mut wrong = TeamLearner::new(other, small(method), 5).unwrap();
        let err = wrong.load_into(crate::nn::Archive::read(&path).unwrap()).unwrap_err();
        assert!(matches!(err, crate::Error::CheckpointShape(_)));
    }
}

#[test]
fn matrix_game_smoke() {
    let payoff = [[8.0, 2.0, 1.0], [3.0, 1.0, 0.0], [2.0, 0.0, -1.0]];
    let r = train_matrix_game(Method::Qmix, &payoff, 1500, 1, 10, 20).unwrap();
    assert_eq!(r.final_greedy, (0, 0));
}
