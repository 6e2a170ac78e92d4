use maser_core::env::{make_builtin, Environment};
use maser_core::env::spec::RewardMode;
use maser_core::losses::entropy_correction_loss;
use maser_core::replay::Episode;
use maser_core::subgoal::BlockSnapshot;
use maser_core::trainer::{build_env, build_loss_graph, evaluate_with};
use maser_core::{CorrectionMode, Learner, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        hidden_dim: 8,
        mixer_embed: 4,
        repr_hidden: 8,
        batch_size: 4,
        ..TrainConfig::default()
    }
}

fn learner(cfg: TrainConfig) -> Learner {
    let env = build_env(&cfg).unwrap();
    Learner::new(cfg, Box::new(env)).unwrap()
}

/// Learner with a few collected episodes and a fixed batch drawn from them.
fn warm(cfg: TrainConfig, blocks: usize) -> (Learner, Vec<Episode>) {
    let mut l = learner(cfg);
    for _ in 0..blocks {
        l.train_block().unwrap();
    }
    let batch = l.buffer.iter().take(4).cloned().collect();
    (l, batch)
}

#[test]
fn identical_seeds_give_identical_runs() {
    let mut a = learner(tiny(11));
    let mut b = learner(tiny(11));
    for _ in 0..25 {
        assert_eq!(a.train_block().unwrap(), b.train_block().unwrap());
    }
    assert_eq!(a.params, b.params);
    let mut c = learner(tiny(12));
    let differs = (0..25).any(|_| c.train_block().unwrap() != a.train_block().unwrap());
    assert!(differs);
}

#[test]
fn first_block_only_collects() {
    let mut l = learner(tiny(1));
    let before = l.params.clone();
    let r = l.train_block().unwrap();
    assert!(!r.updated);
    assert!(r.subgoal_steps.is_empty());
    assert_eq!(r.episodes, 1);
    assert_eq!(l.params, before);
    assert_eq!(l.buffer.len(), 1);
    let r = l.train_block().unwrap();
    assert!(r.updated);
    assert_ne!(l.params, before);
}

#[test]
fn targets_sync_every_interval() {
    let cfg = TrainConfig {
        target_interval: 20,
        ..tiny(2)
    };
    let mut l = learner(cfg);
    for _ in 0..65 {
        let target_before = l.params.target_utility.clone();
        let r = l.train_block().unwrap();
        let synced_at = r.episodes - 1;
        assert_eq!(r.synced, synced_at > 0 && synced_at % 20 == 0, "block {}", r.block);
        if r.synced {
            assert_eq!(l.params.target_utility, l.params.utility);
            assert_eq!(l.params.target_mixer, l.params.mixer);
        } else {
            assert_eq!(l.params.target_utility, target_before);
        }
    }
}

#[test]
fn snapshot_values_match_graph_values() {
    let (mut l, batch) = warm(tiny(3), 6);
    let refs: Vec<&Episode> = batch.iter().collect();
    let (_, frozen) = build_loss_graph(&l.config, &l.arch, &l.params, &refs, None, &mut l.rng, 0).unwrap();
    let snap = BlockSnapshot::capture(0, l.arch.net, l.arch.mixer, &l.params);
    for (ep, v) in batch.iter().zip(&frozen.values) {
        assert_eq!(&snap.episode_values(ep).unwrap(), v);
        let a = snap.select_subgoals(ep, l.config.alpha).unwrap();
        assert!(a.steps.iter().all(|&t| t < ep.len));
    }
    for (ep, a) in batch.iter().zip(&frozen.assignments) {
        assert_eq!(&snap.select_subgoals(ep, l.config.alpha).unwrap(), a);
    }
}

#[test]
fn correction_window_follows_mode() {
    let (mut l, batch) = warm(tiny(4), 6);
    let refs: Vec<&Episode> = batch.iter().collect();
    let mut le_of = |mode| {
        let cfg = TrainConfig {
            correction: mode,
            ..l.config.clone()
        };
        let (g, f) = build_loss_graph(&cfg, &l.arch, &l.params, &refs, None, &mut l.rng, 0).unwrap();
        let le: Vec<f64> = g.le.iter().map(|&v| g.value(v)).collect();
        (le, f)
    };
    let (normal, f) = le_of(CorrectionMode::Normal);
    let (over, _) = le_of(CorrectionMode::Over);
    let (none, _) = le_of(CorrectionMode::None);
    for i in 0..l.arch.n_agents {
        let mut from_star = 0.0;
        let mut all = 0.0;
        for (v, a) in f.values.iter().zip(&f.assignments) {
            let q: Vec<Vec<f64>> = v.qvecs.iter().map(|row| row[i].clone()).collect();
            from_star += entropy_correction_loss(&q, a.steps[i]);
            all += entropy_correction_loss(&q, 0);
        }
        assert!((normal[i] - from_star).abs() < 1e-10 * (1.0 + from_star));
        assert!((over[i] - all).abs() < 1e-10 * (1.0 + all));
        assert!(over[i] >= normal[i]);
        assert_eq!(none[i], 0.0);
    }
}

#[test]
fn qmix_reduction_matches_zero_weights() {
    let cfg = tiny(5).qmix_reduction();
    assert_eq!(cfg.individual_weight(), 0.0);
    assert_eq!(cfg.correction_weight(), 0.0);
    assert_eq!(cfg.repr_weight(), 0.0);
    assert_eq!(cfg.lambda, 0.0);
    let (mut l, batch) = warm(cfg.clone(), 5);
    let refs: Vec<&Episode> = batch.iter().collect();
    let (mut g, _) = build_loss_graph(&cfg, &l.arch, &l.params, &refs, None, &mut l.rng, 0).unwrap();
    let td = g.l_td;
    let total = g.composite(&cfg).unwrap();
    assert_eq!(g.value(total), g.value(td));
}

#[test]
fn noop_policy_never_wins() {
    for mode in [RewardMode::Sparse, RewardMode::Dense] {
        let mut env = make_builtin("skirmish-2v2", mode).unwrap();
        let r = evaluate_with(&mut env, 50, 0, |e, _| Ok(vec![0; e.n_agents()])).unwrap();
        assert_eq!(r.wins, 0);
        assert_eq!(r.win_rate, 0.0);
    }
}

#[test]
fn random_policy_win_rate_in_unit_interval() {
    use rand::Rng;
    let mut env = make_builtin("skirmish-3v3", RewardMode::Sparse).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let r = evaluate_with(&mut env, 100, 1, |e, _| {
        Ok(e.avail_actions()
            .iter()
            .map(|m| {
                let allowed: Vec<usize> = (0..m.len()).filter(|&a| m[a]).collect();
                allowed[rng.gen_range(0..allowed.len())]
            })
            .collect())
    })
    .unwrap();
    assert!((0.0..=1.0).contains(&r.win_rate));
    assert_eq!(r.episodes, 100);
}

#[test]
fn learner_evaluation_is_reproducible() {
    let (l, _) = warm(tiny(6), 4);
    let mut e1 = build_env(&l.config).unwrap();
    let mut e2 = build_env(&l.config).unwrap();
    let a = l.evaluate(&mut e1, 10, 3).unwrap();
    let b = l.evaluate(&mut e2, 10, 3).unwrap();
    assert_eq!(a, b);
    assert!((0.0..=1.0).contains(&a.win_rate));
}
