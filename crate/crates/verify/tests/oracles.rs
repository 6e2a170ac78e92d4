use maser_core::agent::local_q;
use maser_core::env::spec::RewardMode;
use maser_core::env::make_builtin;
use maser_core::replay::{Episode, EpisodeBuilder};
use maser_core::subgoal::{select_subgoals, BlockSnapshot};
use maser_core::trainer::{compute_update, evaluate_with};
use maser_core::TrainConfig;
use maser_verify::cases::{random_arch, random_episode, random_params};
use maser_verify::forward::{mixer_total, repr_embed, utility_q_sequence};
use maser_verify::planner::plan_actions;
use maser_verify::qmix::plain_qmix_gradients;
use maser_verify::{brute_force_subgoal, finite_diff_grad, relative_error};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn forward_passes_match_core_bitwise(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = random_arch(&mut rng);
        let p = random_params(&arch, &mut rng, 1.0);
        let ep = random_episode(&arch, 0, 6, &mut rng);
        for i in 0..arch.n_agents {
            let params = p.utility_of(i);
            let hist: Vec<Vec<f64>> = ep.obs[..ep.len].iter().map(|o| o[i].clone()).collect();
            let seq = utility_q_sequence(params, &hist);
            for t in 0..ep.len {
                prop_assert_eq!(&local_q(&arch.net, params, &hist[..=t]).unwrap().0, &seq[t]);
            }
            let emb = arch.repr.embed(&p.repr[i], &hist).unwrap();
            for (o, e) in hist.iter().zip(&emb) {
                prop_assert_eq!(&repr_embed(&p.repr[i], o), e);
            }
        }
        for t in 0..ep.len {
            let q: Vec<f64> = (0..arch.n_agents).map(|_| rng.gen_range(-2.0..2.0)).collect();
            prop_assert_eq!(arch.mixer.mix(&p.mixer, &q, &ep.states[t]).unwrap(), mixer_total(&p.mixer, &q, &ep.states[t]));
        }
    }

    #[test]
    fn brute_force_agrees_with_selection(seed in any::<u64>(), alpha in 0.0..=1.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = random_arch(&mut rng);
        let p = random_params(&arch, &mut rng, 1.0);
        let ep = random_episode(&arch, 3, 7, &mut rng);
        let snap = BlockSnapshot::capture(0, arch.net, arch.mixer, &p);
        let values = snap.episode_values(&ep).unwrap();
        prop_assert_eq!(select_subgoals(&values, &ep, alpha), brute_force_subgoal(&snap, &ep, alpha));
    }

    #[test]
    fn single_step_episode_selects_first_step(seed in any::<u64>(), alpha in 0.0..=1.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = random_arch(&mut rng);
        let p = random_params(&arch, &mut rng, 1.0);
        let mut b = EpisodeBuilder::new(0, 5, arch.n_agents, arch.obs_dim, arch.state_dim, arch.n_actions);
        let obs = vec![vec![0.5; arch.obs_dim]; arch.n_agents];
        b.push(obs.clone(), vec![0.1; arch.state_dim], vec![vec![true; arch.n_actions]; arch.n_agents], vec![1; arch.n_agents], 1.0, true);
        let ep = b.finish(true).unwrap();
        let snap = BlockSnapshot::capture(0, arch.net, arch.mixer, &p);
        let a = brute_force_subgoal(&snap, &ep, alpha);
        prop_assert!(a.steps.iter().all(|&t| t == 0));
        prop_assert_eq!(a.goals, obs);
    }
}

#[test]
fn qmix_reference_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..3 {
        let arch = random_arch(&mut rng);
        let p = random_params(&arch, &mut rng, 0.5);
        let eps: Vec<Episode> = (0..3).map(|k| random_episode(&arch, k, 4, &mut rng)).collect();
        let batch: Vec<&Episode> = eps.iter().collect();
        let (_, grads) = plain_qmix_gradients(&arch, &p, &batch, 0.9).unwrap();
        let fd = finite_diff_grad(|q| plain_qmix_gradients(&arch, q, &batch, 0.9).unwrap().0, &p, 1e-5);
        assert_eq!(grads.groups.len(), fd.groups.len());
        for (ga, gb) in grads.groups.iter().zip(&fd.groups) {
            for (ta, tb) in ga.iter().zip(gb) {
                for (a, b) in ta.data().iter().zip(tb.data()) {
                    assert!(relative_error(*a, *b, 1e-6) < 1e-4, "{a} vs {b}");
                }
            }
        }
    }
}

#[test]
fn reduced_learner_gradient_equals_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cfg = TrainConfig {
        grad_clip: 0.0,
        ..TrainConfig::default().qmix_reduction()
    };
    for _ in 0..5 {
        let arch = random_arch(&mut rng);
        let p = random_params(&arch, &mut rng, 0.5);
        let eps: Vec<Episode> = (0..4).map(|k| random_episode(&arch, k, 5, &mut rng)).collect();
        let batch: Vec<&Episode> = eps.iter().collect();
        let out = compute_update(&cfg, &arch, &p, &batch, &mut rng, 0).unwrap();
        let (loss, grads) = plain_qmix_gradients(&arch, &p, &batch, cfg.gamma).unwrap();
        assert_eq!(out.report.l_td, loss);
        assert_eq!(out.report.total, loss);
        assert_eq!(out.grads, grads);
    }
}

#[test]
fn planner_wins_every_skirmish() {
    let mut env = make_builtin("skirmish-2v2", RewardMode::Sparse).unwrap();
    let r = evaluate_with(&mut env, 300, 17, |e, _| Ok(plan_actions(e))).unwrap();
    assert_eq!(r.win_rate, 1.0);
}
