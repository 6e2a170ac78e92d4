//! Random small architectures, parameters and episodes for oracle sweeps.

use maser_core::agent::UtilityNet;
use maser_core::mixer::Mixer;
use maser_core::nn::ParamSet;
use maser_core::replay::{Episode, EpisodeBuilder};
use maser_core::reward::ReprNet;
use maser_core::trainer::Arch;
use rand::Rng;

pub fn random_arch(rng: &mut impl Rng) -> Arch {
    let n_agents = rng.gen_range(2..=3);
    let n_actions = rng.gen_range(3..=6);
    let obs_dim = rng.gen_range(3..=5);
    let state_dim = rng.gen_range(2..=4);
    Arch {
        n_agents,
        n_actions,
        obs_dim,
        state_dim,
        share_params: rng.gen_bool(0.25),
        net: UtilityNet {
            obs_dim,
            hidden: rng.gen_range(3..=6),
            n_actions,
        },
        mixer: Mixer {
            n_agents,
            state_dim,
            embed: rng.gen_range(2..=4),
        },
        repr: ReprNet {
            obs_dim,
            hidden: rng.gen_range(3..=6),
            out_dim: n_actions,
        },
    }
}

/// Initializes `arch`, then overwrites every online and target entry with
/// draws from `[-scale, scale]` so biases are non-zero too.
pub fn random_params(arch: &Arch, rng: &mut impl Rng, scale: f64) -> ParamSet {
    let mut p = arch.init_params(rng);
    for g in p.online_groups_mut() {
        for t in g.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-scale..=scale));
        }
    }
    for g in p.target_utility.iter_mut().chain(std::iter::once(&mut p.target_mixer)) {
        for t in g.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-scale..=scale));
        }
    }
    p
}

/// Episode with random observations, states, masks, actions and rewards in
/// `[-1, 1]`; length drawn from `1..=horizon`.
pub fn random_episode(arch: &Arch, id: u64, horizon: usize, rng: &mut impl Rng) -> Episode {
    let len = rng.gen_range(1..=horizon);
    let (n, u) = (arch.n_agents, arch.n_actions);
    let mut b = EpisodeBuilder::new(id, horizon, n, arch.obs_dim, arch.state_dim, u);
    for t in 0..len {
        let obs = (0..n)
            .map(|_| (0..arch.obs_dim).map(|_| rng.gen_range(-1.0..=1.0)).collect())
            .collect();
        let state = (0..arch.state_dim).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let mut avail = Vec::with_capacity(n);
        let mut actions = Vec::with_capacity(n);
        for _ in 0..n {
            let a = rng.gen_range(0..u);
            let mut mask: Vec<bool> = (0..u).map(|_| rng.gen_bool(0.7)).collect();
            mask[a] = true;
            avail.push(mask);
            actions.push(a);
        }
        b.push(obs, state, avail, actions, rng.gen_range(-1.0..=1.0), t + 1 == len);
    }
    b.finish(rng.gen_bool(0.5)).expect("random episode is well formed")
}
