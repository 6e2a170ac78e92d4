//! A two-agent, two-action game with a handful of fully observed states and
//! known tables, solvable exactly by value iteration.

use maser_core::env::{Environment, StepResult};
use maser_core::{MaserError, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `[state][action of agent 0][action of agent 1]`.
pub type Table<T> = Vec<[[T; 2]; 2]>;

#[derive(Clone, Debug, PartialEq)]
pub struct TabularGame {
    pub transition: Table<usize>,
    pub reward: Table<f64>,
    pub episode_limit: usize,
    state: usize,
    t: usize,
}

impl TabularGame {
    pub fn new(transition: Table<usize>, reward: Table<f64>, episode_limit: usize) -> Result<Self> {
        let k = transition.len();
        if !(2..=4).contains(&k) || reward.len() != k {
            return Err(MaserError::Config(format!("tabular game needs 2-4 states, got {k}")));
        }
        if transition.iter().flatten().flatten().any(|&s| s >= k) {
            return Err(MaserError::Config("transition to an unknown state".into()));
        }
        if episode_limit == 0 {
            return Err(MaserError::Config("episode limit must be positive".into()));
        }
        Ok(Self {
            transition,
            reward,
            episode_limit,
            state: 0,
            t: 0,
        })
    }

    /// Three-state relay. From state 0 the joint action (0, 1) pays 0.2 and
    /// advances; (1, 1) in state 1 pays 0.2 and advances; (1, 0) in state 2
    /// pays 2 and returns to state 0. Any other action pays nothing and
    /// resets to state 0, except (0, 0) in state 0 which pays 0.2 and stays.
    pub fn relay() -> Self {
        let transition = vec![[[0, 1], [0, 0]], [[0, 0], [0, 2]], [[0, 0], [0, 0]]];
        let reward = vec![[[0.2, 0.2], [0.0, 0.0]], [[0.0, 0.0], [0.0, 0.2]], [[0.0, 0.0], [2.0, 0.0]]];
        Self::new(transition, reward, 12).expect("relay tables are valid")
    }

    pub fn n_states(&self) -> usize {
        self.transition.len()
    }

    /// Starts a new episode in state `s`.
    pub fn reset_to(&mut self, s: usize) {
        self.state = s;
        self.t = 0;
    }

    pub fn current_state(&self) -> usize {
        self.state
    }

    fn one_hot(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.n_states()];
        v[self.state] = 1.0;
        v
    }
}

impl Environment for TabularGame {
    fn name(&self) -> &str {
        "tabular"
    }

    fn n_agents(&self) -> usize {
        2
    }

    fn n_actions(&self) -> usize {
        2
    }

    fn obs_dim(&self) -> usize {
        self.n_states()
    }

    fn state_dim(&self) -> usize {
        self.n_states()
    }

    fn episode_limit(&self) -> usize {
        self.episode_limit
    }

    fn reset(&mut self, seed: u64) {
        self.state = ChaCha8Rng::seed_from_u64(seed).gen_range(0..self.n_states());
        self.t = 0;
    }

    fn observations(&self) -> Vec<Vec<f64>> {
        vec![self.one_hot(); 2]
    }

    fn state_vector(&self) -> Vec<f64> {
        self.one_hot()
    }

    fn avail_actions(&self) -> Vec<Vec<bool>> {
        vec![vec![true; 2]; 2]
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepResult> {
        if self.t >= self.episode_limit {
            return Err(MaserError::Usage("step after the episode ended".into()));
        }
        if actions.len() != 2 || actions.iter().any(|&a| a > 1) {
            return Err(MaserError::Usage(format!("invalid joint action {actions:?}")));
        }
        let (a, b) = (actions[0], actions[1]);
        let reward = self.reward[self.state][a][b];
        self.state = self.transition[self.state][a][b];
        self.t += 1;
        Ok(StepResult {
            reward,
            done: self.t == self.episode_limit,
            won: false,
            health_delta: 0.0,
        })
    }
}

/// Optimal joint action values.
#[derive(Clone, Debug, PartialEq)]
pub struct JointQ {
    pub q: Table<f64>,
    /// Sup-norm Bellman residual of `q`.
    pub residual: f64,
}

impl JointQ {
    /// Maximizing joint action, lowest `(a0, a1)` on ties.
    pub fn greedy(&self, s: usize) -> [usize; 2] {
        let mut best = [0, 0];
        for a in 0..2 {
            for b in 0..2 {
                if self.q[s][a][b] > self.q[s][best[0]][best[1]] {
                    best = [a, b];
                }
            }
        }
        best
    }

    pub fn value(&self, s: usize) -> f64 {
        self.q[s].iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

fn backup(game: &TabularGame, q: &Table<f64>, gamma: f64) -> Table<f64> {
    let v: Vec<f64> = q.iter().map(|t| t.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
    (0..game.n_states())
        .map(|s| {
            let mut out = [[0.0; 2]; 2];
            for (a, row) in out.iter_mut().enumerate() {
                for (b, x) in row.iter_mut().enumerate() {
                    *x = game.reward[s][a][b] + gamma * v[game.transition[s][a][b]];
                }
            }
            out
        })
        .collect()
}

fn sup_diff(a: &Table<f64>, b: &Table<f64>) -> f64 {
    a.iter()
        .flatten()
        .flatten()
        .zip(b.iter().flatten().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Discounted infinite-horizon value iteration until the sup-norm residual
/// is at most 1e-10.
pub fn value_iteration(game: &TabularGame, gamma: f64) -> Result<JointQ> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(MaserError::Config(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    let mut q: Table<f64> = vec![[[0.0; 2]; 2]; game.n_states()];
    loop {
        let next = backup(game, &q, gamma);
        let residual = sup_diff(&next, &q);
        q = next;
        if residual <= 1e-10 {
            let residual = sup_diff(&backup(game, &q, gamma), &q);
            return Ok(JointQ { q, residual });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rewards_give_zero_values() {
        let g = TabularGame::new(vec![[[1, 0], [0, 1]], [[0, 0], [1, 1]]], vec![[[0.0; 2]; 2]; 2], 5).unwrap();
        let q = value_iteration(&g, 0.9).unwrap();
        assert!(q.q.iter().flatten().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn absorbing_reward_is_geometric() {
        let g = TabularGame::new(vec![[[1; 2]; 2]; 2], vec![[[0.0; 2]; 2], [[1.0; 2]; 2]], 5).unwrap();
        let q = value_iteration(&g, 0.99).unwrap();
        assert!(q.residual <= 1e-10);
        for a in 0..2 {
            for b in 0..2 {
                assert!((q.q[1][a][b] - 100.0).abs() < 1e-7);
                assert!((q.q[0][a][b] - 99.0).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn relay_optimum_follows_the_chain() {
        let g = TabularGame::relay();
        let q = value_iteration(&g, 0.99).unwrap();
        assert!(q.residual <= 1e-10);
        assert_eq!(q.greedy(0), [0, 1]);
        assert_eq!(q.greedy(1), [1, 1]);
        assert_eq!(q.greedy(2), [1, 0]);
    }

    #[test]
    fn rejects_bad_tables() {
        assert!(TabularGame::new(vec![[[5; 2]; 2]; 2], vec![[[0.0; 2]; 2]; 2], 3).is_err());
        assert!(TabularGame::new(vec![[[0; 2]; 2]], vec![[[0.0; 2]; 2]], 3).is_err());
        assert!(value_iteration(&TabularGame::relay(), 1.0).is_err());
    }

    #[test]
    fn episode_ends_at_limit() {
        let mut g = TabularGame::relay();
        g.reset(3);
        for t in 0..12 {
            assert_eq!(g.step(&[0, 0]).unwrap().done, t == 11);
        }
        assert!(g.step(&[0, 0]).is_err());
    }
}
