//! Episodic FIFO replay.

use std::collections::VecDeque;
use std::io::Write;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{action, StepRecord};
use crate::error::{MaserError, Result};

/// A complete episode padded to the horizon `T_e`.
///
/// Steps `0..len` are valid; later steps are padding with zero observations,
/// zero rewards, no-op actions and a no-op-only action mask. All per-step
/// vectors are indexed `[t][agent]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub id: u64,
    pub horizon: usize,
    pub len: usize,
    pub obs: Vec<Vec<Vec<f64>>>,
    pub actions: Vec<Vec<usize>>,
    pub avail: Vec<Vec<Vec<bool>>>,
    pub states: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub done: Vec<bool>,
    pub won: bool,
}

impl Episode {
    pub fn n_agents(&self) -> usize {
        self.actions.first().map_or(0, Vec::len)
    }

    pub fn obs_dim(&self) -> usize {
        self.obs[0][0].len()
    }

    pub fn state_dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn n_actions(&self) -> usize {
        self.avail[0][0].len()
    }

    pub fn is_valid(&self, t: usize) -> bool {
        t < self.len
    }

    pub fn return_ex(&self) -> f64 {
        self.rewards[..self.len].iter().sum()
    }

    /// Checks the storage invariants.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MaserError::MalformedEpisode(m));
        let h = self.horizon;
        if h == 0 || self.len == 0 || self.len > h {
            return bad(format!("len {} with horizon {h}", self.len));
        }
        if self.obs.len() != h
            || self.actions.len() != h
            || self.avail.len() != h
            || self.states.len() != h
            || self.rewards.len() != h
            || self.done.len() != h
        {
            return bad("sequence lengths differ from the horizon".into());
        }
        let n = self.n_agents();
        if n == 0 {
            return bad("no agents".into());
        }
        let (od, sd, na) = (self.obs_dim(), self.state_dim(), self.n_actions());
        for t in 0..h {
            if self.obs[t].len() != n || self.actions[t].len() != n || self.avail[t].len() != n {
                return bad(format!("step {t}: agent count differs"));
            }
            if self.states[t].len() != sd || self.states[t].iter().any(|v| !v.is_finite()) {
                return bad(format!("step {t}: bad state vector"));
            }
            if !self.rewards[t].is_finite() {
                return bad(format!("step {t}: non-finite reward"));
            }
            for i in 0..n {
                let o = &self.obs[t][i];
                if o.len() != od || o.iter().any(|v| !v.is_finite()) {
                    return bad(format!("step {t} agent {i}: bad observation"));
                }
                let m = &self.avail[t][i];
                let a = self.actions[t][i];
                if m.len() != na || a >= na || !m[a] {
                    return bad(format!("step {t} agent {i}: action {a} not allowed"));
                }
                let noop_only = m.iter().enumerate().all(|(k, &ok)| ok == (k == action::NOOP));
                if noop_only && a != action::NOOP {
                    return bad(format!("step {t} agent {i}: dead agent acted"));
                }
                if t >= self.len && (!noop_only || o.iter().any(|&v| v != 0.0)) {
                    return bad(format!("step {t} agent {i}: padding not zeroed"));
                }
            }
            let expect_done = t + 1 == self.len;
            if t < self.len && self.done[t] != expect_done {
                return bad(format!("step {t}: done flag {} inconsistent with len {}", self.done[t], self.len));
            }
            if t >= self.len && (self.rewards[t] != 0.0 || self.done[t]) {
                return bad(format!("step {t}: padding carries reward or done"));
            }
        }
        Ok(())
    }

    pub fn log_records(&self) -> Vec<StepRecord> {
        (0..self.len)
            .map(|t| StepRecord {
                t: t + 1,
                obs: self.obs[t].clone(),
                actions: self.actions[t].clone(),
                r_ex: self.rewards[t],
                done: self.done[t],
            })
            .collect()
    }

    /// Writes the valid steps as JSON lines.
    pub fn write_log(&self, w: &mut impl Write) -> Result<()> {
        for rec in self.log_records() {
            let line = serde_json::to_string(&rec).map_err(|e| MaserError::Parse(e.to_string()))?;
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// Accumulates steps of a rollout and pads the result to the horizon.
#[derive(Debug)]
pub struct EpisodeBuilder {
    ep: Episode,
    n_agents: usize,
    obs_dim: usize,
    pad_state: Vec<f64>,
    pad_mask: Vec<bool>,
}

impl EpisodeBuilder {
    pub fn new(id: u64, horizon: usize, n_agents: usize, obs_dim: usize, state_dim: usize, n_actions: usize) -> Self {
        let mut noop_mask = vec![false; n_actions];
        noop_mask[action::NOOP] = true;
        Self {
            ep: Episode {
                id,
                horizon,
                len: 0,
                obs: Vec::with_capacity(horizon),
                actions: Vec::with_capacity(horizon),
                avail: Vec::with_capacity(horizon),
                states: Vec::with_capacity(horizon),
                rewards: Vec::with_capacity(horizon),
                done: Vec::with_capacity(horizon),
                won: false,
            },
            n_agents,
            obs_dim,
            pad_state: vec![0.0; state_dim],
            pad_mask: noop_mask,
        }
    }

    pub fn push(&mut self, obs: Vec<Vec<f64>>, state: Vec<f64>, avail: Vec<Vec<bool>>, actions: Vec<usize>, reward: f64, done: bool) {
        self.ep.obs.push(obs);
        self.ep.states.push(state);
        self.ep.avail.push(avail);
        self.ep.actions.push(actions);
        self.ep.rewards.push(reward);
        self.ep.done.push(done);
        self.ep.len += 1;
    }

    pub fn len(&self) -> usize {
        self.ep.len
    }

    pub fn is_empty(&self) -> bool {
        self.ep.len == 0
    }

    pub fn finish(mut self, won: bool) -> Result<Episode> {
        let h = self.ep.horizon;
        if let Some(last) = self.ep.done.last_mut() {
            *last = true;
        }
        while self.ep.obs.len() < h {
            self.ep.obs.push(vec![vec![0.0; self.obs_dim]; self.n_agents]);
            self.ep.states.push(self.pad_state.clone());
            self.ep.avail.push(vec![self.pad_mask.clone(); self.n_agents]);
            self.ep.actions.push(vec![action::NOOP; self.n_agents]);
            self.ep.rewards.push(0.0);
            self.ep.done.push(false);
        }
        self.ep.won = won;
        self.ep.validate()?;
        Ok(self.ep)
    }
}

/// FIFO buffer of the most recent `capacity` episodes.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    episodes: VecDeque<Episode>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            episodes: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn get(&self, k: usize) -> Option<&Episode> {
        self.episodes.get(k)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Episode> {
        self.episodes.iter()
    }

    /// Stores an episode, evicting the oldest one when full.
    pub fn push(&mut self, ep: Episode) -> Result<()> {
        ep.validate()?;
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(ep);
        Ok(())
    }

    /// Draws `m` episodes uniformly: without replacement when at least `m` are
    /// stored, with replacement otherwise.
    pub fn sample(&self, m: usize, rng: &mut impl Rng) -> Result<Vec<&Episode>> {
        let n = self.episodes.len();
        if n == 0 {
            return Err(MaserError::EmptyBuffer);
        }
        if n >= m {
            Ok(sample(rng, n, m).iter().map(|k| &self.episodes[k]).collect())
        } else {
            Ok((0..m).map(|_| &self.episodes[rng.gen_range(0..n)]).collect())
        }
    }

    /// Dumps every stored episode in the episode-log format.
    pub fn write_snapshot(&self, w: &mut impl Write) -> Result<()> {
        for ep in &self.episodes {
            ep.write_log(w)?;
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn toy_episode(id: u64, len: usize, horizon: usize) -> Episode {
        let mut b = EpisodeBuilder::new(id, horizon, 2, 3, 2, 6);
        for t in 0..len {
            let v = (id as f64 + t as f64) * 0.01;
            b.push(
                vec![vec![v, 0.5, -0.5], vec![-v, 0.25, 1.0]],
                vec![v, 1.0],
                vec![vec![true; 6]; 2],
                vec![t % 6, (t + 1) % 6],
                if t + 1 == len { 10.0 } else { 0.0 },
                t + 1 == len,
            );
        }
        b.finish(false).unwrap()
    }

    #[test]
    fn builder_pads_to_horizon() {
        let ep = toy_episode(0, 3, 5);
        assert_eq!(ep.len, 3);
        assert_eq!(ep.obs.len(), 5);
        assert!(ep.done[2] && !ep.done[3]);
        assert_eq!(ep.actions[4], vec![0, 0]);
    }

    #[test]
    fn push_to_empty_and_fidelity() {
        let mut buf = ReplayBuffer::new(4);
        let ep = toy_episode(7, 4, 4);
        buf.push(ep.clone()).unwrap();
        assert_eq!(buf.len(), 1);
        assert_eq!(buf.get(0).unwrap(), &ep);
    }

    #[test]
    fn fifo_eviction_at_capacity() {
        let mut buf = ReplayBuffer::new(5000);
        for id in 0..5001 {
            buf.push(toy_episode(id, 1, 1)).unwrap();
        }
        assert_eq!(buf.len(), 5000);
        assert!(buf.iter().all(|e| e.id != 0));
        assert_eq!(buf.get(0).unwrap().id, 1);
        assert_eq!(buf.get(4999).unwrap().id, 5000);
    }

    #[test]
    fn malformed_episode_rejected() {
        let mut ep = toy_episode(1, 3, 3);
        ep.rewards.pop();
        let mut buf = ReplayBuffer::new(2);
        assert!(matches!(buf.push(ep), Err(MaserError::MalformedEpisode(_))));
        let mut ep = toy_episode(1, 2, 3);
        ep.obs[2][0][0] = 1.0;
        assert!(buf.push(ep).is_err());
    }

    #[test]
    fn sample_without_and_with_replacement() {
        let mut buf = ReplayBuffer::new(10);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(buf.sample(3, &mut rng), Err(MaserError::EmptyBuffer)));
        for id in 0..3 {
            buf.push(toy_episode(id, 2, 2)).unwrap();
        }
        let mut ids: Vec<u64> = buf.sample(3, &mut rng).unwrap().iter().map(|e| e.id).collect();
        ids.sort();
        assert_eq!(ids, vec![0, 1, 2]);

        let mut one = ReplayBuffer::new(10);
        one.push(toy_episode(9, 2, 2)).unwrap();
        let s = one.sample(32, &mut rng).unwrap();
        assert_eq!(s.len(), 32);
        assert!(s.iter().all(|e| e.id == 9));
    }

    #[test]
    fn sample_is_seed_deterministic() {
        let mut buf = ReplayBuffer::new(10);
        for id in 0..8 {
            buf.push(toy_episode(id, 2, 2)).unwrap();
        }
        let a: Vec<u64> = buf.sample(4, &mut ChaCha8Rng::seed_from_u64(5)).unwrap().iter().map(|e| e.id).collect();
        let b: Vec<u64> = buf.sample(4, &mut ChaCha8Rng::seed_from_u64(5)).unwrap().iter().map(|e| e.id).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn sampling_is_uniform() {
        let mut buf = ReplayBuffer::new(10);
        for id in 0..10 {
            buf.push(toy_episode(id, 1, 1)).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut counts = [0usize; 10];
        let draws = 100_000;
        for _ in 0..draws {
            counts[buf.sample(1, &mut rng).unwrap()[0].id as usize] += 1;
        }
        let sigma = (draws as f64 * 0.1 * 0.9).sqrt();
        for c in counts {
            assert!((c as f64 - draws as f64 * 0.1).abs() <= 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn log_lines_roundtrip() {
        let ep = toy_episode(3, 2, 4);
        let mut out = Vec::new();
        ep.write_log(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let recs: Vec<StepRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(recs, ep.log_records());
        assert_eq!(recs.len(), 2);
        assert!(recs[1].done);
    }
}
