//! Per-agent subgoal selection from replayed episodes.
//!
//! Each timestep of an episode is scored by a blend of the agent's greedy
//! local value and the (agent-averaged) total value of the joint action that
//! was actually taken. The highest-scoring valid step becomes the agent's
//! subgoal and its stored observation the subgoal observation.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::agent::{masked_argmax, UtilityNet};
use crate::error::{config_err, MaserError, Result};
use crate::mixer::Mixer;
use crate::nn::{NetParams, ParamSet, Tape, Tensor};
use crate::replay::Episode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubgoalMode {
    Maser,
    Random,
    /// Local term only (alpha = 1).
    LocalOnly,
    /// Total term only (alpha = 0).
    TotalOnly,
}

impl SubgoalMode {
    /// Blend weight used for scoring, or `None` for random selection.
    pub fn alpha(self, configured: f64) -> Option<f64> {
        match self {
            Self::Maser => Some(configured),
            Self::Random => None,
            Self::LocalOnly => Some(1.0),
            Self::TotalOnly => Some(0.0),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Maser => "maser",
            Self::Random => "random",
            Self::LocalOnly => "local_only",
            Self::TotalOnly => "total_only",
        }
    }
}

impl std::str::FromStr for SubgoalMode {
    type Err = MaserError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "maser" => Ok(Self::Maser),
            "random" => Ok(Self::Random),
            "local_only" => Ok(Self::LocalOnly),
            "total_only" => Ok(Self::TotalOnly),
            _ => Err(config_err(format!(
                "subgoal mode must be maser|random|local_only|total_only, got `{s}`"
            ))),
        }
    }
}

impl std::fmt::Display for SubgoalMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Value estimates of one episode under frozen parameters, valid steps only.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeValues {
    /// `[t][agent]` full Q-vectors.
    pub qvecs: Vec<Vec<Vec<f64>>>,
    /// `[t][agent]` max over allowed actions.
    pub maxq: Vec<Vec<f64>>,
    /// `[t]` mixer output at the stored joint action.
    pub qtot_taken: Vec<f64>,
}

impl EpisodeValues {
    pub fn len(&self) -> usize {
        self.maxq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maxq.is_empty()
    }

    pub fn n_agents(&self) -> usize {
        self.maxq.first().map_or(0, Vec::len)
    }

    /// `alpha * maxQ_i(t) + (1 - alpha) * Qtot(t) / N`.
    pub fn score(&self, agent: usize, t: usize, alpha: f64) -> f64 {
        let n = self.n_agents() as f64;
        alpha * self.maxq[t][agent] + (1.0 - alpha) * (self.qtot_taken[t] / n)
    }
}

/// Utility and mixer parameters frozen at the start of a training block.
#[derive(Clone, Debug)]
pub struct BlockSnapshot {
    pub block: u64,
    pub net: UtilityNet,
    pub mixer: Mixer,
    pub utility: Vec<NetParams>,
    pub mixer_params: NetParams,
}

impl BlockSnapshot {
    pub fn capture(block: u64, net: UtilityNet, mixer: Mixer, params: &ParamSet) -> Self {
        Self {
            block,
            net,
            mixer,
            utility: params.utility.clone(),
            mixer_params: params.mixer.clone(),
        }
    }

    fn utility_of(&self, i: usize) -> &NetParams {
        &self.utility[if self.utility.len() == 1 { 0 } else { i }]
    }

    /// Unrolls every agent's network from a zero hidden state over the valid
    /// steps and evaluates the mixer at the stored actions.
    pub fn episode_values(&self, ep: &Episode) -> Result<EpisodeValues> {
        let n = ep.n_agents();
        if n != self.mixer.n_agents {
            return Err(config_err(format!("episode has {n} agents, snapshot {}", self.mixer.n_agents)));
        }
        let len = ep.len;
        let mut qvecs = vec![Vec::with_capacity(n); len];
        for i in 0..n {
            let mut tape = Tape::new();
            let p = self.utility_of(i).bind_const(&mut tape);
            let inputs = (0..len).map(|t| Tensor::row(&ep.obs[t][i])).collect();
            let qs = self.net.unroll(&mut tape, &p, inputs)?;
            for (t, q) in qs.into_iter().enumerate() {
                qvecs[t].push(tape.value(q).data().to_vec());
            }
        }
        let mut maxq = Vec::with_capacity(len);
        let mut qtot_taken = Vec::with_capacity(len);
        for t in 0..len {
            let mut row = Vec::with_capacity(n);
            let mut taken = Vec::with_capacity(n);
            for i in 0..n {
                let q = &qvecs[t][i];
                let a = masked_argmax(q, &ep.avail[t][i])
                    .ok_or_else(|| MaserError::MalformedEpisode(format!("no allowed action at t={t}")))?;
                row.push(q[a]);
                taken.push(q[ep.actions[t][i]]);
            }
            maxq.push(row);
            qtot_taken.push(self.mixer.mix(&self.mixer_params, &taken, &ep.states[t])?);
        }
        Ok(EpisodeValues {
            qvecs,
            maxq,
            qtot_taken,
        })
    }

    pub fn score_timestep(&self, ep: &Episode, agent: usize, t: usize, alpha: f64) -> Result<f64> {
        if !ep.is_valid(t) {
            return Err(MaserError::Usage(format!("step {t} is outside the valid region")));
        }
        Ok(self.episode_values(ep)?.score(agent, t, alpha))
    }

    pub fn select_subgoals(&self, ep: &Episode, alpha: f64) -> Result<SubgoalAssignment> {
        Ok(select_subgoals(&self.episode_values(ep)?, ep, alpha))
    }
}

/// Subgoal step (0-based index into the episode) and observation per agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubgoalAssignment {
    pub episode: u64,
    pub steps: Vec<usize>,
    pub goals: Vec<Vec<f64>>,
}

impl SubgoalAssignment {
    fn from_steps(ep: &Episode, steps: Vec<usize>) -> Self {
        let goals = steps.iter().enumerate().map(|(i, &t)| ep.obs[t][i].clone()).collect();
        Self {
            episode: ep.id,
            steps,
            goals,
        }
    }
}

/// Argmax of the score over valid steps, earliest step on ties.
pub fn select_subgoals(values: &EpisodeValues, ep: &Episode, alpha: f64) -> SubgoalAssignment {
    let steps = (0..values.n_agents())
        .map(|i| {
            let mut best = 0;
            let mut best_score = values.score(i, 0, alpha);
            for t in 1..values.len() {
                let s = values.score(i, t, alpha);
                if s > best_score {
                    best = t;
                    best_score = s;
                }
            }
            best
        })
        .collect();
    SubgoalAssignment::from_steps(ep, steps)
}

/// Independent uniform draw over valid steps for each agent.
pub fn select_subgoals_random(ep: &Episode, rng: &mut impl Rng) -> SubgoalAssignment {
    let steps = (0..ep.n_agents()).map(|_| rng.gen_range(0..ep.len)).collect();
    SubgoalAssignment::from_steps(ep, steps)
}

/// One diagnostic line: the score curve of one agent over one episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubgoalTrace {
    pub block: u64,
    pub episode: u64,
    pub agent: usize,
    /// 1-based step.
    pub t_star: usize,
    pub scores: Vec<f64>,
}

pub fn subgoal_traces(
    block: u64,
    values: &EpisodeValues,
    assignment: &SubgoalAssignment,
    alpha: Option<f64>,
) -> Vec<SubgoalTrace> {
    (0..assignment.steps.len())
        .map(|i| SubgoalTrace {
            block,
            episode: assignment.episode,
            agent: i,
            t_star: assignment.steps[i] + 1,
            scores: match alpha {
                Some(a) => (0..values.len()).map(|t| values.score(i, t, a)).collect(),
                None => Vec::new(),
            },
        })
        .collect()
}

pub fn write_traces(w: &mut impl Write, traces: &[SubgoalTrace]) -> Result<()> {
    for tr in traces {
        let line = serde_json::to_string(tr).map_err(|e| MaserError::Parse(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}
