use maser_core::replay::Episode;
use maser_core::subgoal::{BlockSnapshot, SubgoalAssignment};

use crate::forward::{mixer_total, utility_q_sequence};

/// Evaluates the subgoal score at every valid step by direct computation and
/// returns the earliest maximizer per agent.
pub fn brute_force_subgoal(snapshot: &BlockSnapshot, ep: &Episode, alpha: f64) -> SubgoalAssignment {
    let n = ep.n_agents();
    let shared = snapshot.utility.len() == 1;
    let qs: Vec<Vec<Vec<f64>>> = (0..n)
        .map(|i| {
            let obs: Vec<Vec<f64>> = (0..ep.len).map(|t| ep.obs[t][i].clone()).collect();
            utility_q_sequence(&snapshot.utility[if shared { 0 } else { i }], &obs)
        })
        .collect();
    let totals: Vec<f64> = (0..ep.len)
        .map(|t| {
            let taken: Vec<f64> = (0..n).map(|i| qs[i][t][ep.actions[t][i]]).collect();
            mixer_total(&snapshot.mixer_params, &taken, &ep.states[t])
        })
        .collect();
    let mut steps = Vec::with_capacity(n);
    for i in 0..n {
        let mut best: Option<(usize, f64)> = None;
        for t in 0..ep.len {
            let local = qs[i][t]
                .iter()
                .zip(&ep.avail[t][i])
                .filter(|(_, &ok)| ok)
                .map(|(q, _)| *q)
                .fold(f64::NEG_INFINITY, f64::max);
            let score = alpha * local + (1.0 - alpha) * (totals[t] / n as f64);
            if best.map_or(true, |(_, s)| score > s) {
                best = Some((t, score));
            }
        }
        steps.push(best.map_or(0, |b| b.0));
    }
    let goals = steps.iter().enumerate().map(|(i, &t)| ep.obs[t][i].clone()).collect();
    SubgoalAssignment {
        episode: ep.id,
        steps,
        goals,
    }
}
