//! Plain QMIX update: total TD loss only, raw extrinsic rewards.

use maser_core::nn::{BoundParams, GradBundle, ParamSet, RmsProp, Tape, Tensor};
use maser_core::replay::Episode;
use maser_core::trainer::Arch;
use maser_core::Result;

use crate::forward::{mixer_total, utility_q_sequence};

fn step_rows(batch: &[&Episode], width: usize, pick: impl Fn(&Episode) -> &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; batch.len() * width];
    for (k, ep) in batch.iter().enumerate() {
        out[k * width..(k + 1) * width].copy_from_slice(pick(ep));
    }
    out
}

/// Bootstrap value per `(episode, step)`: target mixer applied to the target
/// nets' greedy values at the next step.
fn next_totals(params: &ParamSet, ep: &Episode) -> Vec<f64> {
    let n = ep.n_agents();
    let shared = params.target_utility.len() == 1;
    let qs: Vec<Vec<Vec<f64>>> = (0..n)
        .map(|i| {
            let obs: Vec<Vec<f64>> = (0..ep.len).map(|t| ep.obs[t][i].clone()).collect();
            utility_q_sequence(&params.target_utility[if shared { 0 } else { i }], &obs)
        })
        .collect();
    (0..ep.len)
        .map(|t| {
            if t + 1 >= ep.len {
                return 0.0;
            }
            let greedy: Vec<f64> = (0..n)
                .map(|i| {
                    qs[i][t + 1]
                        .iter()
                        .zip(&ep.avail[t + 1][i])
                        .filter(|(_, &ok)| ok)
                        .map(|(q, _)| *q)
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect();
            mixer_total(&params.target_mixer, &greedy, &ep.states[t + 1])
        })
        .collect()
}

/// Loss and unclipped gradient of the summed per-episode mean TD loss of the
/// mixed value.
pub fn plain_qmix_gradients(arch: &Arch, params: &ParamSet, batch: &[&Episode], gamma: f64) -> Result<(f64, GradBundle)> {
    let m = batch.len();
    let n = arch.n_agents;
    let l = batch.iter().map(|e| e.len).max().unwrap_or(0);
    let rows = l * m;
    let mut tape = Tape::new();
    let bound = BoundParams::bind(params, &mut tape);
    let mut taken = Vec::with_capacity(n);
    for i in 0..n {
        let p = &bound.utility[params.utility_index(i)];
        let inputs = (0..l)
            .map(|t| Tensor::from_vec(m, arch.obs_dim, step_rows(batch, arch.obs_dim, |ep| &ep.obs[t][i])))
            .collect();
        let per_step = arch.net.unroll(&mut tape, p, inputs)?;
        let all = tape.concat_rows(&per_step)?;
        let actions: Vec<usize> = (0..rows)
            .map(|r| batch[r % m].actions[r / m][i])
            .collect();
        taken.push(tape.gather(all, &actions)?);
    }
    let q = tape.concat_cols(&taken)?;
    let mut states = Vec::with_capacity(rows * arch.state_dim);
    for t in 0..l {
        states.extend(step_rows(batch, arch.state_dim, |ep| &ep.states[t]));
    }
    let s = tape.constant(Tensor::from_vec(rows, arch.state_dim, states));
    let qtot = arch.mixer.forward(&mut tape, &bound.mixer, q, s)?;

    let mut target = vec![0.0; rows];
    let mut weight = vec![0.0; rows];
    for (k, ep) in batch.iter().enumerate() {
        let next = next_totals(params, ep);
        for t in 0..ep.len {
            let r = t * m + k;
            target[r] = if ep.done[t] { ep.rewards[t] } else { ep.rewards[t] + gamma * next[t] };
            weight[r] = 1.0 / ep.len as f64;
        }
    }
    let loss = tape.weighted_sq_err(qtot, target, weight)?;
    let mut grads = tape.backward(loss)?;
    Ok((tape.value(loss).item(), bound.collect(params, &mut grads)))
}

/// One clipped RMSProp step of plain QMIX; returns the loss.
pub fn plain_qmix_update(
    arch: &Arch,
    params: &mut ParamSet,
    optimizer: &mut RmsProp,
    batch: &[&Episode],
    gamma: f64,
    grad_clip: f64,
) -> Result<f64> {
    let (loss, mut grads) = plain_qmix_gradients(arch, params, batch, gamma)?;
    if grad_clip > 0.0 {
        grads.clip_global_norm(grad_clip);
    }
    optimizer.step(params, &grads)?;
    Ok(loss)
}
