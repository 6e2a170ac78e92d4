//! Subgoal-based reward shaping.
//!
//! Each agent's intrinsic reward is the negative embedded distance from its
//! observation to its subgoal observation. Embeddings come from a per-agent
//! representation network trained so that embedded distance tracks the
//! actionable distance (one minus the cosine similarity of Q-vectors).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::nn::{euclid, uniform_weight, NetParams, Tape, Tensor, Var};

/// `obs -> hidden -> ReLU -> n_actions`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReprNet {
    pub obs_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
}

impl ReprNet {
    pub fn init(&self, rng: &mut impl Rng) -> NetParams {
        let mut p = NetParams::new();
        p.push("fc1.w", uniform_weight(rng, self.obs_dim, self.hidden));
        p.push("fc1.b", Tensor::zeros(1, self.hidden));
        p.push("fc2.w", uniform_weight(rng, self.hidden, self.out_dim));
        p.push("fc2.b", Tensor::zeros(1, self.out_dim));
        p
    }

    pub fn forward(&self, tape: &mut Tape, p: &[Var], x: Var) -> Result<Var> {
        if p.len() != 4 {
            return Err(config_err("representation net expects 4 parameter arrays"));
        }
        let h = tape.affine(x, p[0], p[1])?;
        let h = tape.relu(h);
        tape.affine(h, p[2], p[3])
    }

    /// Embeds each row of `obs`.
    pub fn embed(&self, params: &NetParams, obs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let p = params.bind_const(&mut tape);
        let x = tape.constant(Tensor::from_rows(obs));
        let y = self.forward(&mut tape, &p, x)?;
        let out = tape.value(y);
        Ok((0..out.rows()).map(|r| out.row_slice(r).to_vec()).collect())
    }
}

/// `1 - cos(qa, qb)`, or 1 when either vector has zero norm.
pub fn actionable_distance(qa: &[f64], qb: &[f64]) -> f64 {
    let dot: f64 = qa.iter().zip(qb).map(|(a, b)| a * b).sum();
    let na = qa.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb = qb.iter().map(|b| b * b).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    (1.0 - dot / (na * nb)).clamp(0.0, 2.0)
}

/// Mean of `(||phi_t - phi_g|| - target)^2` over pairs of embeddings.
pub fn repr_loss_from_embeddings(pairs: &[(Vec<f64>, Vec<f64>, f64)]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let s: f64 = pairs.iter().map(|(a, b, d)| (euclid(a, b) - d).powi(2)).sum();
    s / pairs.len() as f64
}

/// Representation loss of one agent's net over `(o_t, o_g, D_Q)` triples.
pub fn repr_loss(net: &ReprNet, params: &NetParams, batch: &[(Vec<f64>, Vec<f64>, f64)]) -> Result<f64> {
    let obs_t: Vec<Vec<f64>> = batch.iter().map(|b| b.0.clone()).collect();
    let obs_g: Vec<Vec<f64>> = batch.iter().map(|b| b.1.clone()).collect();
    let et = net.embed(params, &obs_t)?;
    let eg = net.embed(params, &obs_g)?;
    let pairs: Vec<_> = et.into_iter().zip(eg).zip(batch).map(|((a, b), x)| (a, b, x.2)).collect();
    Ok(repr_loss_from_embeddings(&pairs))
}

pub fn intrinsic_reward(phi_t: &[f64], phi_g: &[f64]) -> f64 {
    -euclid(phi_t, phi_g)
}

/// `r_ex + lambda * mean(intrinsics)`.
pub fn proxy_reward(r_ex: f64, intrinsics: &[f64], lambda: f64) -> f64 {
    let n = intrinsics.len() as f64;
    r_ex + lambda * (intrinsics.iter().sum::<f64>() / n)
}

/// Softmax over agents of their greedy local values.
pub fn credit_weights(maxq: &[f64]) -> Vec<f64> {
    let m = maxq.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = maxq.iter().map(|q| (q - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// `weight_i * proxy + lambda * intrinsic_i` for every agent.
pub fn individual_rewards(maxq: &[f64], proxy: f64, intrinsics: &[f64], lambda: f64) -> Vec<f64> {
    credit_weights(maxq)
        .into_iter()
        .zip(intrinsics)
        .map(|(w, r)| w * proxy + lambda * r)
        .collect()
}

/// Shaped rewards of one episode over its valid steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardBundle {
    /// `[t][agent]`, all `<= 0`.
    pub intrinsic: Vec<Vec<f64>>,
    pub proxy: Vec<f64>,
    /// `[t][agent]`.
    pub individual: Vec<Vec<f64>>,
}

impl RewardBundle {
    /// `embed_t[t][i]` and `embed_g[i]` are embeddings of the step and subgoal
    /// observations; `maxq[t][i]` are snapshot greedy values.
    pub fn compute(
        rewards: &[f64],
        embed_t: &[Vec<Vec<f64>>],
        embed_g: &[Vec<f64>],
        maxq: &[Vec<f64>],
        lambda: f64,
    ) -> Self {
        let len = embed_t.len();
        let mut intrinsic = Vec::with_capacity(len);
        let mut proxy = Vec::with_capacity(len);
        let mut individual = Vec::with_capacity(len);
        for t in 0..len {
            let r_int: Vec<f64> = embed_t[t].iter().zip(embed_g).map(|(a, g)| intrinsic_reward(a, g)).collect();
            let big_r = proxy_reward(rewards[t], &r_int, lambda);
            individual.push(individual_rewards(&maxq[t], big_r, &r_int, lambda));
            proxy.push(big_r);
            intrinsic.push(r_int);
        }
        Self {
            intrinsic,
            proxy,
            individual,
        }
    }

    pub fn mean_proxy(&self) -> f64 {
        if self.proxy.is_empty() {
            0.0
        } else {
            self.proxy.iter().sum::<f64>() / self.proxy.len() as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn distance_examples() {
        let q = [0.3, -1.0, 2.0];
        assert!(actionable_distance(&q, &q).abs() < 1e-15);
        let mut a = [0.0; 6];
        let mut b = [0.0; 6];
        a[0] = 1.0;
        b[1] = 1.0;
        assert_eq!(actionable_distance(&a, &b), 1.0);
        let d = actionable_distance(&[1.0, 1.0], &[1.0, 0.0]);
        assert!((d - (1.0 - 1.0 / 2f64.sqrt())).abs() < 1e-12);
        assert_eq!(actionable_distance(&[0.0, 0.0], &[1.0, 0.0]), 1.0);
        assert!((actionable_distance(&[1.0, 2.0], &[-1.0, -2.0]) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn repr_loss_examples() {
        let pairs = vec![(vec![0.5, 0.0], vec![0.0, 0.0], 0.3)];
        assert!((repr_loss_from_embeddings(&pairs) - 0.04).abs() < 1e-12);
        let exact = vec![(vec![3.0, 4.0], vec![0.0, 0.0], 5.0), (vec![1.0], vec![1.0], 0.0)];
        assert_eq!(repr_loss_from_embeddings(&exact), 0.0);
    }

    #[test]
    fn intrinsic_examples() {
        assert_eq!(intrinsic_reward(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(intrinsic_reward(&[3.0, 4.0, 0.0], &[0.0; 3]), -5.0);
    }

    #[test]
    fn proxy_examples() {
        assert_eq!(proxy_reward(7.0, &[0.0, 0.0], 0.03), 7.0);
        assert!((proxy_reward(0.0, &[-1.0; 3], 0.03) + 0.03).abs() < 1e-15);
        assert!((proxy_reward(10.0, &[-1.0, -3.0], 0.03) - 9.94).abs() < 1e-12);
    }

    #[test]
    fn credit_examples() {
        assert_eq!(credit_weights(&[2.0, 2.0, 2.0]), vec![1.0 / 3.0; 3]);
        let w = credit_weights(&[1.0, 0.0]);
        let e = std::f64::consts::E;
        assert!((w[0] - e / (e + 1.0)).abs() < 1e-15);
        let r = individual_rewards(&[1.0, 0.0], 4.0, &[-1.0, -2.0], 0.0);
        assert!((r.iter().sum::<f64>() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn embedding_shapes_and_loss() {
        let net = ReprNet {
            obs_dim: 4,
            hidden: 16,
            out_dim: 6,
        };
        let p = net.init(&mut ChaCha8Rng::seed_from_u64(0));
        let obs = vec![vec![0.1, 0.2, 0.3, 0.4], vec![0.0; 4]];
        let e = net.embed(&p, &obs).unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!(e[0].len(), 6);
        let l = repr_loss(&net, &p, &[(obs[0].clone(), obs[0].clone(), 0.0)]).unwrap();
        assert_eq!(l, 0.0);
    }
}
