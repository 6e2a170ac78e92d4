//! State-conditioned monotonic mixing of per-agent Q-values.
//!
//! Hypernetworks map the global state to the mixing weights; the weights pass
//! through an absolute value so the total is non-decreasing in every agent's
//! input. Biases are unconstrained.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::nn::{uniform_weight, NetParams, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mixer {
    pub n_agents: usize,
    pub state_dim: usize,
    pub embed: usize,
}

pub const MIXER_PARAM_NAMES: [&str; 10] = [
    "hyper_w1.w",
    "hyper_w1.b",
    "hyper_b1.w",
    "hyper_b1.b",
    "hyper_wf.w",
    "hyper_wf.b",
    "value1.w",
    "value1.b",
    "value2.w",
    "value2.b",
];

impl Mixer {
    pub fn init(&self, rng: &mut impl Rng) -> NetParams {
        let (s, n, e) = (self.state_dim, self.n_agents, self.embed);
        let mut p = NetParams::new();
        p.push("hyper_w1.w", uniform_weight(rng, s, n * e));
        p.push("hyper_w1.b", Tensor::zeros(1, n * e));
        p.push("hyper_b1.w", uniform_weight(rng, s, e));
        p.push("hyper_b1.b", Tensor::zeros(1, e));
        p.push("hyper_wf.w", uniform_weight(rng, s, e));
        p.push("hyper_wf.b", Tensor::zeros(1, e));
        p.push("value1.w", uniform_weight(rng, s, e));
        p.push("value1.b", Tensor::zeros(1, e));
        p.push("value2.w", uniform_weight(rng, e, 1));
        p.push("value2.b", Tensor::zeros(1, 1));
        p
    }

    /// `q` is `B x N` (one local value per agent), `s` is `B x state_dim`;
    /// returns the `B x 1` column of totals.
    pub fn forward(&self, tape: &mut Tape, p: &[Var], q: Var, s: Var) -> Result<Var> {
        if p.len() != MIXER_PARAM_NAMES.len() {
            return Err(config_err("mixer expects 10 parameter arrays"));
        }
        if tape.shape(q).1 != self.n_agents {
            return Err(config_err(format!("mixer expects {} local values, got {}", self.n_agents, tape.shape(q).1)));
        }
        let w1 = tape.affine(s, p[0], p[1])?;
        let w1 = tape.abs(w1);
        let b1 = tape.affine(s, p[2], p[3])?;
        let h = tape.row_bmm(q, w1, self.embed)?;
        let h = tape.add(h, b1)?;
        let h = tape.elu(h);
        let wf = tape.affine(s, p[4], p[5])?;
        let wf = tape.abs(wf);
        let v = tape.affine(s, p[6], p[7])?;
        let v = tape.relu(v);
        let v = tape.affine(v, p[8], p[9])?;
        let y = tape.row_dot(h, wf)?;
        tape.add(y, v)
    }

    /// Total for a single joint input, without gradients.
    pub fn mix(&self, params: &NetParams, q: &[f64], state: &[f64]) -> Result<f64> {
        let mut tape = Tape::new();
        let p = params.bind_const(&mut tape);
        let qv = tape.constant(Tensor::row(q));
        let sv = tape.constant(Tensor::row(state));
        let y = self.forward(&mut tape, &p, qv, sv)?;
        Ok(tape.value(y).item())
    }

    /// Total and its gradient with respect to the local values.
    pub fn mix_with_grad(&self, params: &NetParams, q: &[f64], state: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut tape = Tape::new();
        let p = params.bind_const(&mut tape);
        let qv = tape.leaf(Tensor::row(q));
        let sv = tape.constant(Tensor::row(state));
        let y = self.forward(&mut tape, &p, qv, sv)?;
        let grads = tape.backward(y)?;
        let dq = grads.get(qv).map_or_else(|| vec![0.0; q.len()], |g| g.data().to_vec());
        Ok((tape.value(y).item(), dq))
    }
}
