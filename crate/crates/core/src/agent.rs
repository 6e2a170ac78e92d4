//! Per-agent recurrent utility networks and epsilon-greedy action selection.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, MaserError, Result};
use crate::nn::{uniform_weight, NetParams, Tape, Tensor, Var};

/// Q-values of one agent over the whole action set.
#[derive(Clone, Debug, PartialEq)]
pub struct QVector(pub Vec<f64>);

impl QVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Highest-valued allowed action, lowest index on ties.
    pub fn greedy(&self, mask: &[bool]) -> Option<usize> {
        masked_argmax(&self.0, mask)
    }

    pub fn max(&self, mask: &[bool]) -> Option<f64> {
        self.greedy(mask).map(|a| self.0[a])
    }
}

pub fn masked_argmax(q: &[f64], mask: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (a, (&v, &ok)) in q.iter().zip(mask).enumerate() {
        if ok && best.is_none_or(|b| v > q[b]) {
            best = Some(a);
        }
    }
    best
}

/// Linear annealing from `start` to `end` over `anneal_steps` environment
/// steps, constant afterwards.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub anneal_steps: u64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            start: 1.0,
            end: 0.05,
            anneal_steps: 50_000,
        }
    }
}

impl EpsilonSchedule {
    pub fn value(&self, step: u64) -> f64 {
        if self.anneal_steps == 0 || step >= self.anneal_steps {
            return self.end;
        }
        let frac = step as f64 / self.anneal_steps as f64;
        self.start + (self.end - self.start) * frac
    }
}

/// With probability `epsilon` a uniformly random allowed action, otherwise
/// the allowed argmax (ties to the lowest index).
pub fn act_epsilon_greedy(q: &QVector, epsilon: f64, rng: &mut impl Rng, mask: &[bool]) -> Result<usize> {
    if mask.len() != q.len() {
        return Err(config_err(format!("mask of {} for {} actions", mask.len(), q.len())));
    }
    let valid: Vec<usize> = (0..mask.len()).filter(|&a| mask[a]).collect();
    if valid.is_empty() {
        return Err(MaserError::Usage("no allowed action".into()));
    }
    if rng.gen::<f64>() < epsilon {
        Ok(valid[rng.gen_range(0..valid.len())])
    } else {
        Ok(q.greedy(mask).expect("non-empty mask"))
    }
}

/// `fc(obs -> hidden) -> ReLU -> GRU(hidden) -> fc(hidden -> actions)`.
///
/// The observation already carries the agent's previous action.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtilityNet {
    pub obs_dim: usize,
    pub hidden: usize,
    pub n_actions: usize,
}

pub const UTILITY_PARAM_NAMES: [&str; 8] = ["fc1.w", "fc1.b", "gru.wi", "gru.wh", "gru.bi", "gru.bh", "fc2.w", "fc2.b"];

impl UtilityNet {
    pub fn init(&self, rng: &mut impl Rng) -> NetParams {
        let h = self.hidden;
        let mut p = NetParams::new();
        p.push("fc1.w", uniform_weight(rng, self.obs_dim, h));
        p.push("fc1.b", Tensor::zeros(1, h));
        p.push("gru.wi", uniform_weight(rng, h, 3 * h));
        p.push("gru.wh", uniform_weight(rng, h, 3 * h));
        p.push("gru.bi", Tensor::zeros(1, 3 * h));
        p.push("gru.bh", Tensor::zeros(1, 3 * h));
        p.push("fc2.w", uniform_weight(rng, h, self.n_actions));
        p.push("fc2.b", Tensor::zeros(1, self.n_actions));
        p
    }

    pub fn zeros(&self) -> NetParams {
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        self.init(&mut rng).zeros_like()
    }

    pub fn initial_hidden(&self, rows: usize) -> Tensor {
        Tensor::zeros(rows, self.hidden)
    }

    /// One recurrent step for a batch: `x` is `B x obs_dim`, `h` is `B x hidden`.
    pub fn step(&self, tape: &mut Tape, p: &[Var], x: Var, h: Var) -> Result<(Var, Var)> {
        if p.len() != UTILITY_PARAM_NAMES.len() {
            return Err(config_err("utility net expects 8 parameter arrays"));
        }
        if tape.shape(x).1 != self.obs_dim {
            return Err(config_err(format!(
                "observation width {} but utility net expects {}",
                tape.shape(x).1,
                self.obs_dim
            )));
        }
        let a = tape.affine(x, p[0], p[1])?;
        let a = tape.relu(a);
        let h2 = tape.gru(a, h, p[2], p[3], p[4], p[5])?;
        let q = tape.affine(h2, p[6], p[7])?;
        Ok((q, h2))
    }

    /// Unrolls from a zero hidden state over `inputs` (one `B x obs_dim`
    /// tensor per timestep) and returns the `B x n_actions` Q node per step.
    pub fn unroll(&self, tape: &mut Tape, p: &[Var], inputs: Vec<Tensor>) -> Result<Vec<Var>> {
        let rows = inputs.first().map_or(0, Tensor::rows);
        let mut h = tape.constant(self.initial_hidden(rows));
        let mut qs = Vec::with_capacity(inputs.len());
        for x in inputs {
            let x = tape.constant(x);
            let (q, h2) = self.step(tape, p, x, h)?;
            qs.push(q);
            h = h2;
        }
        Ok(qs)
    }
}

/// Q-vector after feeding the observation history `history` (each entry
/// already carries the previous action).
pub fn local_q(net: &UtilityNet, params: &NetParams, history: &[Vec<f64>]) -> Result<QVector> {
    if history.is_empty() {
        return Err(MaserError::Usage("local_q needs a non-empty history".into()));
    }
    let mut tape = Tape::new();
    let p = params.bind_const(&mut tape);
    let inputs = history.iter().map(|o| Tensor::row(o)).collect();
    let qs = net.unroll(&mut tape, &p, inputs)?;
    Ok(QVector(tape.value(*qs.last().unwrap()).data().to_vec()))
}

/// Hidden state carried across a rollout for every agent.
#[derive(Clone, Debug)]
pub struct RecurrentController {
    hidden: Vec<Tensor>,
}

impl RecurrentController {
    pub fn new(net: &UtilityNet, n_agents: usize) -> Self {
        Self {
            hidden: vec![net.initial_hidden(1); n_agents],
        }
    }

    /// Q-vectors for the current observations; advances every hidden state.
    /// `params_for(i)` selects the parameters used by agent `i`.
    pub fn step<'a>(
        &mut self,
        net: &UtilityNet,
        params_for: impl Fn(usize) -> &'a NetParams,
        obs: &[Vec<f64>],
    ) -> Result<Vec<QVector>> {
        let mut out = Vec::with_capacity(obs.len());
        for (i, o) in obs.iter().enumerate() {
            let mut tape = Tape::new();
            let p = params_for(i).bind_const(&mut tape);
            let x = tape.constant(Tensor::row(o));
            let h = tape.constant(std::mem::replace(&mut self.hidden[i], Tensor::zeros(0, 0)));
            let (q, h2) = net.step(&mut tape, &p, x, h)?;
            self.hidden[i] = tape.value(h2).clone();
            out.push(QVector(tape.value(q).data().to_vec()));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const NET: UtilityNet = UtilityNet {
        obs_dim: 5,
        hidden: 8,
        n_actions: 6,
    };

    #[test]
    fn zero_params_give_zero_q() {
        let q = local_q(&NET, &NET.zeros(), &[vec![0.3, -1.0, 0.5, 0.0, 1.0]]).unwrap();
        assert_eq!(q.0, vec![0.0; 6]);
    }

    #[test]
    fn same_history_same_q() {
        let p = NET.init(&mut ChaCha8Rng::seed_from_u64(1));
        let hist = vec![vec![0.1, 0.2, 0.3, 0.4, 0.5], vec![-0.5, 0.0, 1.0, 0.0, 0.25]];
        assert_eq!(local_q(&NET, &p, &hist).unwrap(), local_q(&NET, &p, &hist).unwrap());
    }

    #[test]
    fn golden_q_value() {
        // Reference values from an independent numpy forward pass over the same
        // weights (PyTorch GRU gate order r, z, n).
        let p = NET.init(&mut ChaCha8Rng::seed_from_u64(2024));
        let hist = vec![vec![0.1, -0.2, 0.3, 0.0, 1.0], vec![0.5, 0.5, -0.5, 1.0, 0.0]];
        let q = local_q(&NET, &p, &hist).unwrap();
        for (a, b) in q.0.iter().zip(GOLDEN_Q) {
            assert!((a - b).abs() < 1e-12, "{:?}", q.0);
        }
    }

    const GOLDEN_Q: [f64; 6] = [
        0.022620506839863098,
        -0.044541524331354936,
        -0.04328948248237653,
        -0.04438188776753557,
        0.05515149735310818,
        -0.05537690444776521,
    ];

    #[test]
    fn controller_matches_unroll() {
        let p = NET.init(&mut ChaCha8Rng::seed_from_u64(3));
        let hist = vec![vec![0.1, 0.2, 0.3, 0.4, 0.5], vec![-0.5, 0.0, 1.0, 0.0, 0.25], vec![0.0; 5]];
        let mut ctl = RecurrentController::new(&NET, 1);
        let mut last = None;
        for o in &hist {
            last = Some(ctl.step(&NET, |_| &p, std::slice::from_ref(o)).unwrap().remove(0));
        }
        assert_eq!(last.unwrap(), local_q(&NET, &p, &hist).unwrap());
    }

    #[test]
    fn greedy_and_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let all = [true; 6];
        let q = QVector(vec![0.0, 5.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(act_epsilon_greedy(&q, 0.0, &mut rng, &all).unwrap(), 1);
        let tie = QVector(vec![0.0, 0.0, 3.0, 0.0, 3.0, 0.0]);
        assert_eq!(act_epsilon_greedy(&tie, 0.0, &mut rng, &all).unwrap(), 2);
        let mask = [true, false, false, false, false, false];
        assert_eq!(act_epsilon_greedy(&q, 0.0, &mut rng, &mask).unwrap(), 0);
    }

    #[test]
    fn empty_mask_is_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let q = QVector(vec![0.0; 6]);
        assert!(act_epsilon_greedy(&q, 0.5, &mut rng, &[false; 6]).is_err());
    }

    #[test]
    fn epsilon_one_is_uniform_over_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let q = QVector(vec![9.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let mask = [true, true, false, true, true, true];
        let draws = 100_000;
        let mut counts = [0usize; 6];
        for _ in 0..draws {
            counts[act_epsilon_greedy(&q, 1.0, &mut rng, &mask).unwrap()] += 1;
        }
        assert_eq!(counts[2], 0);
        let p = 0.2;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for a in [0, 1, 3, 4, 5] {
            assert!((counts[a] as f64 - draws as f64 * p).abs() <= 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn epsilon_schedule_shape() {
        let s = EpsilonSchedule::default();
        assert_eq!(s.value(0), 1.0);
        assert!((s.value(25_000) - 0.525).abs() < 1e-12);
        assert_eq!(s.value(50_000), 0.05);
        assert_eq!(s.value(10_000_000), 0.05);
        let mut prev = f64::INFINITY;
        for step in (0..60_000).step_by(997) {
            let e = s.value(step);
            assert!(e <= prev);
            prev = e;
        }
    }

    #[test]
    fn greedy_is_shift_invariant() {
        let q = QVector(vec![0.3, -1.0, 2.5, 2.4, 0.0, 1.0]);
        let shifted = QVector(q.0.iter().map(|v| v + 17.25).collect());
        let mask = [true; 6];
        assert_eq!(q.greedy(&mask), shifted.greedy(&mask));
    }
}
