//! Scalar forms of the training losses, used for reporting and as reference
//! values; the trainer builds the same quantities on the tape.

use crate::nn::kl_to_uniform;

/// Bootstrapped target; terminal steps drop the bootstrap term.
pub fn td_target(reward: f64, next_max: f64, terminal: bool, gamma: f64) -> f64 {
    if terminal {
        reward
    } else {
        reward + gamma * next_max
    }
}

/// Mean squared TD error over the given steps.
pub fn td_loss(q_taken: &[f64], rewards: &[f64], next_max: &[f64], terminal: &[bool], gamma: f64) -> f64 {
    if q_taken.is_empty() {
        return 0.0;
    }
    let s: f64 = (0..q_taken.len())
        .map(|t| (td_target(rewards[t], next_max[t], terminal[t], gamma) - q_taken[t]).powi(2))
        .sum();
    s / q_taken.len() as f64
}

/// Sum of `KL(softmax(q_t) || uniform)` over steps `from..`.
pub fn entropy_correction_loss(qvecs: &[Vec<f64>], from: usize) -> f64 {
    qvecs.iter().skip(from).map(|q| kl_to_uniform(q)).sum()
}

/// Per-agent auxiliary losses of one episode.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AgentLosses {
    pub individual: f64,
    pub correction: f64,
    pub repr: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub individual: f64,
    pub correction: f64,
    pub repr: f64,
}

/// `L_TD + sum_i (w_I * L_i + w_E * L_E,i + w_D * L_D,i)` for one episode.
pub fn composite_loss(total_td: f64, agents: &[AgentLosses], w: LossWeights) -> f64 {
    total_td
        + agents
            .iter()
            .map(|a| w.individual * a.individual + w.correction * a.correction + w.repr * a.repr)
            .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn td_examples() {
        assert_eq!(td_loss(&[2.0, 0.0], &[1.0, 0.0], &[2.0, 0.0], &[false, true], 0.5), 0.0);
        assert_eq!(td_loss(&[0.0], &[1.0], &[123.0], &[true], 0.99), 1.0);
        assert!((td_loss(&[0.0], &[-0.03], &[0.0], &[true], 0.99) - 0.0009).abs() < 1e-15);
    }

    #[test]
    fn two_step_hand_value() {
        // t0: target 0.5 + 0.9 * 2 = 2.3, q 2.0 -> 0.09; t1: target 1, q 0.5 -> 0.25
        let l = td_loss(&[2.0, 0.5], &[0.5, 1.0], &[2.0, 7.0], &[false, true], 0.9);
        assert!((l - (0.09 + 0.25) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn correction_examples() {
        assert_eq!(entropy_correction_loss(&[vec![0.3; 6], vec![-2.0; 6]], 0), 0.0);
        let kl = entropy_correction_loss(&[vec![1.0, 0.0]], 0);
        assert!((kl - 0.110_944_071_671_727_4).abs() < 1e-12);
        assert_eq!(entropy_correction_loss(&[vec![1.0, 0.0]], 1), 0.0);
    }

    #[test]
    fn composite_examples() {
        let w = LossWeights {
            individual: 0.001,
            correction: 0.001,
            repr: 0.001,
        };
        let a = AgentLosses {
            individual: 2.0,
            correction: 3.0,
            repr: 4.0,
        };
        assert!((composite_loss(1.0, &[a], w) - 1.009).abs() < 1e-12);
        assert_eq!(composite_loss(0.0, &[AgentLosses::default(); 3], w), 0.0);
        let zero = LossWeights {
            individual: 0.0,
            correction: 0.0,
            repr: 0.0,
        };
        assert_eq!(composite_loss(1.5, &[a, a], zero), 1.5);
    }
}
