use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{config_err, Result};

/// Named parameter arrays of one network, in a fixed order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NetParams {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl NetParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.names.push(name.into());
        self.tensors.push(t);
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.tensors[i])
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn same_shapes(&self, other: &NetParams) -> bool {
        self.names == other.names
            && self.tensors.len() == other.tensors.len()
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| a.shape() == b.shape())
    }

    /// Registers every array as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.leaf(t.clone())).collect()
    }

    /// Registers every array as a constant (target networks, snapshots).
    pub fn bind_const(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.constant(t.clone())).collect()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.numel() {
            return Err(config_err(format!("flat length {} != {}", flat.len(), self.numel())));
        }
        let mut off = 0;
        for t in &mut self.tensors {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> NetParams {
        NetParams {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect(),
        }
    }
}

/// Weight matrix drawn uniformly from `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` with
/// `fan_in = rows`.
pub fn uniform_weight(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let bound = 1.0 / (rows.max(1) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::from_vec(rows, cols, data)
}

/// Learnable state of the whole learner: utility networks (one per agent, or a
/// single shared one), the mixing network, one representation network per
/// agent, and target copies of the utility and mixing networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub utility: Vec<NetParams>,
    pub mixer: NetParams,
    pub repr: Vec<NetParams>,
    pub target_utility: Vec<NetParams>,
    pub target_mixer: NetParams,
}

impl ParamSet {
    pub fn new(utility: Vec<NetParams>, mixer: NetParams, repr: Vec<NetParams>) -> Self {
        Self {
            target_utility: utility.clone(),
            target_mixer: mixer.clone(),
            utility,
            mixer,
            repr,
        }
    }

    /// Copies the online utility and mixer arrays into the target copies.
    pub fn sync_targets(&mut self) {
        self.target_utility.clone_from(&self.utility);
        self.target_mixer.clone_from(&self.mixer);
    }

    /// Index of the utility net used by agent `i` (0 when shared).
    pub fn utility_index(&self, i: usize) -> usize {
        if self.utility.len() == 1 {
            0
        } else {
            i
        }
    }

    pub fn utility_of(&self, i: usize) -> &NetParams {
        &self.utility[self.utility_index(i)]
    }

    pub fn target_utility_of(&self, i: usize) -> &NetParams {
        &self.target_utility[self.utility_index(i)]
    }

    pub fn targets_congruent(&self) -> bool {
        self.utility.len() == self.target_utility.len()
            && self.utility.iter().zip(&self.target_utility).all(|(a, b)| a.same_shapes(b))
            && self.mixer.same_shapes(&self.target_mixer)
    }

    /// Trainable groups in canonical order: utility nets, mixer, repr nets.
    pub fn online_groups(&self) -> Vec<&NetParams> {
        let mut g: Vec<&NetParams> = self.utility.iter().collect();
        g.push(&self.mixer);
        g.extend(self.repr.iter());
        g
    }

    pub fn online_groups_mut(&mut self) -> Vec<&mut NetParams> {
        let mut g: Vec<&mut NetParams> = self.utility.iter_mut().collect();
        g.push(&mut self.mixer);
        g.extend(self.repr.iter_mut());
        g
    }

    pub fn is_finite(&self) -> bool {
        self.online_groups().iter().all(|g| g.is_finite())
            && self.target_utility.iter().all(NetParams::is_finite)
            && self.target_mixer.is_finite()
    }

    /// Bitwise comparison of the online arrays; returns the first differing
    /// array as `(group, name)`.
    pub fn first_difference(&self, other: &ParamSet) -> Option<(usize, String)> {
        for (gi, (a, b)) in self.online_groups().iter().zip(other.online_groups()).enumerate() {
            for ((name, x), y) in a.names().iter().zip(a.tensors()).zip(b.tensors()) {
                let same = x.shape() == y.shape()
                    && x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits());
                if !same {
                    return Some((gi, name.clone()));
                }
            }
        }
        None
    }
}

/// Vars of the online groups bound on one tape, in [`ParamSet::online_groups`] order.
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub utility: Vec<Vec<Var>>,
    pub mixer: Vec<Var>,
    pub repr: Vec<Vec<Var>>,
}

impl BoundParams {
    pub fn bind(params: &ParamSet, tape: &mut Tape) -> Self {
        Self {
            utility: params.utility.iter().map(|p| p.bind(tape)).collect(),
            mixer: params.mixer.bind(tape),
            repr: params.repr.iter().map(|p| p.bind(tape)).collect(),
        }
    }

    fn groups(&self) -> Vec<&Vec<Var>> {
        let mut g: Vec<&Vec<Var>> = self.utility.iter().collect();
        g.push(&self.mixer);
        g.extend(self.repr.iter());
        g
    }

    /// Gradients of every bound array; arrays the loss does not reach get zeros.
    pub fn collect(&self, params: &ParamSet, grads: &mut Gradients) -> GradBundle {
        let groups = self
            .groups()
            .into_iter()
            .zip(params.online_groups())
            .map(|(vars, p)| {
                vars.iter()
                    .zip(p.tensors())
                    .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.rows(), t.cols())))
                    .collect()
            })
            .collect();
        GradBundle { groups }
    }
}

/// One gradient array per online parameter array.
#[derive(Clone, Debug, PartialEq)]
pub struct GradBundle {
    pub groups: Vec<Vec<Tensor>>,
}

impl GradBundle {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Self {
            groups: params
                .online_groups()
                .iter()
                .map(|g| g.tensors().iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect())
                .collect(),
        }
    }

    pub fn congruent_with(&self, params: &ParamSet) -> bool {
        let online = params.online_groups();
        self.groups.len() == online.len()
            && self.groups.iter().zip(online).all(|(g, p)| {
                g.len() == p.len() && g.iter().zip(p.tensors()).all(|(a, b)| a.shape() == b.shape())
            })
    }

    pub fn is_finite(&self) -> bool {
        self.groups.iter().flatten().all(Tensor::is_finite)
    }

    pub fn global_norm(&self) -> f64 {
        self.groups
            .iter()
            .flatten()
            .flat_map(|t| t.data().iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales so the global norm is at most `max_norm`; returns the norm
    /// before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        let coef = max_norm / (norm + 1e-6);
        if coef < 1.0 {
            for t in self.groups.iter_mut().flatten() {
                t.data_mut().iter_mut().for_each(|g| *g *= coef);
            }
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ParamSet {
        let mut u = NetParams::new();
        u.push("w", Tensor::from_vec(1, 2, vec![1.0, 2.0]));
        let mut m = NetParams::new();
        m.push("v", Tensor::scalar(0.5));
        ParamSet::new(vec![u], m, vec![])
    }

    #[test]
    fn sync_copies_exactly_and_is_idempotent() {
        let mut p = small();
        p.utility[0].tensors_mut()[0].data_mut()[0] = 7.25;
        p.mixer.tensors_mut()[0].data_mut()[0] = -3.0;
        p.sync_targets();
        assert_eq!(p.target_utility, p.utility);
        assert_eq!(p.target_mixer, p.mixer);
        let once = p.clone();
        p.sync_targets();
        assert_eq!(p, once);
        assert!(p.targets_congruent());
    }

    #[test]
    fn flat_roundtrip() {
        let mut p = small().utility.remove(0);
        p.set_flat(&[4.0, 5.0]).unwrap();
        assert_eq!(p.flatten(), vec![4.0, 5.0]);
        assert!(p.set_flat(&[1.0]).is_err());
    }

    #[test]
    fn clipping_scales_down_only() {
        let p = small();
        let mut g = GradBundle::zeros_like(&p);
        g.groups[0][0].data_mut().copy_from_slice(&[3.0, 4.0]);
        assert_eq!(g.clip_global_norm(100.0), 5.0);
        assert_eq!(g.groups[0][0].data(), &[3.0, 4.0]);
        g.clip_global_norm(1.0);
        assert!((g.global_norm() - 1.0).abs() < 1e-6);
    }
}
