use super::params::{GradBundle, ParamSet};
use super::tensor::Tensor;
use crate::error::{config_err, MaserError, Result};

/// RMSProp over the online arrays of a [`ParamSet`]:
///
/// ```text
/// v <- decay * v + (1 - decay) * g^2
/// p <- p - lr * g / (sqrt(v) + eps)
/// ```
///
/// The squared-gradient accumulators live here and persist across steps.
#[derive(Clone, Debug)]
pub struct RmsProp {
    pub lr: f64,
    pub decay: f64,
    pub eps: f64,
    square_avg: Option<Vec<Vec<Tensor>>>,
}

impl RmsProp {
    pub fn new(lr: f64, decay: f64, eps: f64) -> Self {
        Self {
            lr,
            decay,
            eps,
            square_avg: None,
        }
    }

    /// Applies one update. Non-finite gradients reject the whole step and
    /// leave both parameters and accumulators untouched.
    pub fn step(&mut self, params: &mut ParamSet, grads: &GradBundle) -> Result<()> {
        if !grads.congruent_with(params) {
            return Err(config_err("gradient bundle does not match parameter shapes"));
        }
        if !grads.is_finite() {
            return Err(MaserError::NonFinite("gradient entries; update rejected".into()));
        }
        let state = self.square_avg.get_or_insert_with(|| {
            grads
                .groups
                .iter()
                .map(|g| g.iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect())
                .collect()
        });
        let (lr, decay, eps) = (self.lr, self.decay, self.eps);
        for ((group, gstate), ggrad) in params.online_groups_mut().into_iter().zip(state.iter_mut()).zip(&grads.groups) {
            for ((p, v), g) in group.tensors_mut().iter_mut().zip(gstate.iter_mut()).zip(ggrad) {
                for ((pi, vi), gi) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                    *vi = decay * *vi + (1.0 - decay) * gi * gi;
                    *pi -= lr * gi / (vi.sqrt() + eps);
                }
            }
        }
        if !params.is_finite() {
            return Err(MaserError::NonFinite("parameters after optimizer step".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::NetParams;

    fn scalar_set(v: &[f64]) -> ParamSet {
        let mut u = NetParams::new();
        u.push("p", Tensor::from_vec(1, v.len(), v.to_vec()));
        ParamSet::new(vec![u], NetParams::new(), vec![])
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = scalar_set(&[1.0, -2.0]);
        let before = p.clone();
        let g = GradBundle::zeros_like(&p);
        let mut opt = RmsProp::new(0.0005, 0.99, 1e-5);
        opt.step(&mut p, &g).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn single_step_hand_value() {
        // v = 0.01 * 1^2 = 0.01; p' = 1 - 0.0005 / (0.1 + 1e-5)
        let mut p = scalar_set(&[1.0]);
        let mut g = GradBundle::zeros_like(&p);
        g.groups[0][0].data_mut()[0] = 1.0;
        let mut opt = RmsProp::new(0.0005, 0.99, 1e-5);
        opt.step(&mut p, &g).unwrap();
        let got = p.utility[0].tensors()[0].data()[0];
        assert!((got - 0.995000499950005).abs() < 1e-15, "{got}");
    }

    #[test]
    fn symmetric_entries_stay_equal() {
        let mut p = scalar_set(&[0.7, 0.7]);
        let mut g = GradBundle::zeros_like(&p);
        g.groups[0][0].data_mut().copy_from_slice(&[0.3, 0.3]);
        let mut opt = RmsProp::new(0.01, 0.99, 1e-5);
        for _ in 0..3 {
            opt.step(&mut p, &g).unwrap();
        }
        let d = p.utility[0].tensors()[0].data();
        assert_eq!(d[0].to_bits(), d[1].to_bits());
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut p = scalar_set(&[1.0]);
        let before = p.clone();
        let mut g = GradBundle::zeros_like(&p);
        g.groups[0][0].data_mut()[0] = f64::INFINITY;
        let mut opt = RmsProp::new(0.0005, 0.99, 1e-5);
        assert!(matches!(opt.step(&mut p, &g), Err(MaserError::NonFinite(_))));
        assert_eq!(p, before);
    }

    #[test]
    fn accumulator_persists_between_steps() {
        let mut p = scalar_set(&[1.0]);
        let mut g = GradBundle::zeros_like(&p);
        g.groups[0][0].data_mut()[0] = 1.0;
        let mut opt = RmsProp::new(0.0005, 0.99, 1e-5);
        opt.step(&mut p, &g).unwrap();
        opt.step(&mut p, &g).unwrap();
        // second step: v = 0.99 * 0.01 + 0.01 = 0.0199
        let expected = 0.995000499950005 - 0.0005 / (0.0199f64.sqrt() + 1e-5);
        assert!((p.utility[0].tensors()[0].data()[0] - expected).abs() < 1e-15);
    }
}
