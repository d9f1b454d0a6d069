//! Adam with bias correction, one moment pair per trainable tensor.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::Float;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig<T> {
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
}

impl<T: Float> AdamConfig<T> {
    pub fn with_lr(lr: T) -> Self {
        AdamConfig {
            learning_rate: lr,
            beta1: T::from(0.9).unwrap(),
            beta2: T::from(0.999).unwrap(),
            epsilon: T::from(1e-8).unwrap(),
        }
    }
}

/// First/second moment buffers plus the step counter.
pub struct AdamState<T> {
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Float> AdamState<T> {
    /// Moment buffers shaped after the given parameter tensors.
    pub fn new(params: &[&Tensor<T>]) -> Self {
        AdamState {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over all parameters. `grads[i]` pairs with `params[i]`;
    /// a non-finite gradient aborts the whole step before any parameter
    /// is touched.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor<T>],
        grads: &[&Tensor<T>],
        cfg: &AdamConfig<T>,
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Invalid("adam: parameter/gradient count mismatch".into()));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.shape() != params[i].shape() {
                return Err(Error::ShapeMismatch {
                    context: "adam gradient vs parameter",
                    lhs: g.shape().to_vec(),
                    rhs: params[i].shape().to_vec(),
                });
            }
            if !g.all_finite() {
                return Err(Error::NonFinite { context: "adam gradient" });
            }
        }
        self.step += 1;
        let t = T::from(self.step as f64).unwrap();
        let one = T::one();
        let bc1 = one - cfg.beta1.powf(t);
        let bc2 = one - cfg.beta2.powf(t);
        for i in 0..params.len() {
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            let g = grads[i].data();
            let p = params[i].data_mut();
            for j in 0..p.len() {
                m[j] = cfg.beta1 * m[j] + (one - cfg.beta1) * g[j];
                v[j] = cfg.beta2 * v[j] + (one - cfg.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] = p[j] - cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = Tensor::new(&[3], vec![1.0f64, -2.0, 0.5]).unwrap();
        let orig = p.clone();
        let g = Tensor::zeros(&[3]);
        let mut state = AdamState::new(&[&p]);
        let cfg = AdamConfig::with_lr(0.1);
        for _ in 0..5 {
            state.step(&mut [&mut p], &[&g], &cfg).unwrap();
        }
        assert_eq!(p, orig);
    }

    #[test]
    fn single_step_hand_evaluation() {
        // p=0, g=1, lr=0.1: m_hat = 1, v_hat = 1, p -> -0.1/(1+eps) ~ -0.1
        let mut p = Tensor::scalar(0.0f64);
        let g = Tensor::scalar(1.0f64);
        let mut state = AdamState::new(&[&p]);
        let cfg = AdamConfig::with_lr(0.1);
        state.step(&mut [&mut p], &[&g], &cfg).unwrap();
        assert_relative_eq!(p.data()[0], -0.1 / (1.0 + 1e-8), max_relative = 1e-12);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut p = Tensor::scalar(0.0f64);
        let g = Tensor::scalar(f64::NAN);
        let mut state = AdamState::new(&[&p]);
        let err = state.step(&mut [&mut p], &[&g], &AdamConfig::with_lr(0.1));
        assert_eq!(err, Err(Error::NonFinite { context: "adam gradient" }));
        assert_eq!(p.data()[0], 0.0);
    }

    #[test]
    fn identical_runs_identical_trajectories() {
        let run = || {
            let mut p = Tensor::new(&[2], vec![0.3f32, -0.7]).unwrap();
            let mut state = AdamState::new(&[&p]);
            let cfg = AdamConfig::with_lr(0.01);
            for k in 0..20 {
                let g = p.map(|x| x * 2.0 + k as f32 * 0.01);
                state.step(&mut [&mut p], &[&g], &cfg).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }
}
