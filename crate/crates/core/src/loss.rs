//! The joint training objective: batch-mean cross-entropy on the labeled
//! stream plus an MSE consistency term between the predictions for two
//! augmented views of the unlabeled stream, weighted by alpha.

use crate::error::Result;
use crate::network::{Network, ParamBinding};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::Float;

/// What the consistency MSE compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConsistencyTarget {
    /// Softmax outputs (default; bounded, keeps alpha = 1 well-scaled).
    Probabilities,
    /// Raw logits.
    Logits,
}

/// Scalar losses of one recorded step, read back off the tape.
#[derive(Debug, Clone, Copy)]
pub struct LossParts<T> {
    pub supervised: T,
    pub consistency: T,
    pub total: T,
}

/// Record the joint objective on `tape`: forward the labeled batch through
/// the network, cross-entropy against the one-hot targets, then forward
/// BOTH unlabeled views through the same parameters and add
/// alpha * MSE between their predictions. When alpha is exactly zero the
/// unlabeled views are not forwarded at all, so the recorded graph (and the
/// BN running-stat updates) match a supervised-only step bit for bit.
#[allow(clippy::too_many_arguments)]
pub fn joint_loss<T: Float>(
    net: &mut Network<T>,
    tape: &mut Tape<T>,
    labeled_images: Tensor<T>,
    labeled_targets: Tensor<T>,
    views: Option<(Tensor<T>, Tensor<T>)>,
    alpha: T,
    target: ConsistencyTarget,
    params: &mut ParamBinding,
) -> Result<(Var, LossParts<T>)> {
    let logits = net.forward_train(tape, labeled_images, params)?;
    let probs = tape.softmax(logits)?;
    let ce = tape.cross_entropy(labeled_targets, probs)?;
    let (loss, sup, cons) = match views {
        Some((v1, v2)) if alpha != T::zero() => {
            let z1 = net.forward_train(tape, v1, params)?;
            let z2 = net.forward_train(tape, v2, params)?;
            let (p1, p2) = match target {
                ConsistencyTarget::Probabilities => (tape.softmax(z1)?, tape.softmax(z2)?),
                ConsistencyTarget::Logits => (z1, z2),
            };
            let mse = tape.mse_loss(p1, p2)?;
            let total = tape.add_scaled(ce, mse, alpha)?;
            (total, tape.value(ce).item()?, tape.value(mse).item()?)
        }
        _ => (ce, tape.value(ce).item()?, T::zero()),
    };
    Ok((loss, LossParts { supervised: sup, consistency: cons, total: tape.value(loss).item()? }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::compact_spec;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_batch(seed: u64) -> (Tensor<f64>, Tensor<f64>, Tensor<f64>, Tensor<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = |shape: &[usize]| {
            let n: usize = shape.iter().product();
            Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
        };
        let images = t(&[4, 1, 8, 8]);
        let mut targets = Tensor::zeros(&[4, 2]);
        for r in 0..4 {
            targets.data_mut()[r * 2 + r % 2] = 1.0;
        }
        let v1 = t(&[4, 1, 8, 8]);
        let v2 = t(&[4, 1, 8, 8]);
        (images, targets, v1, v2)
    }

    #[test]
    fn decomposition_matches_parts() {
        let mut net = Network::<f64>::from_spec(compact_spec(2), 1);
        let (images, targets, v1, v2) = toy_batch(5);
        let mut tape = Tape::new();
        let mut binding = ParamBinding::new();
        let (_, parts) = joint_loss(
            &mut net,
            &mut tape,
            images,
            targets,
            Some((v1, v2)),
            0.7,
            ConsistencyTarget::Probabilities,
            &mut binding,
        )
        .unwrap();
        assert_relative_eq!(
            parts.total,
            parts.supervised + 0.7 * parts.consistency,
            max_relative = 1e-12
        );
        assert!(parts.consistency >= 0.0);
    }

    #[test]
    fn alpha_zero_is_pure_cross_entropy() {
        let mut net = Network::<f64>::from_spec(compact_spec(2), 1);
        let (images, targets, v1, v2) = toy_batch(6);
        let mut tape = Tape::new();
        let mut binding = ParamBinding::new();
        let (_, parts) = joint_loss(
            &mut net,
            &mut tape,
            images.clone(),
            targets.clone(),
            Some((v1, v2)),
            0.0,
            ConsistencyTarget::Probabilities,
            &mut binding,
        )
        .unwrap();
        assert_eq!(parts.consistency, 0.0);
        assert_eq!(parts.total, parts.supervised);
    }

    #[test]
    fn identical_views_give_zero_consistency() {
        let mut net = Network::<f64>::from_spec(compact_spec(2), 1);
        let (images, targets, v1, _) = toy_batch(7);
        let mut tape = Tape::new();
        let mut binding = ParamBinding::new();
        let (_, parts) = joint_loss(
            &mut net,
            &mut tape,
            images,
            targets,
            Some((v1.clone(), v1)),
            1.0,
            ConsistencyTarget::Probabilities,
            &mut binding,
        )
        .unwrap();
        assert_eq!(parts.consistency, 0.0);
    }
}
