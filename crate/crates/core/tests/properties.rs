//! Property tests for the op-level invariants.

use proptest::prelude::*;
use selfens_core::kernels;
use selfens_core::network::{compact_spec, Network, ParamBinding};
use selfens_core::loss::{joint_loss, ConsistencyTarget};
use selfens_core::tape::Tape;
use selfens_core::tensor::Tensor;

fn tensor_strategy(shape: &'static [usize]) -> impl Strategy<Value = Tensor<f64>> {
    let n: usize = shape.iter().product();
    proptest::collection::vec(-10.0f64..10.0, n)
        .prop_map(move |data| Tensor::new(shape, data).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_distributions(t in tensor_strategy(&[4, 5])) {
        let s = kernels::softmax_forward(&t).unwrap();
        for r in 0..4 {
            let row = &s.data()[r * 5..(r + 1) * 5];
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-6);
            prop_assert!(row.iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }

    #[test]
    fn conv2d_is_linear(
        x in tensor_strategy(&[1, 2, 4, 4]),
        y in tensor_strategy(&[1, 2, 4, 4]),
        w in tensor_strategy(&[3, 2, 3, 3]),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let mut combo = x.map(|v| v * a);
        combo.add_scaled_assign(&y, b).unwrap();
        let lhs = kernels::conv2d_forward(&combo, &w).unwrap();
        let fx = kernels::conv2d_forward(&x, &w).unwrap();
        let fy = kernels::conv2d_forward(&y, &w).unwrap();
        let mut rhs = fx.map(|v| v * a);
        rhs.add_scaled_assign(&fy, b).unwrap();
        for (l, r) in lhs.data().iter().zip(rhs.data()) {
            let scale = l.abs().max(r.abs()).max(1.0);
            prop_assert!((l - r).abs() / scale < 1e-6);
        }
    }

    #[test]
    fn dense_is_linear(
        x in tensor_strategy(&[2, 3]),
        y in tensor_strategy(&[2, 3]),
        w in tensor_strategy(&[3, 4]),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let mut combo = x.map(|v| v * a);
        combo.add_scaled_assign(&y, b).unwrap();
        let lhs = kernels::dense_forward(&combo, &w).unwrap();
        let fx = kernels::dense_forward(&x, &w).unwrap();
        let fy = kernels::dense_forward(&y, &w).unwrap();
        let mut rhs = fx.map(|v| v * a);
        rhs.add_scaled_assign(&fy, b).unwrap();
        for (l, r) in lhs.data().iter().zip(rhs.data()) {
            let scale = l.abs().max(r.abs()).max(1.0);
            prop_assert!((l - r).abs() / scale < 1e-6);
        }
    }

    #[test]
    fn max_pool_output_is_window_max(t in tensor_strategy(&[2, 2, 4, 4])) {
        let (out, _) = kernels::max_pool2_forward(&t).unwrap();
        for bc in 0..4 {
            for oy in 0..2 {
                for ox in 0..2 {
                    let window: Vec<f64> = [(0, 0), (0, 1), (1, 0), (1, 1)]
                        .iter()
                        .map(|&(dy, dx)| t.data()[bc * 16 + (2 * oy + dy) * 4 + 2 * ox + dx])
                        .collect();
                    let expect = window.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    prop_assert_eq!(out.data()[bc * 4 + oy * 2 + ox], expect);
                }
            }
        }
    }

    #[test]
    fn bn_train_output_is_standardized(t in tensor_strategy(&[3, 2, 2, 2])) {
        let gamma = Tensor::full(&[2], 1.0f64);
        let beta = Tensor::zeros(&[2]);
        let (out, _) = kernels::bn_forward_train(&t, &gamma, &beta, 1e-5).unwrap();
        // per-channel mean ~ 0 and variance ~ 1 over the batch
        for ch in 0..2 {
            let vals: Vec<f64> = (0..3)
                .flat_map(|b| out.data()[(b * 2 + ch) * 4..(b * 2 + ch + 1) * 4].to_vec())
                .collect();
            let n = vals.len() as f64;
            let mean: f64 = vals.iter().sum::<f64>() / n;
            let var: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-4);
            // constant channels are normalized to zero by the epsilon guard
            let input_var: f64 = {
                let iv: Vec<f64> = (0..3)
                    .flat_map(|b| t.data()[(b * 2 + ch) * 4..(b * 2 + ch + 1) * 4].to_vec())
                    .collect();
                let m = iv.iter().sum::<f64>() / n;
                iv.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n
            };
            if input_var > 1e-3 {
                prop_assert!((var - 1.0).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn mse_symmetric_and_nonnegative(
        a in tensor_strategy(&[2, 3]),
        b in tensor_strategy(&[2, 3]),
    ) {
        let ab = kernels::mse_forward(&a, &b).unwrap();
        let ba = kernels::mse_forward(&b, &a).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, ba);
    }
}

#[test]
fn backward_is_bitwise_deterministic() {
    let run = || {
        let mut net = Network::<f64>::from_spec(compact_spec(2), 99);
        let images = Tensor::new(&[2, 1, 8, 8], (0..128).map(|i| (i as f64).sin()).collect()).unwrap();
        let mut targets = Tensor::zeros(&[2, 2]);
        targets.data_mut()[0] = 1.0;
        targets.data_mut()[3] = 1.0;
        let v1 = images.map(|v| v * 0.5 + 0.1);
        let v2 = images.map(|v| v * 0.25 - 0.1);
        let mut tape = Tape::new();
        let mut binding = ParamBinding::new();
        let (loss, _) = joint_loss(
            &mut net,
            &mut tape,
            images.clone(),
            targets,
            Some((v1, v2)),
            1.0,
            ConsistencyTarget::Probabilities,
            &mut binding,
        )
        .unwrap();
        tape.backward(loss).unwrap();
        net.param_ids()
            .iter()
            .map(|&id| tape.grad(binding.var(id).unwrap()).unwrap().clone())
            .collect::<Vec<_>>()
    };
    let a = run();
    let b = run();
    for (x, y) in a.iter().zip(b.iter()) {
        let xb: Vec<u64> = x.data().iter().map(|v| v.to_bits()).collect();
        let yb: Vec<u64> = y.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(xb, yb);
    }
}
