//! Finite-difference oracle against the analytic backward pass, 64-bit,
//! 100 random cases per op plus the full joint loss on a tiny network.

use selfens_core::gradcheck::{format_results, run_suite, TOLERANCE};

#[test]
fn every_op_matches_finite_differences() {
    let results = run_suite(2024, 100);
    print!("{}", format_results(&results));
    let expected = [
        "conv2d",
        "dense",
        "batch_norm",
        "relu",
        "max_pool2",
        "global_avg_pool",
        "softmax",
        "cross_entropy",
        "consistency_mse",
        "joint_loss",
    ];
    let names: Vec<_> = results.iter().map(|r| r.name).collect();
    assert_eq!(names, expected);
    for r in &results {
        assert!(
            r.max_rel_err < TOLERANCE,
            "{}: max relative error {:.3e} exceeds {:.0e}",
            r.name,
            r.max_rel_err,
            TOLERANCE
        );
    }
}

#[test]
fn suite_is_seed_deterministic() {
    let a = run_suite(7, 3);
    let b = run_suite(7, 3);
    for (x, y) in a.iter().zip(b.iter()) {
        assert_eq!(x.max_rel_err.to_bits(), y.max_rel_err.to_bits());
    }
}
