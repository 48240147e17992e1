mod support;

use support::oracles::*;

#[test]
fn every_op_matches_finite_differences() {
    for seed in 0..100 {
        for (name, err) in op_gradient_errors(seed) {
            assert!(err < 1e-4, "{name} seed {seed}: rel err {err:e}");
        }
    }
}

#[test]
fn every_loss_matches_finite_differences() {
    for seed in 0..100 {
        for (name, err) in loss_gradient_errors(seed) {
            assert!(err < 1e-4, "{name} seed {seed}: rel err {err:e}");
        }
    }
}
