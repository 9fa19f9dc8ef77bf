mod common;

use common::{gradcheck, gradient_case, FD_TOLERANCE, GRADIENT_OPS};

#[test]
fn every_operation_matches_central_differences() {
    let mut failures = Vec::new();
    for op in GRADIENT_OPS {
        for seed in 0..50 {
            let (inputs, f) = gradient_case(op, seed);
            let err = gradcheck(&inputs, f.as_ref(), seed).unwrap();
            if err > FD_TOLERANCE {
                failures.push(format!("{op} seed {seed}: {err:.2e}"));
            }
        }
    }
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn harness_catches_a_wrong_gradient() {
    use splitguard::Tensor;
    let x = vec![Tensor::matrix(1, 3, vec![0.5, -1.0, 2.0])];
    // x·stop_gradient(x): the tape sees half the true derivative of x².
    let err = gradcheck(
        &x,
        &|v| {
            let detached = v[0].tape().leaf(v[0].value());
            v[0].mul(detached)
        },
        1,
    )
    .unwrap();
    assert!(err > 0.4, "{err}");
}
