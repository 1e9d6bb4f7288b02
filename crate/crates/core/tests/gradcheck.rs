mod common;

use common::suites::{gradient_suite, INSTANCES};
use common::GRAD_TOLERANCE;

#[test]
fn every_op_and_loss_matches_finite_differences() {
    let checks = gradient_suite();
    assert!(checks.len() >= 18);
    for c in &checks {
        assert!(c.instances as u64 >= INSTANCES);
        assert!(c.worst < GRAD_TOLERANCE, "{}: relative error {:e}", c.name, c.worst);
    }
}

#[test]
fn leaky_relu_gradient_at_negative_three() {
    use udaseg_core::autodiff::Tape;
    use udaseg_core::Tensor;
    let mut tape = Tape::new();
    let x = tape.variable(Tensor::new(vec![1], vec![-3.0]).unwrap());
    let y = tape.leaky_relu(x, 0.2);
    let s = tape.sum(y);
    let g = tape.backward(s).unwrap().get(x).unwrap()[0];
    let h = 1e-5;
    let numeric = ((-3.0f64 + h) * 0.2 - (-3.0f64 - h) * 0.2) / (2.0 * h);
    assert!((g - 0.2).abs() < 1e-15);
    assert!((g - numeric).abs() < 1e-6);
}
