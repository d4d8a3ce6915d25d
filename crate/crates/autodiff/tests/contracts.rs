use proptest::prelude::*;
use scarcegan_autodiff::{backward, Array, AutodiffError, Tape, Tensor};

#[test]
fn softplus_at_zero_is_ln2() {
    let y = Tensor::scalar(0.0).softplus().unwrap();
    // ln(1 + e^0) = ln 2 = 0.693147180559945309417...
    assert!((y.item() - std::f64::consts::LN_2).abs() < 1e-15);
}

#[test]
fn identity_matmul() {
    let eye = Tensor::constant(Array::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 }));
    let a = Tensor::constant(Array::from_fn(&[3, 3], |i| i as f64 * 0.5 - 2.0));
    assert_eq!(eye.matmul(&a).unwrap().value(), a.value());
}

#[test]
fn leaky_relu_point() {
    assert_eq!(Tensor::scalar(-1.0).leaky_relu(0.2).unwrap().item(), -0.2);
}

#[test]
fn square_derivative() {
    let tape = Tape::new();
    let x = tape.leaf(Array::scalar(3.0));
    let g = backward(&x.square().unwrap(), &[&x], false).unwrap();
    assert_eq!(g[0].item(), 6.0);
}

#[test]
fn gradient_norm_of_linear_map_has_zero_input_gradient() {
    let tape = Tape::new();
    let x = tape.leaf(Array::new(vec![1, 3], vec![0.3, -1.0, 2.0]).unwrap());
    let a = Tensor::constant(Array::new(vec![3, 1], vec![1.5, -0.5, 2.0]).unwrap());
    let y = x.matmul(&a).unwrap().sum().unwrap();
    let gx = backward(&y, &[&x], true).unwrap();
    let pen = gx[0].square().unwrap().sum().unwrap();
    assert!((pen.item() - (1.5f64 * 1.5 + 0.25 + 4.0)).abs() < 1e-12);
    let ggx = backward(&pen, &[&x], false).unwrap();
    assert!(ggx[0].data().iter().all(|&v| v == 0.0));
}

#[test]
fn non_scalar_loss_rejected() {
    let tape = Tape::new();
    let x = tape.leaf(Array::zeros(&[2]));
    assert!(matches!(backward(&x, &[&x], false), Err(AutodiffError::NotScalar(_))));
}

#[test]
fn tensor_from_other_tape_rejected() {
    let t1 = Tape::new();
    let t2 = Tape::new();
    let x = t1.leaf(Array::scalar(1.0));
    let y = t2.leaf(Array::scalar(2.0));
    let loss = x.square().unwrap();
    assert!(matches!(backward(&loss, &[&y], false), Err(AutodiffError::NotOnTape(0))));
    assert!(matches!(x.add(&y), Err(AutodiffError::TapeMismatch)));
}

#[test]
fn shape_mismatch_is_descriptive() {
    let a = Tensor::constant(Array::zeros(&[2, 3]));
    let b = Tensor::constant(Array::zeros(&[2]));
    let err = a.add(&b).unwrap_err();
    assert_eq!(err.to_string(), "shape mismatch in add: [2, 3] vs [2]");
}

#[test]
fn non_finite_values_are_detectable() {
    let y = Tensor::scalar(-1.0).sqrt().unwrap();
    assert!(!y.is_finite());
}

#[test]
fn unrelated_wrt_gets_zero_gradient() {
    let tape = Tape::new();
    let x = tape.leaf(Array::scalar(2.0));
    let unused = tape.leaf(Array::zeros(&[2, 2]));
    let g = backward(&x.exp().unwrap(), &[&unused, &x], false).unwrap();
    assert_eq!(g[0].value(), &Array::zeros(&[2, 2]));
    assert!((g[1].item() - 2f64.exp()).abs() < 1e-12);
}

#[test]
fn gradients_are_constants_without_create_graph() {
    let tape = Tape::new();
    let x = tape.leaf(Array::scalar(2.0));
    let g = backward(&x.square().unwrap(), &[&x], false).unwrap();
    assert!(!g[0].requires_grad());
    let g = backward(&x.square().unwrap(), &[&x], true).unwrap();
    assert!(g[0].requires_grad());
}

proptest! {
    #[test]
    fn sum_to_inverts_broadcast_count(rows in 1usize..5, cols in 1usize..5, v in -10.0f64..10.0) {
        let b = Array::full(&[cols], v);
        let s = b.broadcast_to(&[rows, cols]).unwrap().sum_to(&[cols]).unwrap();
        for &x in s.data() {
            prop_assert!((x - v * rows as f64).abs() < 1e-9);
        }
    }
}
