use proptest::prelude::*;

use super::*;

fn t(data: &[f64], shape: &[usize]) -> Tensor<f64> {
    Tensor::from_f64(data, shape).unwrap()
}

fn p(data: &[f64], shape: &[usize]) -> Tensor<f64> {
    Tensor::parameter(data.to_vec(), shape).unwrap()
}

fn randn(stream: &mut RngStream, shape: &[usize]) -> Vec<f64> {
    stream.normals(shape.iter().product())
}

/// Central-difference gradient of `f` at `x`, step 1e-5.
fn numeric_grad(x: &[f64], shape: &[usize], f: &dyn Fn(&Tensor<f64>) -> f64) -> Vec<f64> {
    let h = 1e-5;
    (0..x.len())
        .map(|i| {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += h;
            xm[i] -= h;
            (f(&t(&xp, shape)) - f(&t(&xm, shape))) / (2.0 * h)
        })
        .collect()
}

fn assert_close(analytic: &[f64], numeric: &[f64], tol: f64) {
    assert_eq!(analytic.len(), numeric.len());
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let scale = a.abs().max(n.abs()).max(1e-3);
        assert!(
            (a - n).abs() / scale <= tol,
            "coordinate {i}: analytic {a} vs numeric {n}"
        );
    }
}

/// Check d(sum(w ⊙ op(x)))/dx against finite differences for a random `w`.
fn check_unary(shape: &[usize], seed: u64, op: impl Fn(&Tensor<f64>) -> Tensor<f64>) {
    let mut s = RngStream::new(seed);
    let x = randn(&mut s, shape);
    let probe = op(&t(&x, shape));
    let w = t(&randn(&mut s, probe.shape()), probe.shape());
    let loss = |xt: &Tensor<f64>| op(xt).mul(&w).unwrap().sum();
    let leaf = p(&x, shape);
    let grads = loss(&leaf).backward().unwrap();
    let analytic = grads.wrt(&leaf).to_vec();
    let numeric = numeric_grad(&x, shape, &|xt| loss(xt).item());
    assert_close(&analytic, &numeric, 1e-4);
}

#[test]
fn add_vectors() {
    let c = t(&[1.0, 2.0], &[2]).add(&t(&[3.0, 4.0], &[2])).unwrap();
    assert_eq!(c.data(), &[4.0, 6.0]);
}

#[test]
fn mul_by_scalar_zero() {
    let c = t(&[2.0], &[1]).mul(&Tensor::scalar(0.0)).unwrap();
    assert_eq!(c.data(), &[0.0]);
}

#[test]
fn add_shape_mismatch_names_both_shapes() {
    let err = t(&[1.0, 2.0], &[2]).add(&t(&[1.0, 2.0, 3.0], &[3])).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2]") && msg.contains("[3]"), "{msg}");
}

#[test]
fn matmul_identity_and_selector() {
    let id = t(&[1.0, 0.0, 0.0, 1.0], &[2, 2]);
    let m = t(&[1.0, 2.0, 3.0, 4.0], &[2, 2]);
    assert_eq!(id.matmul(&m).unwrap().data(), m.data());
    let r = t(&[1.0, 0.0], &[1, 2]).matmul(&t(&[5.0, 7.0], &[2, 1])).unwrap();
    assert_eq!(r.data(), &[5.0]);
    assert_eq!(r.shape(), &[1, 1]);
}

#[test]
fn matmul_matches_triple_loop() {
    let mut s = RngStream::new(7);
    let a = randn(&mut s, &[3, 4]);
    let b = randn(&mut s, &[4, 2]);
    let c = t(&a, &[3, 4]).matmul(&t(&b, &[4, 2])).unwrap();
    for i in 0..3 {
        for j in 0..2 {
            let mut acc = 0.0;
            for k in 0..4 {
                acc += a[i * 4 + k] * b[k * 2 + j];
            }
            assert!((c.data()[i * 2 + j] - acc).abs() < 1e-12);
        }
    }
}

#[test]
fn matmul_inner_mismatch_errors() {
    let err = t(&[0.0; 6], &[2, 3]).matmul(&t(&[0.0; 4], &[2, 2])).unwrap_err();
    assert!(matches!(err, Error::InnerExtent { .. }));
}

#[test]
fn backward_sum_of_squares() {
    let x = p(&[1.0, 2.0, 3.0], &[3]);
    let g = x.square().sum().backward().unwrap();
    assert_eq!(g.wrt(&x).data(), &[2.0, 4.0, 6.0]);
}

#[test]
fn unreachable_leaf_gets_zero() {
    let x = p(&[1.0, 2.0], &[2]);
    let w = p(&[5.0, 6.0, 7.0], &[3]);
    let g = x.sum().backward().unwrap();
    assert!(g.get(&w).is_none());
    assert_eq!(g.wrt(&w).data(), &[0.0, 0.0, 0.0]);
}

#[test]
fn backward_rejects_non_scalar() {
    let x = p(&[1.0, 2.0], &[2]);
    assert!(matches!(x.square().backward(), Err(Error::NonScalarLoss(_))));
}

#[test]
fn shared_subexpression_accumulates() {
    // f = x*x + x  -> 2x + 1
    let x = p(&[3.0], &[1]);
    let f = x.mul(&x).unwrap().add(&x).unwrap().sum();
    assert_eq!(f.backward().unwrap().wrt(&x).data(), &[7.0]);
}

#[test]
fn two_layer_mlp_matches_finite_differences() {
    let mut s = RngStream::new(11);
    let x = t(&randn(&mut s, &[5, 3]), &[5, 3]);
    let w1v = randn(&mut s, &[3, 8]);
    let b1v = randn(&mut s, &[8]);
    let w2v = randn(&mut s, &[8, 2]);
    let target = t(&randn(&mut s, &[5, 2]), &[5, 2]);
    let net = |w1: &Tensor<f64>, b1: &Tensor<f64>, w2: &Tensor<f64>| {
        x.matmul(w1)
            .unwrap()
            .add_row(b1)
            .unwrap()
            .silu()
            .matmul(w2)
            .unwrap()
            .mse(&target)
            .unwrap()
    };
    let (w1, b1, w2) = (p(&w1v, &[3, 8]), p(&b1v, &[8]), p(&w2v, &[8, 2]));
    let g = net(&w1, &b1, &w2).backward().unwrap();
    let b1c = t(&b1v, &[8]);
    let w2c = t(&w2v, &[8, 2]);
    let num_w1 = numeric_grad(&w1v, &[3, 8], &|w| net(w, &b1c, &w2c).item());
    assert_close(g.wrt(&w1).data(), &num_w1, 1e-4);
    let w1c = t(&w1v, &[3, 8]);
    let num_b1 = numeric_grad(&b1v, &[8], &|b| net(&w1c, b, &w2c).item());
    assert_close(g.wrt(&b1).data(), &num_b1, 1e-4);
    let num_w2 = numeric_grad(&w2v, &[8, 2], &|w| net(&w1c, &b1c, w).item());
    assert_close(g.wrt(&w2).data(), &num_w2, 1e-4);
}

#[test]
fn elementwise_gradients() {
    let mut s = RngStream::new(3);
    let other = t(&randn(&mut s, &[2, 3]).iter().map(|v| v + 3.0).collect::<Vec<_>>(), &[2, 3]);
    for op in [BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Div] {
        check_unary(&[2, 3], 1, |x| x.elementwise(op, &other).unwrap());
        check_unary(&[2, 3], 2, |x| other.elementwise(op, &x.add_scalar(4.0)).unwrap());
    }
    let sc = Tensor::scalar(1.7);
    check_unary(&[4], 5, |x| x.mul(&sc).unwrap());
    // scalar operand receives the summed gradient
    check_unary(&[1], 6, |x| other.mul(x).unwrap());
}

#[test]
fn unary_gradients() {
    for op in [UnaryOp::Neg, UnaryOp::Square, UnaryOp::Exp, UnaryOp::Sigmoid, UnaryOp::Silu, UnaryOp::Gelu] {
        check_unary(&[3, 4], 9, |x| x.unary(op));
    }
    check_unary(&[3, 4], 9, |x| x.square().add_scalar(0.5).unary(UnaryOp::Sqrt));
}

#[test]
fn structural_gradients() {
    check_unary(&[2, 3, 4], 21, |x| x.permute(&[2, 0, 1]).unwrap());
    check_unary(&[2, 3, 4], 22, |x| x.reshape(&[6, 4]).unwrap().scale(3.0));
    check_unary(&[2, 5], 23, |x| x.expand_tokens(3).unwrap());
    check_unary(&[4, 3], 24, |x| x.embedding(&[0, 2, 2, 3, 0]).unwrap());
    check_unary(&[3, 5], 25, |x| x.softmax_last());
    check_unary(&[3, 6], 26, |x| x.rms_normalize(1e-6));
    check_unary(&[3, 6], 27, |x| x.layer_normalize(1e-5));
    check_unary(&[2, 3, 4], 28, |x| x.rope(&[0.0, 1.0, 5.0], 10_000.0).unwrap());
    check_unary(&[6], 29, |x| x.mean());
}

#[test]
fn matmul_and_bmm_gradients() {
    let mut s = RngStream::new(31);
    let b = t(&randn(&mut s, &[4, 3]), &[4, 3]);
    check_unary(&[2, 4], 32, |x| x.matmul(&b).unwrap());
    let a = t(&randn(&mut s, &[2, 4]), &[2, 4]);
    check_unary(&[4, 3], 33, |x| a.matmul(x).unwrap());
    let rhs = t(&randn(&mut s, &[2, 3, 5]), &[2, 3, 5]);
    let rhs_t = t(&randn(&mut s, &[2, 5, 3]), &[2, 5, 3]);
    check_unary(&[2, 4, 3], 34, |x| x.bmm(&rhs, false).unwrap());
    check_unary(&[2, 4, 3], 35, |x| x.bmm(&rhs_t, true).unwrap());
    let lhs = t(&randn(&mut s, &[2, 4, 3]), &[2, 4, 3]);
    check_unary(&[2, 3, 5], 36, |x| lhs.bmm(x, false).unwrap());
    check_unary(&[2, 5, 3], 37, |x| lhs.bmm(x, true).unwrap());
}

#[test]
fn row_broadcast_gradients() {
    let mut s = RngStream::new(41);
    let x = t(&randn(&mut s, &[3, 4]), &[3, 4]);
    let row = t(&randn(&mut s, &[4]), &[4]);
    check_unary(&[4], 42, |r| x.add_row(r).unwrap());
    check_unary(&[4], 43, |r| x.mul_row(r).unwrap());
    check_unary(&[3, 4], 44, |x| x.mul_row(&row).unwrap());
}

#[test]
fn huber_branches_and_gradient() {
    let zero = t(&[0.0], &[1]);
    assert_eq!(t(&[0.5], &[1]).huber(&zero, 1.0).unwrap().item(), 0.125);
    assert_eq!(t(&[2.0], &[1]).huber(&zero, 1.0).unwrap().item(), 1.5);
    let mut s = RngStream::new(51);
    let target = t(&randn(&mut s, &[10]), &[10]);
    check_unary(&[10], 52, |x| x.huber(&target, 0.5).unwrap());
    assert!(t(&[1.0], &[1]).huber(&t(&[1.0, 2.0], &[2]), 1.0).is_err());
}

#[test]
fn rope_identity_at_zero_and_quarter_turn() {
    let x = t(&[0.3, -1.2, 2.0, 0.7], &[1, 4]);
    assert!(x.rope(&[0.0], 10_000.0).unwrap().bitwise_eq(&x));
    let y = t(&[1.0, 0.0], &[1, 2]).rope(&[std::f64::consts::FRAC_PI_2], 10_000.0).unwrap();
    assert!((y.data()[0] - 0.0).abs() < 1e-15);
    assert!((y.data()[1] - 1.0).abs() < 1e-15);
    assert!(t(&[1.0, 2.0, 3.0], &[1, 3]).rope(&[1.0], 10_000.0).is_err());
}

#[test]
fn gaussian_is_deterministic() {
    let a: Tensor<f64> = RngStream { seed: 9, counter: 17 }.gaussian(&[33]);
    let b: Tensor<f64> = RngStream { seed: 9, counter: 17 }.gaussian(&[33]);
    assert!(a.bitwise_eq(&b));
    let mut s = RngStream::new(9);
    let _ = s.gaussian::<f64>(&[5]);
    assert_eq!(s.counter, 6);
}

#[test]
fn gaussian_moments() {
    let n = 100_000;
    let x = RngStream::new(2024).normals(n);
    let mean = x.iter().sum::<f64>() / n as f64;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    assert!(mean.abs() <= 3.0 / (n as f64).sqrt(), "mean {mean}");
    assert!((var - 1.0).abs() <= 0.02, "var {var}");
}

#[test]
fn split_streams_differ_and_repeat() {
    let s = RngStream::new(5);
    assert_eq!(s.split(1), s.split(1));
    assert_ne!(s.split(1).seed, s.split(2).seed);
    assert_ne!(s.split_named("a").seed, s.split_named("b").seed);
}

proptest! {
    #[test]
    fn backward_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..1000) {
        let mut s = RngStream::new(seed);
        let xv = randn(&mut s, &[5]);
        let x = p(&xv, &[5]);
        let f = |x: &Tensor<f64>| x.square().sum();
        let g = |x: &Tensor<f64>| x.silu().sum();
        let combo = f(&x).scale(a).add(&g(&x).scale(b)).unwrap();
        let gc = combo.backward().unwrap().wrt(&x).to_vec();
        let gf = f(&x).backward().unwrap().wrt(&x).to_vec();
        let gg = g(&x).backward().unwrap().wrt(&x).to_vec();
        for i in 0..5 {
            prop_assert!((gc[i] - (a * gf[i] + b * gg[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn same_stream_position_same_values(seed in any::<u64>(), counter in 0u64..1_000_000, n in 1usize..40) {
        let a = RngStream { seed, counter }.normals(n);
        let b = RngStream { seed, counter }.normals(n);
        prop_assert_eq!(a, b);
    }
}
