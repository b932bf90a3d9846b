use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::gradcheck::check;
use super::*;
use crate::error::Error;

fn t(rows: &[&[f64]]) -> Tensor {
    Tensor::from_rows(rows).unwrap()
}

#[test]
fn matmul_identity_and_hand_product() {
    let mut g = Graph::<f64>::new();
    let i2 = g.constant(Tensor::identity(2));
    let m = g.constant(t(&[&[1.0, 2.0], &[3.0, 4.0]]));
    let p = g.matmul(i2, m).unwrap();
    assert_eq!(g.value(p), &t(&[&[1.0, 2.0], &[3.0, 4.0]]));

    let a = g.constant(t(&[&[1.0, 2.0]]));
    let b = g.constant(t(&[&[3.0], &[4.0]]));
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.value(c).data(), &[11.0]);
}

#[test]
fn matmul_mismatch_names_both_shapes() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[4, 5]));
    let err = g.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, Error::Dimension { .. }));
    assert!(msg.contains("[2, 3]") && msg.contains("[4, 5]"), "{msg}");
}

#[test]
fn elementwise_examples() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::vector(vec![1.0, 2.0]));
    let b = g.constant(Tensor::vector(vec![3.0, 4.0]));
    let s = g.add(a, b).unwrap();
    assert_eq!(g.value(s).data(), &[4.0, 6.0]);
    let z = g.constant(Tensor::vector(vec![0.0]));
    let ge = g.gelu(z);
    let th = g.tanh(z);
    assert_eq!(g.value(ge).item(), 0.0);
    assert_eq!(g.value(th).item(), 0.0);
    let bad = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
    assert!(g.mul(a, bad).is_err());
}

#[test]
fn softmax_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::vector(vec![0.0, 0.0]));
    let s = g.softmax(x).unwrap();
    assert_eq!(g.value(s).data(), &[0.5, 0.5]);

    let x = g.constant(Tensor::vector(vec![2f64.ln(), 0.0]));
    let s = g.softmax(x).unwrap();
    let d = g.value(s).data();
    assert!((d[0] - 2.0 / 3.0).abs() < 1e-15 && (d[1] - 1.0 / 3.0).abs() < 1e-15);

    let x = g.constant(Tensor::vector(vec![1000.0, 0.0]));
    let s = g.softmax(x).unwrap();
    assert!(g.value(s).is_finite());
    assert!((g.value(s).data()[0] - 1.0).abs() < 1e-15);
}

#[test]
fn softmax_axis_zero_normalizes_columns() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t(&[&[1.0, 2.0], &[3.0, -1.0], &[0.5, 0.0]]));
    let s = g.softmax_axis(x, 0).unwrap();
    let v = g.value(s);
    for c in 0..2 {
        let col: f64 = (0..3).map(|r| v.at(r, c)).sum();
        assert!((col - 1.0).abs() < 1e-12);
    }
    assert!(g.softmax_axis(x, 2).is_err());
}

#[test]
fn masked_softmax_zeroes_masked_columns() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t(&[&[1.0, 5.0, 2.0]]));
    let s = g.softmax_masked(x, Rc::from(vec![false, true, false])).unwrap();
    let v = g.value(s).data();
    assert_eq!(v[1], 0.0);
    assert!((v[0] + v[2] - 1.0).abs() < 1e-15);
    assert!(g.softmax_masked(x, Rc::from(vec![true, true, true])).is_err());
}

#[test]
fn layernorm_examples() {
    let mut g = Graph::<f64>::new();
    let ones = g.constant(Tensor::full(&[2], 1.0));
    let zeros = g.constant(Tensor::zeros(&[2]));
    let c = g.constant(t(&[&[3.0, 3.0]]));
    let y = g.layernorm(c, ones, zeros, LAYERNORM_EPS).unwrap();
    assert_eq!(g.value(y).data(), &[0.0, 0.0]);

    let r = g.constant(t(&[&[1.0, -1.0]]));
    let y = g.layernorm(r, ones, zeros, 1e-300).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, -1.0]);

    let bias = g.constant(Tensor::vector(vec![0.25, -0.5]));
    let y = g.layernorm(r, zeros, bias, LAYERNORM_EPS).unwrap();
    assert_eq!(g.value(y).data(), &[0.25, -0.5]);
}

#[test]
fn backward_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::vector(vec![1.0, 2.0, 3.0]));
    let s = g.sum(x);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);

    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::vector(vec![1.0, 2.0]));
    let d = g.dot(x, x).unwrap();
    g.backward(d).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0]);
    // second pass accumulates
    g.backward(d).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[4.0, 8.0]);
    g.zero_grad();
    assert!(g.grad(x).is_none());
}

#[test]
fn backward_rejects_non_scalar() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::vector(vec![1.0, 2.0]));
    let y = g.scale(x, 2.0);
    assert!(matches!(g.backward(y), Err(Error::Contract(_))));
}

#[test]
fn reused_tensor_accumulates_gradient() {
    // f(x) = sum(x*x + x) -> 2x + 1
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::vector(vec![0.5, -2.0]));
    let sq = g.mul(x, x).unwrap();
    let s = g.add(sq, x).unwrap();
    let l = g.sum(s);
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[2.0, -3.0]);
}

#[test]
fn constants_get_no_gradient() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::vector(vec![1.0, 2.0]));
    let c = g.constant(Tensor::vector(vec![3.0, 4.0]));
    let p = g.dot(x, c).unwrap();
    g.backward(p).unwrap();
    assert!(g.grad(c).is_none());
    assert_eq!(g.grad(x).unwrap().data(), &[3.0, 4.0]);
}

#[test]
fn abs_cosine_clamped_all_zero() {
    let mut g = Graph::<f64>::new();
    let a = g.param(Tensor::zeros(&[4]));
    let b = g.param(Tensor::zeros(&[4]));
    let c = g.abs_cosine(a, b, 1e-8).unwrap();
    assert_eq!(g.value(c).item(), 0.0);
    g.backward(c).unwrap();
    assert_eq!(g.grad(a).unwrap().data(), &[0.0; 4]);
}

#[test]
fn cross_entropy_and_bce_closed_forms() {
    let mut g = Graph::<f64>::new();
    let z = g.constant(t(&[&[0.0, 0.0]]));
    let ce = g.cross_entropy(z, &[0]).unwrap();
    assert!((g.value(ce).item() - 2f64.ln()).abs() < 1e-15);
    assert!(matches!(g.cross_entropy(z, &[2]), Err(Error::Data(_))));

    let z = g.constant(t(&[&[0.0]]));
    let bce = g.bce_with_logits(z, &t(&[&[1.0]])).unwrap();
    assert!((g.value(bce).item() - 2f64.ln()).abs() < 1e-15);

    // extreme logits stay finite
    let z = g.constant(t(&[&[800.0, -800.0]]));
    let bce = g.bce_with_logits(z, &t(&[&[1.0, 0.0]])).unwrap();
    assert!(g.value(bce).item().is_finite());
}

// ---- finite-difference checks on small random instances -------------------

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn fd_matmul_softmax_layernorm() {
    let mut r = rng(7);
    let a = Tensor::randn(&[3, 4], 1.0, &mut r);
    let b = Tensor::randn(&[4, 2], 1.0, &mut r);
    let w = Tensor::randn(&[3, 2], 1.0, &mut r);
    let rep = check(&[a, b, w], |g, v| {
        let p = g.matmul(v[0], v[1])?;
        let s = g.softmax(p)?;
        let m = g.mul(s, v[2])?;
        Ok(g.sum(m))
    })
    .unwrap();
    assert!(rep.passed(), "{rep:?}");

    let x = Tensor::randn(&[3, 5], 1.0, &mut r);
    let gain = Tensor::randn(&[5], 1.0, &mut r);
    let bias = Tensor::randn(&[5], 1.0, &mut r);
    let w = Tensor::randn(&[3, 5], 1.0, &mut r);
    let rep = check(&[x, gain, bias, w], |g, v| {
        let y = g.layernorm(v[0], v[1], v[2], LAYERNORM_EPS)?;
        let m = g.mul(y, v[3])?;
        Ok(g.sum(m))
    })
    .unwrap();
    assert!(rep.passed(), "{rep:?}");
}

#[test]
fn fd_structural_ops() {
    let mut r = rng(11);
    let x = Tensor::randn(&[4, 6], 1.0, &mut r);
    let table = Tensor::randn(&[5, 3], 1.0, &mut r);
    let bias = Tensor::randn(&[3], 1.0, &mut r);
    let rep = check(&[x, table, bias], |g, v| {
        let s1 = g.slice(v[0], 1, 3, 2, 3)?;
        let s2 = g.slice(v[0], 0, 3, 0, 3)?;
        let cc = g.concat_cols(&[s1, s2])?;
        let tr = g.transpose(cc)?;
        let e = g.gather_rows(v[1], &[0, 2, 2, 4, 1, 0])?;
        let eb = g.add_bias(e, v[2])?;
        let rows = g.concat_rows(&[tr, eb])?;
        let ge = g.gelu(rows);
        let th = g.tanh(ge);
        let sq = g.mul(th, rows)?;
        let flat = g.flatten(sq);
        let sc = g.scale(flat, 0.3);
        Ok(g.mean(sc))
    })
    .unwrap();
    assert!(rep.passed(), "{rep:?}");
}

#[test]
fn fd_masked_softmax_and_losses() {
    let mut r = rng(13);
    let x = Tensor::randn(&[3, 4], 1.0, &mut r);
    let rep = check(&[x], |g, v| {
        let s = g.softmax_masked(v[0], Rc::from(vec![false, true, false, false]))?;
        let sq = g.mul(s, s)?;
        Ok(g.sum(sq))
    })
    .unwrap();
    assert!(rep.passed(), "{rep:?}");

    let z = Tensor::randn(&[4, 3], 2.0, &mut r);
    let rep = check(&[z.clone()], |g, v| g.cross_entropy(v[0], &[0, 2, 1, 2])).unwrap();
    assert!(rep.passed(), "{rep:?}");
    let targets = Tensor::new(vec![4, 3], vec![1., 0., 1., 0., 0., 1., 1., 1., 0., 0., 1., 0.]).unwrap();
    let rep = check(&[z], |g, v| g.bce_with_logits(v[0], &targets)).unwrap();
    assert!(rep.passed(), "{rep:?}");
}

#[test]
fn fd_abs_cosine() {
    let mut r = rng(17);
    for _ in 0..5 {
        let a = Tensor::randn(&[2, 3, 4], 0.02, &mut r);
        let b = Tensor::randn(&[2, 3, 4], 0.02, &mut r);
        let rep = check(&[a, b], |g, v| g.abs_cosine(v[0], v[1], 1e-8)).unwrap();
        assert!(rep.passed(), "{rep:?}");
    }
}

#[test]
fn outputs_are_deterministic() {
    let run = || {
        let mut r = rng(3);
        let a = Tensor::<f64>::randn(&[4, 4], 1.0, &mut r);
        let mut g = Graph::new();
        let x = g.param(a);
        let s = g.softmax(x).unwrap();
        let l = g.layernorm(s, x, x, LAYERNORM_EPS);
        assert!(l.is_err());
        let ge = g.gelu(s);
        let tot = g.sum(ge);
        g.backward(tot).unwrap();
        (g.value(tot).clone(), g.grad(x).unwrap())
    };
    let (v1, g1) = run();
    let (v2, g2) = run();
    assert_eq!(v1.data()[0].to_bits(), v2.data()[0].to_bits());
    assert!(g1.data().iter().zip(g2.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn works_at_single_precision() {
    let mut g = Graph::<f32>::new();
    let x = g.param(Tensor::vector(vec![1.0f32, 2.0]));
    let d = g.dot(x, x).unwrap();
    g.backward(d).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[2.0f32, 4.0]);
}
