//! Finite-difference checks for every differentiable primitive, plus
//! property tests for the tape invariants.

use dhformer::tensor::{grad_check_inputs, PoolKind, ReduceKind};
use dhformer::{Result, Tape, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0)).unwrap()
}

/// Contracts `y` with a fixed random tensor so every output coordinate
/// contributes a distinct weight to the scalar.
fn weighted(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let w = tape.constant(random(tape.shape(y), seed ^ 0xabcdef));
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

fn check<F>(inputs: &[Tensor], f: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    grad_check_inputs(
        |tape, v| {
            let y = f(tape, v)?;
            weighted(tape, y, 7)
        },
        inputs,
        EPS,
        None,
        None,
    )
    .unwrap()
    .max_rel_err
}

#[test]
fn elementwise_gradients() {
    let a = random(&[2, 3], 1);
    let b = random(&[2, 3], 2).map(|v| v + 2.0);
    assert!(check(&[a.clone(), b.clone()], |t, v| t.add(v[0], v[1])) <= 1e-8);
    assert!(check(&[a.clone(), b.clone()], |t, v| t.sub(v[0], v[1])) <= 1e-8);
    assert!(check(&[a.clone(), b.clone()], |t, v| t.mul(v[0], v[1])) <= 1e-8);
    assert!(check(&[a.clone(), b.clone()], |t, v| t.div(v[0], v[1])) <= 1e-6);
    assert!(check(std::slice::from_ref(&a), |t, v| Ok(t.affine(v[0], -2.5, 0.3))) <= 1e-8);
}

#[test]
fn product_rule_at_a_point() {
    // d(a*b)/da at a=2, b=3 is 3
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::new(&[1], vec![2.0]).unwrap());
    let b = tape.constant(Tensor::new(&[1], vec![3.0]).unwrap());
    let y = tape.mul(a, b).unwrap();
    let g = tape.backward(y).unwrap();
    let analytic = g.get(a).unwrap()[0];
    let numeric = ((2.0 + EPS) * 3.0 - (2.0 - EPS) * 3.0) / (2.0 * EPS);
    assert!((analytic - 3.0).abs() < 1e-12);
    assert!((analytic - numeric).abs() < 1e-9);
}

#[test]
fn broadcast_gradients() {
    let x = random(&[2, 3, 4, 4], 3);
    let ch = random(&[2, 3, 1, 1], 4);
    let sp = random(&[2, 1, 4, 4], 5).map(|v| v + 3.0);
    let bias = random(&[4], 6);
    assert!(check(&[x.clone(), ch], |t, v| t.mul(v[0], v[1])) <= 1e-8);
    assert!(check(&[x.clone(), sp], |t, v| t.div(v[0], v[1])) <= 1e-6);
    assert!(check(&[x, bias], |t, v| t.add(v[0], v[1])) <= 1e-8);
}

#[test]
fn matmul_gradients() {
    let a = random(&[3, 4], 10);
    let b = random(&[4, 2], 11);
    assert!(check(&[a, b], |t, v| t.matmul(v[0], v[1])) <= 1e-6);
    let a = random(&[2, 3, 4], 12);
    let b = random(&[2, 4, 5], 13);
    assert!(check(&[a, b], |t, v| t.matmul(v[0], v[1])) <= 1e-6);
    // sum(A·B) specifically
    let a = random(&[3, 3], 14);
    let b = random(&[3, 2], 15);
    let err = grad_check_inputs(
        |t, v| {
            let c = t.matmul(v[0], v[1])?;
            Ok(t.sum(c))
        },
        &[a, b],
        EPS,
        None,
        None,
    )
    .unwrap()
    .max_rel_err;
    assert!(err <= 1e-6, "{err}");
}

#[test]
fn conv_gradients() {
    let x = random(&[1, 2, 5, 5], 20);
    let w = random(&[3, 2, 3, 3], 21);
    let b = random(&[3], 22);
    for (stride, pad) in [(1, 0), (1, 1), (2, 1)] {
        let err = check(&[x.clone(), w.clone(), b.clone()], |t, v| {
            t.conv2d(v[0], v[1], Some(v[2]), stride, pad)
        });
        assert!(err <= 1e-6, "stride {stride} pad {pad}: {err}");
    }
    let w5 = random(&[2, 2, 5, 5], 23);
    assert!(check(&[x, w5], |t, v| t.conv2d(v[0], v[1], None, 1, 2)) <= 1e-6);
}

#[test]
fn activation_gradients() {
    // keep clear of the relu kink
    let x = random(&[10], 30).map(|v| if v.abs() < 0.05 { v + 0.2 } else { v });
    assert!(check(std::slice::from_ref(&x), |t, v| Ok(t.relu(v[0]))) <= 1e-6);
    assert!(check(std::slice::from_ref(&x), |t, v| Ok(t.sigmoid(v[0]))) <= 1e-6);
    assert!(check(&[x], |t, v| Ok(t.gelu(v[0]))) <= 1e-6);
}

#[test]
fn normalization_gradients() {
    let x = random(&[2, 3, 3, 3], 40);
    let g = random(&[3], 41).map(|v| v + 1.5);
    let b = random(&[3], 42);
    let err = check(&[x, g, b], |t, v| Ok(t.batch_norm(v[0], v[1], v[2], 1e-5)?.0));
    assert!(err <= 1e-5, "batchnorm {err}");

    let x = random(&[2, 4, 6], 43);
    let g = random(&[6], 44).map(|v| v + 1.5);
    let b = random(&[6], 45);
    let err = check(&[x, g, b], |t, v| t.layer_norm(v[0], v[1], v[2], 1e-5));
    assert!(err <= 1e-5, "layernorm {err}");
}

#[test]
fn normalization_statistics() {
    let mut tape = Tape::new();
    let x = tape.constant(random(&[5, 16], 46).map(|v| 3.0 * v + 7.0));
    let g = tape.constant(Tensor::ones(&[16]).unwrap());
    let b = tape.constant(Tensor::zeros(&[16]).unwrap());
    let y = tape.layer_norm(x, g, b, 1e-12).unwrap();
    for row in tape.value(y).data().chunks(16) {
        let mean = row.iter().sum::<f64>() / 16.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
        assert!(mean.abs() <= 1e-7);
        assert!((var - 1.0).abs() <= 1e-5);
    }
    let c = tape.constant(Tensor::full(&[2, 16], 0.7).unwrap());
    let y = tape.layer_norm(c, g, b, 1e-5).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v.abs() <= 1e-9));

    let x = tape.constant(Tensor::full(&[2, 3, 2, 2], -1.25).unwrap());
    let g3 = tape.constant(Tensor::ones(&[3]).unwrap());
    let b3 = tape.constant(Tensor::zeros(&[3]).unwrap());
    let (y, _, _) = tape.batch_norm(x, g3, b3, 1e-5).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v.abs() <= 1e-9));
}

#[test]
fn pooling_gradients() {
    let x = random(&[1, 2, 6, 6], 50);
    assert!(check(std::slice::from_ref(&x), |t, v| t.pool2d(v[0], PoolKind::Max, 3, 1, 1)) <= 1e-6);
    assert!(check(std::slice::from_ref(&x), |t, v| t.pool2d(v[0], PoolKind::Avg, 3, 1, 1)) <= 1e-6);
    assert!(check(std::slice::from_ref(&x), |t, v| t.pool2d(v[0], PoolKind::Avg, 2, 2, 0)) <= 1e-6);
    assert!(check(&[x], |t, v| t.pool2d(v[0], PoolKind::Max, 7, 1, 3)) <= 1e-6);
}

#[test]
fn softmax_gradients() {
    let x = random(&[3, 5], 60);
    assert!(check(std::slice::from_ref(&x), |t, v| t.softmax(v[0], 1)) <= 1e-5);
    assert!(check(&[x], |t, v| t.softmax(v[0], 0)) <= 1e-5);
}

#[test]
fn shape_op_gradients() {
    let x = random(&[2, 3, 4, 4], 70);
    assert!(check(std::slice::from_ref(&x), |t, v| t.reshape(v[0], &[6, 16])) <= 1e-8);
    assert!(check(std::slice::from_ref(&x), |t, v| t.permute(v[0], &[0, 2, 3, 1])) <= 1e-8);
    assert!(check(std::slice::from_ref(&x), |t, v| t.slice_channels(v[0], 1, 2)) <= 1e-8);
    assert!(check(std::slice::from_ref(&x), |t, v| t.patches(v[0], 2)) <= 1e-8);
    assert!(check(std::slice::from_ref(&x), |t, v| t.upsample_bilinear(v[0], 7, 5)) <= 1e-8);
    let y = random(&[2, 5, 4, 4], 71);
    assert!(check(&[x.clone(), y], |t, v| t.concat_channels(&[v[0], v[1], v[0]])) <= 1e-8);
    for kind in [ReduceKind::Sum, ReduceKind::Mean, ReduceKind::Max] {
        assert!(check(std::slice::from_ref(&x), |t, v| t.reduce(v[0], 1, kind)) <= 1e-6);
    }
    let z = random(&[2, 3, 4, 4], 72);
    assert!(check(&[x.clone(), z], |t, v| t.maximum(v[0], v[1])) <= 1e-8);
    let clampable = x.map(|v| if (v - 0.5).abs() < 0.01 { v + 0.05 } else { v });
    assert!(check(&[clampable], |t, v| Ok(t.clamp(v[0], -2.0, 0.5))) <= 1e-8);
}

#[test]
fn whole_toy_network_gradient() {
    // conv -> relu -> linear-free toy net with four scalar parameters
    let x = random(&[1, 1, 4, 4], 80);
    let params = Tensor::new(&[1, 1, 2, 2], vec![0.3, -0.2, 0.5, 0.1]).unwrap();
    let err = grad_check_inputs(
        |t, v| {
            let xin = t.constant(x.clone());
            let w = t.reshape(v[0], &[4])?;
            let w0 = t.slice(w, 0, 0, 1)?;
            let scaled = t.mul(xin, w0)?;
            let w1 = t.slice(w, 0, 1, 1)?;
            let shifted = t.add(scaled, w1)?;
            let s = t.sigmoid(shifted);
            let w2 = t.slice(w, 0, 2, 1)?;
            let y = t.mul(s, w2)?;
            let w3 = t.slice(w, 0, 3, 1)?;
            let y = t.add(y, w3)?;
            let sq = t.mul(y, y)?;
            Ok(t.mean(sq))
        },
        &[params],
        EPS,
        None,
        None,
    )
    .unwrap()
    .max_rel_err;
    assert!(err <= 1e-4, "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn softmax_rows_are_distributions(seed in 0u64..1000, rows in 1usize..5, cols in 1usize..7) {
        let mut tape = Tape::new();
        let x = tape.constant(random(&[rows, cols], seed).map(|v| v * 50.0));
        let y = tape.softmax(x, 1).unwrap();
        for row in tape.value(y).data().chunks(cols) {
            let s: f64 = row.iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-9);
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn conv_gradcheck_on_random_shapes(seed in 0u64..1000, c in 1usize..3, f in 1usize..3, hw in 3usize..6) {
        let x = random(&[1, c, hw, hw], seed);
        let w = random(&[f, c, 3, 3], seed + 1);
        let err = check(&[x, w], |t, v| t.conv2d(v[0], v[1], None, 1, 1));
        prop_assert!(err <= 1e-5);
    }

    #[test]
    fn one_by_one_identity_conv_is_exact(seed in 0u64..1000, c in 1usize..4, hw in 1usize..6) {
        let x = random(&[2, c, hw, hw], seed);
        let mut w = vec![0.0; c * c];
        for i in 0..c { w[i * c + i] = 1.0; }
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let wv = tape.constant(Tensor::new(&[c, c, 1, 1], w).unwrap());
        let y = tape.conv2d(xv, wv, None, 1, 0).unwrap();
        prop_assert_eq!(tape.value(y), &x);
    }

    #[test]
    fn reshape_and_transpose_round_trip(seed in 0u64..1000, a in 1usize..5, b in 1usize..5, c in 1usize..5) {
        let x = random(&[a, b, c], seed);
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let r = tape.reshape(v, &[a * b * c]).unwrap();
        let r = tape.reshape(r, &[a, b, c]).unwrap();
        prop_assert_eq!(tape.value(r), &x);
        let p = tape.transpose(v, 0, 2).unwrap();
        let p = tape.transpose(p, 0, 2).unwrap();
        prop_assert_eq!(tape.value(p), &x);
    }

    #[test]
    fn fan_out_sums_path_gradients(seed in 0u64..1000) {
        let x = random(&[3], seed);
        let mut tape = Tape::new();
        let v = tape.leaf(x);
        let y = tape.add(v, v).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        prop_assert!(g.get(v).unwrap().iter().all(|&d| d == 2.0));
    }
}

#[test]
fn random_small_primitives_meet_tolerance() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for trial in 0..5u64 {
        let n = rng.random_range(1..3);
        let c = rng.random_range(1..4);
        let hw = rng.random_range(3..6);
        let x = random(&[n, c, hw, hw], 100 + trial);
        let errs = [
            check(std::slice::from_ref(&x), |t, v| Ok(t.sigmoid(v[0]))),
            check(std::slice::from_ref(&x), |t, v| t.pool2d(v[0], PoolKind::Avg, 3, 1, 1)),
            check(std::slice::from_ref(&x), |t, v| t.upsample_bilinear(v[0], hw + 2, hw + 3)),
            check(std::slice::from_ref(&x), |t, v| t.softmax(v[0], 1)),
        ];
        for e in errs {
            assert!(e <= 1e-5, "trial {trial}: {e}");
        }
    }
}
