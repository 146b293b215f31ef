use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{central_difference, check_op, FD_STEP};
use super::*;
use crate::Error;

const OP_TOL: f64 = 1e-5;
const INSTANCES: u64 = 20;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape, data.to_vec()).unwrap()
}

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::uniform(shape, 1.0, rng)
}

/// Runs `check_op` on `INSTANCES` random draws of the given input shapes.
fn sweep(shapes: &[&[usize]], build: impl Fn(&mut Tape, &[Var]) -> Result<Var>) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs: Vec<Tensor> = shapes.iter().map(|s| rand_t(&mut rng, s)).collect();
        let report = check_op(&inputs, seed + 100, &build).unwrap();
        assert!(report.checked > 0);
        worst = worst.max(report.max_rel_error);
    }
    worst
}

macro_rules! grad_test {
    ($name:ident, [$($shape:expr),+], |$tape:ident, $v:ident| $body:expr) => {
        #[test]
        fn $name() {
            let err = sweep(&[$(&$shape),+], |$tape: &mut Tape, $v: &[Var]| $body);
            assert!(err < OP_TOL, "max relative error {err:e}");
        }
    };
}

grad_test!(grad_add, [[3, 4], [3, 4]], |tp, v| tp.add(v[0], v[1]));
grad_test!(grad_sub, [[2, 5], [2, 5]], |tp, v| tp.sub(v[0], v[1]));
grad_test!(grad_mul, [[4, 3], [4, 3]], |tp, v| tp.mul(v[0], v[1]));
grad_test!(grad_add_bias, [[2, 3, 4], [4]], |tp, v| tp.add_bias(v[0], v[1]));
grad_test!(grad_scale, [[5]], |tp, v| tp.scale(v[0], -2.5));
grad_test!(grad_relu, [[6, 5]], |tp, v| tp.relu(v[0]));
grad_test!(grad_sigmoid, [[3, 7]], |tp, v| tp.sigmoid(v[0]));
grad_test!(grad_tanh, [[3, 7]], |tp, v| tp.tanh(v[0]));
grad_test!(grad_matmul, [[3, 4], [4, 2]], |tp, v| tp.matmul(v[0], v[1]));
grad_test!(grad_matmul_flat_batch, [[2, 3, 4], [4, 5]], |tp, v| tp.matmul(v[0], v[1]));
grad_test!(grad_matmul_batched, [[2, 3, 3, 4], [2, 3, 4, 2]], |tp, v| tp.matmul(v[0], v[1]));
grad_test!(grad_matmul_broadcast, [[2, 3, 4], [1, 4, 2]], |tp, v| tp.matmul(v[0], v[1]));
grad_test!(grad_permute, [[2, 3, 4]], |tp, v| tp.permute(v[0], &[2, 0, 1]));
grad_test!(grad_transpose, [[2, 3, 4]], |tp, v| tp.transpose(v[0], 1, 2));
grad_test!(grad_reshape, [[2, 6]], |tp, v| tp.reshape(v[0], &[3, 4]));
grad_test!(grad_flatten, [[2, 3, 2]], |tp, v| tp.flatten(v[0]));
grad_test!(grad_softmax_last, [[3, 5]], |tp, v| tp.softmax(v[0], 1));
grad_test!(grad_softmax_inner, [[3, 4, 2]], |tp, v| tp.softmax(v[0], 1));
grad_test!(grad_layer_norm, [[4]], |tp, v| tp.layer_norm(v[0], 0, 1e-5));
grad_test!(grad_layer_norm_rows, [[3, 6]], |tp, v| tp.layer_norm(v[0], 1, 1e-5));
grad_test!(grad_mean, [[3, 4, 2]], |tp, v| tp.mean(v[0], 1));
grad_test!(grad_weighted_sum, [[2, 3, 4], [3]], |tp, v| tp.weighted_sum(v[0], v[1], 1));
grad_test!(grad_sum, [[3, 3]], |tp, v| tp.sum(v[0]));
grad_test!(grad_concat, [[2, 3], [2, 1], [2, 2]], |tp, v| tp.concat(v, 1));
grad_test!(grad_slice, [[4, 5]], |tp, v| tp.slice(v[0], 1, 1, 3));
grad_test!(grad_select, [[3, 4, 2]], |tp, v| tp.select(v[0], 1, 2));
grad_test!(grad_conv1d, [[5, 2], [3, 2, 3]], |tp, v| tp.conv1d(v[0], v[1]));
grad_test!(grad_conv1d_batched, [[2, 4, 3], [3, 3, 2]], |tp, v| tp.conv1d(v[0], v[1]));
grad_test!(grad_conv3d, [[2, 3, 5, 4, 2], [3, 3, 3, 2, 3]], |tp, v| tp.conv3d(v[0], v[1]));
grad_test!(grad_cross_entropy, [[4, 2]], |tp, v| tp.cross_entropy(v[0], &[0, 1, 1, 0]));

#[test]
fn matmul_identity_examples() {
    let mut tape = Tape::new();
    let a = tape.constant(t(&[2, 2], &[1., 2., 3., 4.]));
    let i = tape.constant(Tensor::eye(2));
    let y = tape.matmul(a, i).unwrap();
    assert_eq!(tape.value(y).data(), &[1., 2., 3., 4.]);

    let b = tape.constant(t(&[2, 1], &[5., 7.]));
    let y = tape.matmul(i, b).unwrap();
    assert_eq!(tape.value(y).shape(), &[2, 1]);
    assert_eq!(tape.value(y).data(), &[5., 7.]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[4, 2]));
    let msg = tape.matmul(a, b).unwrap_err().to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let b = t(&[2, 1], &[3., 4.]);
    let mut tape = Tape::new();
    let a = tape.leaf(t(&[1, 2], &[1., 2.]), true);
    let bv = tape.constant(b.clone());
    let y = tape.matmul(a, bv).unwrap();
    let loss = tape.sum(y).unwrap();
    let grads = tape.backward(loss).unwrap();
    let analytic = grads.get(a).unwrap().to_vec();

    let numeric = central_difference(
        |x| Ok(x[0] * b.data()[0] + x[1] * b.data()[1]),
        &[1., 2.],
        FD_STEP,
    )
    .unwrap();
    for (a, n) in analytic.iter().zip(&numeric) {
        assert!((a - n).abs() < 1e-6);
    }
    assert!((analytic[0] - 3.0).abs() < 1e-12 && (analytic[1] - 4.0).abs() < 1e-12);
}

#[test]
fn softmax_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[4]));
    let y = tape.softmax(x, 0).unwrap();
    assert_eq!(tape.value(y).data(), &[0.25; 4]);

    let x = tape.constant(t(&[2], &[1000., 1000.]));
    let y = tape.softmax(x, 0).unwrap();
    assert_eq!(tape.value(y).data(), &[0.5, 0.5]);

    let x = tape.constant(t(&[2], &[0., 3f64.ln()]));
    let y = tape.softmax(x, 0).unwrap();
    let d = tape.value(y).data();
    assert!((d[0] - 0.25).abs() < 1e-15 && (d[1] - 0.75).abs() < 1e-15);
}

#[test]
fn layer_norm_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[2], &[1., 3.]));
    let y = tape.layer_norm(x, 0, 1e-5).unwrap();
    let d = tape.value(y).data();
    // variance 1 plus epsilon under the root
    let expect = 1.0 / (1.0f64 + 1e-5).sqrt();
    assert!((d[0] + expect).abs() < 1e-12 && (d[1] - expect).abs() < 1e-12);
    assert!((d[1] - 1.0).abs() < 1e-5);

    let x = tape.constant(Tensor::full(&[4], 5.0));
    let y = tape.layer_norm(x, 0, 1e-5).unwrap();
    assert_eq!(tape.value(y).data(), &[0.0; 4]);

    let x = tape.constant(Tensor::zeros(&[3, 1]));
    assert!(tape.layer_norm(x, 1, 1e-5).is_err());
}

#[test]
fn conv1d_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[3, 1], &[1., 2., 3.]));
    let k = tape.constant(t(&[3, 1, 1], &[1., 1., 1.]));
    let y = tape.conv1d(x, k).unwrap();
    assert_eq!(tape.value(y).shape(), &[1, 1]);
    assert_eq!(tape.value(y).data(), &[6.0]);

    let short = tape.constant(Tensor::zeros(&[2, 1]));
    assert!(matches!(tape.conv1d(short, k), Err(Error::Shape { .. })));
}

#[test]
fn conv3d_matches_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (s, tt, w, h, ci, co) = (1, 3, 5, 4, 2, 3);
    let x = rand_t(&mut rng, &[s, tt, w, h, ci]);
    let k = rand_t(&mut rng, &[3, 3, 3, ci, co]);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let kv = tape.constant(k.clone());
    let y = tape.conv3d(xv, kv).unwrap();
    let (wo, ho) = (w.div_ceil(2), h.div_ceil(2));
    assert_eq!(tape.value(y).shape(), &[s, tt, wo, ho, co]);
    let xd = x.data();
    let kd = k.data();
    let at = |t: isize, i: isize, j: isize, c: usize| -> f64 {
        if t < 0 || i < 0 || j < 0 || t >= tt as isize || i >= w as isize || j >= h as isize {
            return 0.0;
        }
        xd[(((t as usize * w) + i as usize) * h + j as usize) * ci + c]
    };
    for t0 in 0..tt {
        for i in 0..wo {
            for j in 0..ho {
                for o in 0..co {
                    let mut acc = 0.0;
                    for dt in 0..3 {
                        for di in 0..3 {
                            for dj in 0..3 {
                                for c in 0..ci {
                                    let kk = kd[(((dt * 3 + di) * 3 + dj) * ci + c) * co + o];
                                    acc += kk
                                        * at(
                                            t0 as isize + dt as isize - 1,
                                            (2 * i + di) as isize - 1,
                                            (2 * j + dj) as isize - 1,
                                            c,
                                        );
                                }
                            }
                        }
                    }
                    let got = tape.value(y).data()[((t0 * wo + i) * ho + j) * co + o];
                    assert!((got - acc).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn backward_examples() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[3], &[1., 2., 3.]), true);
    let sq = tape.mul(x, x).unwrap();
    let loss = tape.sum(sq).unwrap();
    let grads = tape.backward(loss).unwrap();
    assert_eq!(grads.get(x).unwrap(), &[2., 4., 6.]);

    let mut tape = Tape::new();
    let x = tape.leaf(t(&[2], &[1., 2.]), true);
    let c = tape.constant(t(&[2], &[4., 5.]));
    let loss = tape.sum(c).unwrap();
    let grads = tape.backward(loss).unwrap();
    assert_eq!(grads.get(x).unwrap(), &[0., 0.]);
}

#[test]
fn backward_contract_errors() {
    let mut tape = Tape::new();
    let dummy = Var(0);
    assert!(matches!(tape.backward(dummy), Err(Error::Contract(_))));

    let x = tape.leaf(t(&[2], &[1., 2.]), true);
    assert!(matches!(tape.backward(x), Err(Error::Contract(_))));

    let loss = tape.sum(x).unwrap();
    tape.backward(loss).unwrap();
    assert!(matches!(tape.backward(loss), Err(Error::State(_))));
    tape.reset();
    let x = tape.leaf(t(&[2], &[1., 2.]), true);
    let loss = tape.sum(x).unwrap();
    assert!(tape.backward(loss).is_ok());
}

#[test]
fn non_finite_results_are_errors() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[1], &[1e308]));
    let y = tape.scale(x, 10.0);
    assert!(matches!(y, Err(Error::NonFinite { .. })));
}

#[test]
fn cross_entropy_of_uniform_logits_is_ln2() {
    for target in [0, 1] {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 2]));
        let l = tape.cross_entropy(x, &[target]).unwrap();
        assert!((tape.value(l).item().unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
    }
}

#[test]
fn outputs_are_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = rand_t(&mut rng, &[3, 8, 8]);
        let b = rand_t(&mut rng, &[8, 5]);
        let mut tape = Tape::new();
        let (a, b) = (tape.constant(a), tape.constant(b));
        let y = tape.matmul(a, b).unwrap();
        let y = tape.softmax(y, 2).unwrap();
        tape.value(y).clone()
    };
    let (x, y) = (run(), run());
    assert!(x.data().iter().zip(y.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn rejects_malformed_tensors() {
    assert!(Tensor::new(&[2, 2], vec![0.0; 3]).is_err());
    assert!(Tensor::new(&[2, 0], vec![]).is_err());
}

proptest! {
    #[test]
    fn softmax_slices_sum_to_one(rows in 1usize..5, cols in 1usize..9, seed in any::<u64>(), scale in 0.1f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::uniform(&[rows, cols], scale, &mut rng);
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let y = tape.softmax(xv, 1).unwrap();
        for row in tape.value(y).data().chunks(cols) {
            let s: f64 = row.iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-12);
            prop_assert!(row.iter().all(|&p| p > 0.0 && p <= 1.0));
        }
    }

    #[test]
    fn layer_norm_moments(len in 2usize..40, seed in any::<u64>(), scale in 1.0f64..100.0, shift in -50.0f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..len).map(|_| shift + scale * rng.random_range(-1.0..1.0)).collect();
        let n = len as f64;
        let mu = data.iter().sum::<f64>() / n;
        let var_in = data.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(&[len], data).unwrap());
        let y = tape.layer_norm(x, 0, 1e-5).unwrap();
        let out = tape.value(y).data();
        let mean = out.iter().sum::<f64>() / n;
        let var = out.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        prop_assert!(mean.abs() < 1e-10);
        // the epsilon under the root shrinks the variance to σ²/(σ²+ε)
        prop_assert!((var - var_in / (var_in + 1e-5)).abs() < 1e-8);
    }

    #[test]
    fn reshape_and_transpose_round_trip(a in 1usize..5, b in 1usize..5, c in 1usize..5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::uniform(&[a, b, c], 1.0, &mut rng);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let r = tape.reshape(xv, &[a * b * c]).unwrap();
        let r = tape.reshape(r, &[a, b, c]).unwrap();
        let tt = tape.transpose(r, 0, 2).unwrap();
        let tt = tape.transpose(tt, 0, 2).unwrap();
        prop_assert_eq!(tape.value(tt), &x);
    }
}

