use proptest::prelude::*;
use rand::Rng;
use topicsteer_core::autodiff::{Tape, Var};
use topicsteer_core::error::Error;
use topicsteer_core::gradcheck::finite_difference_check;
use topicsteer_core::optim::{Adam, ParamSet};
use topicsteer_core::rng::{normal_vec, rng_from};
use topicsteer_core::Tensor;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn rand_t(seed: u64, shape: &[usize], std: f64) -> Tensor {
    let mut rng = rng_from(seed, &[shape.iter().product::<usize>() as u64]);
    Tensor::new(shape.to_vec(), normal_vec(&mut rng, shape.iter().product(), std)).unwrap()
}

#[test]
fn softmax_of_zeros_is_uniform() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[3], &[0.0, 0.0, 0.0]));
    let y = tape.softmax(x).unwrap();
    for &p in tape.value(y) {
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn kl_of_identical_gaussians_is_zero() {
    let mut tape = Tape::new();
    let mu = tape.constant(t(&[1, 3], &[0.3, -1.0, 2.0]));
    let lv = tape.constant(t(&[1, 3], &[0.1, -0.5, 1.5]));
    let kl = tape.kl_gaussian(mu, lv, mu, lv).unwrap();
    assert!(tape.value(kl)[0].abs() < 1e-12);
}

#[test]
fn matmul_of_ones() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::full(&[2, 3], 1.0));
    let b = tape.constant(Tensor::full(&[3, 2], 1.0));
    let c = tape.matmul(a, b).unwrap();
    assert_eq!(tape.shape(c), &[2, 2]);
    assert_eq!(tape.value(c), &[3.0; 4]);
}

#[test]
fn backward_simple_cases() {
    let mut tape = Tape::new();
    let x = tape.variable(t(&[4], &[1.0, -2.0, 3.5, 0.0]));
    let s = tape.sum(x).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap(), &[1.0; 4]);

    let mut tape = Tape::new();
    let x = tape.variable(Tensor::scalar(3.0).unwrap());
    let sq = tape.mul(x, x).unwrap();
    let g = tape.backward(sq).unwrap();
    assert_eq!(g.get(x).unwrap(), &[6.0]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut tape = Tape::new();
    let x = tape.variable(t(&[2], &[1.0, 2.0]));
    let y = tape.tanh(x).unwrap();
    assert!(matches!(tape.backward(y), Err(Error::NonScalarLoss(_))));
}

#[test]
fn shape_and_finiteness_errors() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    assert!(matches!(tape.matmul(a, b), Err(Error::ShapeMismatch { .. })));
    let c = tape.constant(Tensor::zeros(&[4]));
    assert!(matches!(tape.add(a, c), Err(Error::ShapeMismatch { .. })));
    assert!(matches!(Tensor::new(vec![1], vec![f64::NAN]), Err(Error::NonFinite(_))));
    let big = tape.constant(t(&[1], &[1000.0]));
    assert!(matches!(tape.exp(big), Err(Error::NonFinite(_))));
}

#[test]
fn broadcast_add_row() {
    let mut tape = Tape::new();
    let x = tape.variable(Tensor::zeros(&[3, 2]));
    let b = tape.variable(t(&[2], &[1.0, -1.0]));
    let y = tape.add(x, b).unwrap();
    assert_eq!(tape.value(y), &[1.0, -1.0, 1.0, -1.0, 1.0, -1.0]);
    let s = tape.sum(y).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(b).unwrap(), &[3.0, 3.0]);
}

#[test]
fn two_layer_net_matches_finite_differences() {
    let x = rand_t(1, &[5, 4], 1.0);
    let w2 = rand_t(2, &[6, 3], 0.5);
    let b1 = rand_t(3, &[6], 0.1);
    let targets = [Some(0), Some(2), None, Some(1), Some(2)];
    let net = |tape: &mut Tape<'_>, w: Var| -> topicsteer_core::Result<Var> {
        let xv = tape.constant(x.clone());
        let h = tape.matmul(xv, w)?;
        let bv = tape.constant(b1.clone());
        let h = tape.add(h, bv)?;
        let h = tape.tanh(h)?;
        let w2v = tape.constant(w2.clone());
        let logits = tape.matmul(h, w2v)?;
        tape.cross_entropy(logits, &targets)
    };
    let w1 = rand_t(4, &[4, 6], 0.5);
    let err = finite_difference_check(net, &w1, 1e-5).unwrap();
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn finite_difference_examples() {
    let x = rand_t(9, &[3, 3], 1.0);
    let err = finite_difference_check(|tape, v| tape.sum(v), &x, 1e-5).unwrap();
    assert!(err < 1e-10, "{err}");

    let targets = [Some(1), Some(0), Some(2)];
    let err = finite_difference_check(
        |tape, v| {
            let p = tape.softmax(v)?;
            let p = tape.add_scalar(p, 0.0)?;
            tape.cross_entropy(p, &targets)
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");

    let err = finite_difference_check(
        |tape, _v| {
            let c = tape.constant(Tensor::scalar(2.5).unwrap());
            Ok(c)
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-12);
}

fn check_unary(f: impl Fn(&mut Tape<'_>, Var) -> topicsteer_core::Result<Var>, shape: &[usize], seed: u64) {
    let x = rand_t(seed, shape, 1.0);
    let err = finite_difference_check(
        |tape, v| {
            let y = f(tape, v)?;
            let out_shape = tape.shape(y).to_vec();
            let wv = tape.constant(rand_t(seed + 100, &out_shape, 1.0));
            let y = tape.mul(y, wv)?;
            tape.sum(y)
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn primitive_gradients() {
    check_unary(|t, v| t.tanh(v), &[3, 4], 1);
    check_unary(|t, v| t.softplus(v), &[3, 4], 2);
    check_unary(|t, v| t.gelu(v), &[3, 4], 3);
    check_unary(|t, v| t.exp(v), &[3, 4], 4);
    check_unary(|t, v| t.softmax(v), &[3, 4], 5);
    check_unary(|t, v| t.log_softmax(v), &[3, 4], 6);
    check_unary(|t, v| t.transpose(v), &[3, 4], 7);
    check_unary(
        |t, v| {
            let g = t.constant(rand_t(70, &[4], 1.0));
            let b = t.constant(rand_t(71, &[4], 1.0));
            t.layer_norm(v, g, b)
        },
        &[3, 4],
        8,
    );
    check_unary(
        |t, v| {
            let m = t.constant(rand_t(80, &[4, 4], 1.0));
            let a = t.matmul(v, m)?;
            t.matmul_t(a, v)
        },
        &[3, 4],
        9,
    );
    check_unary(
        |t, v| {
            let c = t.constant(rand_t(90, &[2, 4], 1.0));
            let cat = t.concat(&[v, c, v], 0)?;
            let cat2 = t.concat(&[cat, cat], 1)?;
            let m = t.mean_axis(cat2, 0)?;
            let r = t.rows(v, 1, 2)?;
            let r = t.reshape(r, &[8])?;
            let m = t.concat(&[m, r], 0)?;
            t.reshape(m, &[16])
        },
        &[3, 4],
        10,
    );
}

#[test]
fn attention_embedding_kl_gradients() {
    let k = rand_t(11, &[5, 8], 1.0);
    let v = rand_t(12, &[5, 8], 1.0);
    check_unary(
        |t, q| {
            let kv = t.constant(k.clone());
            let vv = t.constant(v.clone());
            let kq = t.add(kv, vv)?;
            let rows = t.rows(q, 0, 3)?;
            let keys = t.concat(&[kq, rows], 0)?;
            let vals = t.concat(&[vv, q], 0)?;
            let vals = t.rows(vals, 0, 8)?;
            t.attention(rows, keys, vals, 2, 5)
        },
        &[3, 8],
        13,
    );
    let q = rand_t(14, &[3, 8], 1.0);
    check_unary(
        |t, kk| {
            let qv = t.constant(q.clone());
            let vv = t.mul(kk, kk)?;
            t.attention(qv, kk, vv, 4, 2)
        },
        &[5, 8],
        15,
    );
    check_unary(
        |t, table| {
            let e = t.embedding(table, &[2, 0, 2, 3])?;
            t.tanh(e)
        },
        &[4, 3],
        16,
    );
    let other = rand_t(17, &[2, 3], 0.5);
    check_unary(
        |t, x| {
            let o = t.constant(other.clone());
            let a = t.kl_gaussian(x, o, o, x)?;
            let b = t.kl_gaussian(o, x, x, o)?;
            let s = t.add(a, b)?;
            t.reshape(s, &[2])
        },
        &[2, 3],
        18,
    );
}

#[test]
fn adam_examples() {
    // zero gradients leave parameters untouched
    let mut ps = ParamSet::new();
    ps.push("w", t(&[3], &[1.0, -2.0, 0.5]));
    ps.zero_grad();
    let mut opt = Adam::with_lr(0.1).unwrap();
    opt.step(&mut ps).unwrap();
    assert_eq!(ps.value(0).data(), &[1.0, -2.0, 0.5]);

    // first step with g = 1 moves by lr / (1 + eps/sqrt(vhat)) ~ lr
    let mut ps = ParamSet::new();
    ps.push("x", Tensor::scalar(0.0).unwrap());
    ps.zero_grad();
    ps.iter_mut().next().unwrap().grad = Some(vec![1.0]);
    let mut opt = Adam::new(0.1, (0.9, 0.999), 1e-8).unwrap();
    opt.step(&mut ps).unwrap();
    let expected = -0.1 / (1.0 + 1e-8);
    assert!((ps.value(0).data()[0] - expected).abs() < 1e-15);

    // missing gradients are an error
    let mut ps = ParamSet::new();
    ps.push("x", Tensor::scalar(0.0).unwrap());
    assert!(matches!(opt.step(&mut ps), Err(Error::MissingGrad(0))));
}

#[test]
fn adam_descends_a_quadratic() {
    let mut ps = ParamSet::new();
    ps.push("x", Tensor::scalar(5.0).unwrap());
    let mut opt = Adam::with_lr(0.1).unwrap();
    let mut prev = 5.0f64;
    for step in 0..200 {
        ps.zero_grad();
        let mut tape = Tape::new();
        let vars = ps.bind(&mut tape, true);
        let sq = tape.mul(vars[0], vars[0]).unwrap();
        let g = tape.backward(sq).unwrap();
        drop(tape);
        ps.accumulate(&vars, &g);
        opt.step(&mut ps).unwrap();
        let x = ps.value(0).data()[0];
        if step < 40 {
            assert!(x.abs() < prev, "step {step}: {x} vs {prev}");
        }
        prev = x.abs();
    }
    assert!(prev < 0.5);
}

#[test]
fn gradients_accumulate_until_zeroed() {
    let mut ps = ParamSet::new();
    ps.push("x", Tensor::scalar(2.0).unwrap());
    for _ in 0..2 {
        let mut tape = Tape::new();
        let vars = ps.bind(&mut tape, true);
        let sq = tape.mul(vars[0], vars[0]).unwrap();
        let g = tape.backward(sq).unwrap();
        drop(tape);
        ps.accumulate(&vars, &g);
    }
    assert_eq!(ps.get(0).grad.as_deref(), Some(&[8.0][..]));
    ps.zero_grad();
    assert_eq!(ps.get(0).grad.as_deref(), Some(&[0.0][..]));
}

#[test]
fn deterministic_results() {
    let run = || {
        let mut rng = rng_from(5, &[1]);
        let x = Tensor::new(vec![4, 4], (0..16).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let mut tape = Tape::new();
        let v = tape.variable(x);
        let s = tape.softmax(v).unwrap();
        let m = tape.matmul(s, v).unwrap();
        let l = tape.sum(m).unwrap();
        let g = tape.backward(l).unwrap();
        (tape.value(l).to_vec(), g.get(v).unwrap().to_vec())
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn softmax_is_a_positive_distribution(xs in prop::collection::vec(-30.0f64..30.0, 1..20)) {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(xs).unwrap());
        let y = tape.softmax(x).unwrap();
        let s: f64 = tape.value(y).iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
        prop_assert!(tape.value(y).iter().all(|&p| p > 0.0));
    }

    #[test]
    fn gaussian_kl_is_nonnegative(
        a in prop::collection::vec(-3.0f64..3.0, 4),
        b in prop::collection::vec(-3.0f64..3.0, 4),
        c in prop::collection::vec(-3.0f64..3.0, 4),
        d in prop::collection::vec(-3.0f64..3.0, 4),
    ) {
        let mut tape = Tape::new();
        let vs: Vec<Var> = [a, b, c, d].into_iter().map(|v| tape.constant(Tensor::new(vec![1, 4], v).unwrap())).collect();
        let kl = tape.kl_gaussian(vs[0], vs[1], vs[2], vs[3]).unwrap();
        prop_assert!(tape.value(kl)[0] >= -1e-12);
        let same = tape.kl_gaussian(vs[0], vs[1], vs[0], vs[1]).unwrap();
        prop_assert!(tape.value(same)[0].abs() < 1e-12);
    }
}
