use priorshift::tensor::gradcheck::{check_inputs, Tolerance};
use priorshift::tensor::{Graph, Tensor, Var};
use priorshift::{Error, Result};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    proptest::collection::vec(-2.0f64..2.0, rows * cols)
        .prop_map(move |v| Tensor::new(vec![rows, cols], v).unwrap())
}

/// Values bounded away from zero so relu's kink never sits inside a step.
fn away_from_zero(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    matrix(rows, cols).prop_map(|m| {
        let data = m.data().iter().map(|v| v + 0.05 * v.signum()).collect();
        Tensor::new(m.shape().to_vec(), data).unwrap()
    })
}

/// Distinct values, at least 0.1 apart, so max never ties within a step.
fn well_separated(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    Just((0..rows * cols).collect::<Vec<usize>>())
        .prop_shuffle()
        .prop_map(move |perm| {
            let data = perm.iter().map(|&r| r as f64 * 0.1 - 0.5).collect();
            Tensor::new(vec![rows, cols], data).unwrap()
        })
}

/// Reduces a tensor to a scalar through a fixed random linear functional so
/// that every output coordinate carries a distinct upstream gradient.
fn project(g: &mut Graph, x: Var) -> Result<Var> {
    let n = g.value(x).numel();
    let weights: Vec<f64> = (0..n)
        .map(|i| ((i * 7 + 3) % 11) as f64 / 5.0 - 1.0)
        .collect();
    let shape = g.shape(x).to_vec();
    let w = g.constant(Tensor::new(shape, weights)?);
    let prod = g.mul(x, w)?;
    g.sum(prod)
}

fn assert_grad_ok(inputs: &[Tensor], f: impl Fn(&mut Graph, &[Var]) -> Result<Var>) {
    let report = check_inputs(inputs, Tolerance::PER_OP, f).unwrap();
    assert!(
        report.all_pass(),
        "gradient mismatches: {:?}",
        report.mismatches
    );
}

#[test]
fn matmul_identity_and_projector() {
    let mut g = Graph::new();
    let eye = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let m = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let out = g.matmul(eye, m).unwrap();
    assert_eq!(g.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);

    let p = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 0.0]));
    let b = g.constant(t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]));
    let out = g.matmul(p, b).unwrap();
    assert_eq!(g.value(out).data(), &[5.0, 6.0, 0.0, 0.0]);
}

#[test]
fn matmul_shape_mismatch_is_dimension_error() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    assert!(matches!(g.matmul(a, b), Err(Error::Dimension { .. })));
}

#[test]
fn elementwise_examples() {
    let mut g = Graph::new();
    let x = g.constant(t(&[3], &[-1.0, 0.0, 2.0]));
    let r = g.relu(x).unwrap();
    assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
    let z = g.constant(Tensor::scalar(0.0));
    let th = g.tanh(z).unwrap();
    let sg = g.sigmoid(z).unwrap();
    assert_eq!(g.value(th).item(), 0.0);
    assert_eq!(g.value(sg).item(), 0.5);
}

#[test]
fn incompatible_broadcast_rejected() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[3]));
    assert!(matches!(g.add(a, b), Err(Error::Dimension { .. })));
    // scalars broadcast against anything
    let s = g.constant(Tensor::scalar(2.0));
    let out = g.mul(a, s).unwrap();
    assert_eq!(g.shape(out), &[2, 3]);
}

#[test]
fn softmax_examples() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[4]));
    let s = g.softmax(x).unwrap();
    assert_eq!(g.value(s).data(), &[0.25; 4]);

    let x = g.constant(t(&[2], &[1000.0, 0.0]));
    let s = g.softmax(x).unwrap();
    assert_eq!(g.value(s).data()[0], 1.0);
    assert!(g.value(s).data()[1] < 1e-300);
}

#[test]
fn max_pool_and_lookup() {
    let mut g = Graph::new();
    let x = g.constant(t(&[2, 2], &[1.0, 5.0, 3.0, 2.0]));
    let m = g.max_pool_time(x).unwrap();
    assert_eq!(g.value(m).data(), &[3.0, 5.0]);

    let table = g.constant(t(&[3, 2], &[0.0, 0.0, 1.0, 1.0, 2.0, 2.0]));
    let e = g.embedding_lookup(table, &[2, 1, 2]).unwrap();
    assert_eq!(g.shape(e), &[3, 2]);
    assert_eq!(g.value(e).data(), &[2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
    assert!(matches!(
        g.embedding_lookup(table, &[3]),
        Err(Error::Index {
            index: 3,
            size: 3,
            ..
        })
    ));
}

#[test]
fn dropout_identity_when_not_training() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = Graph::new();
    let x = g.constant(t(&[3], &[0.3, -1.2, 4.0]));
    let y = g.dropout(x, 0.1, false, &mut rng).unwrap();
    assert_eq!(y, x);
    assert!(g.dropout(x, 1.0, true, &mut rng).is_err());
}

#[test]
fn dropout_is_unbiased() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let n = 100_000;
    let mut g = Graph::new();
    let x = g.constant(Tensor::full(&[n], 2.0));
    let y = g.dropout(x, 0.1, true, &mut rng).unwrap();
    let mean = g.value(y).data().iter().sum::<f64>() / n as f64;
    assert!((mean - 2.0).abs() / 2.0 < 0.01, "mean {mean}");
    let dropped = g.value(y).data().iter().filter(|v| **v == 0.0).count();
    assert!((dropped as f64 / n as f64 - 0.1).abs() < 0.01);
}

#[test]
fn backward_simple_cases() {
    let mut g = Graph::new();
    let w = g.variable(Tensor::zeros(&[2, 3]));
    let s = g.sum(w).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(w).unwrap().data(), &[1.0; 6]);

    let mut g = Graph::new();
    let x = g.variable(Tensor::scalar(3.0));
    let sq = g.mul(x, x).unwrap();
    let grads = g.backward(sq).unwrap();
    assert_eq!(grads.get(x).unwrap().item(), 6.0);
}

#[test]
fn backward_contract_errors() {
    let mut g = Graph::new();
    let x = g.variable(Tensor::zeros(&[2]));
    let y = g.tanh(x).unwrap();
    assert!(matches!(g.backward(y), Err(Error::Contract(_))));

    let s = g.sum(y).unwrap();
    g.backward(s).unwrap();
    assert!(matches!(g.backward(s), Err(Error::Contract(_))));
}

#[test]
fn matmul_sum_gradient_matches_finite_differences() {
    let a = t(&[2, 3], &[0.1, -0.4, 0.7, 1.2, 0.3, -0.9]);
    let b = t(&[3, 2], &[0.5, -1.0, 0.25, 0.8, -0.6, 0.4]);
    assert_grad_ok(&[a, b], |g, v| {
        let m = g.matmul(v[0], v[1])?;
        g.sum(m)
    });
}

#[test]
fn softmax_rows_are_distributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    use rand::Rng;
    let data: Vec<f64> = (0..60).map(|_| rng.gen_range(-30.0..30.0)).collect();
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![15, 4], data).unwrap());
    let s = g.softmax(x).unwrap();
    for row in g.value(s).data().chunks(4) {
        assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
        assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn grad_matmul(a in matrix(3, 4), b in matrix(4, 2)) {
        assert_grad_ok(&[a, b], |g, v| {
            let m = g.matmul(v[0], v[1])?;
            project(g, m)
        });
    }

    #[test]
    fn grad_add_sub_mul(a in matrix(3, 4), b in matrix(3, 4)) {
        assert_grad_ok(&[a, b], |g, v| {
            let s = g.add(v[0], v[1])?;
            let d = g.sub(s, v[1])?;
            let m = g.mul(d, v[1])?;
            project(g, m)
        });
    }

    #[test]
    fn grad_scalar_broadcast(a in matrix(3, 4), s in -2.0f64..2.0) {
        assert_grad_ok(&[a, Tensor::scalar(s)], |g, v| {
            let m = g.mul(v[0], v[1])?;
            let p = g.add(v[1], m)?;
            let q = g.sub(p, v[1])?;
            project(g, q)
        });
    }

    #[test]
    fn grad_add_bias_and_scale(a in matrix(3, 4), b in matrix(1, 4)) {
        let b = b.reshape(vec![4]).unwrap();
        assert_grad_ok(&[a, b], |g, v| {
            let y = g.add_bias(v[0], v[1])?;
            let y = g.scale(y, -1.5)?;
            project(g, y)
        });
    }

    #[test]
    fn grad_tanh_sigmoid(a in matrix(3, 4)) {
        assert_grad_ok(&[a.clone()], |g, v| {
            let y = g.tanh(v[0])?;
            project(g, y)
        });
        assert_grad_ok(&[a], |g, v| {
            let y = g.sigmoid(v[0])?;
            project(g, y)
        });
    }

    #[test]
    fn grad_relu(a in away_from_zero(3, 4)) {
        assert_grad_ok(&[a], |g, v| {
            let y = g.relu(v[0])?;
            project(g, y)
        });
    }

    #[test]
    fn grad_softmax_and_log_softmax(a in matrix(3, 4), x in matrix(1, 4)) {
        assert_grad_ok(&[x], |g, v| {
            let y = g.softmax(v[0])?;
            project(g, y)
        });
        assert_grad_ok(&[a.clone()], |g, v| {
            let y = g.log_softmax(v[0])?;
            project(g, y)
        });
        assert_grad_ok(&[a], |g, v| {
            let y = g.softmax_axis(v[0], 0)?;
            project(g, y)
        });
    }

    #[test]
    fn grad_concat_slice_reshape(a in matrix(3, 4), b in matrix(3, 2)) {
        assert_grad_ok(&[a, b], |g, v| {
            let c = g.concat(&[v[0], v[1], v[0]], 1)?;
            let s = g.slice(c, 1, 2, 5)?;
            let r = g.reshape(s, &[5, 3])?;
            let c0 = g.concat(&[r, r], 0)?;
            project(g, c0)
        });
    }

    #[test]
    fn grad_embedding_lookup(table in matrix(5, 3), ids in proptest::collection::vec(0usize..5, 1..6)) {
        assert_grad_ok(&[table], |g, v| {
            let e = g.embedding_lookup(v[0], &ids)?;
            project(g, e)
        });
    }

    #[test]
    fn grad_max_and_sum_axis(a in well_separated(3, 4), b in matrix(2, 6)) {
        assert_grad_ok(&[a], |g, v| {
            let m0 = g.max_axis(v[0], 0)?;
            let m1 = g.max_axis(v[0], 1)?;
            let p0 = project(g, m0)?;
            let p1 = project(g, m1)?;
            g.add(p0, p1)
        });
        assert_grad_ok(&[b], |g, v| {
            let r = g.reshape(v[0], &[2, 3, 2])?;
            let s = g.sum_axis(r, 1)?;
            project(g, s)
        });
    }

    #[test]
    fn grad_pick_and_mask(a in matrix(3, 4), cols in proptest::collection::vec(0usize..4, 3)) {
        assert_grad_ok(&[a], |g, v| {
            let m = g.mul_mask(v[0], (0..12).map(|i| (i % 3) as f64).collect())?;
            let p = g.pick(m, &cols)?;
            project(g, p)
        });
    }

    #[test]
    fn grad_attention_pattern(states in matrix(3, 4), logits in matrix(3, 4)) {
        assert_grad_ok(&[states, logits], |g, v| {
            let w = g.softmax_axis(v[1], 0)?;
            let weighted = g.mul(w, v[0])?;
            let pooled = g.sum_axis(weighted, 0)?;
            project(g, pooled)
        });
    }
}
