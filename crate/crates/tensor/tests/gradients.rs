//! Analytic gradients against central finite differences.

use std::sync::Arc;

use aligned_tensor::gradcheck::relative_error;
use aligned_tensor::{gradient_check, gradient_check_against, Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Reduces any tensor to a scalar through a fixed random projection so the
/// upstream gradient is not uniform.
fn project(g: &mut Graph, v: Var, rng: &mut ChaCha8Rng) -> Var {
    let shape = g.value(v).shape().to_vec();
    let w = g.input(random(&shape, rng));
    let flat_v = g.reshape(v, vec![1, shape.iter().product()]).unwrap();
    let flat_w = g.reshape(w, vec![1, shape.iter().product()]).unwrap();
    // Σ v·w = ⟨v, w⟩ computed via an FC against a column vector.
    let n = shape.iter().product();
    let col = g.reshape(flat_w, vec![n, 1]).unwrap();
    let zero = g.input(Tensor::zeros(&[1]));
    let out = g.fully_connected(flat_v, col, zero).unwrap();
    g.sum(out).unwrap()
}

fn check(name: &str, build: impl Fn(&mut Graph, &mut ChaCha8Rng) -> Var) {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::new();
        let out = build(&mut g, &mut rng);
        let loss = project(&mut g, out, &mut rng);
        let report = gradient_check(&mut g, loss, EPS).unwrap();
        assert!(
            report.passes(TOL),
            "{name} seed {seed}: {:?}",
            report.worst()
        );
    }
}

#[test]
fn fully_connected_gradients() {
    check("fc", |g, rng| {
        let x = g.param(random(&[3, 4], rng));
        let w = g.param(random(&[4, 5], rng));
        let b = g.param(random(&[5], rng));
        g.fully_connected(x, w, b).unwrap()
    });
}

#[test]
fn conv1d_gradients() {
    check("conv1d", |g, rng| {
        let x = g.param(random(&[2, 3, 7], rng));
        let k = g.param(random(&[4, 3, 5], rng));
        let b = g.param(random(&[4], rng));
        g.conv1d_same(x, k, b).unwrap()
    });
}

#[test]
fn conv2d_gradients() {
    for stride in [1, 2, 3] {
        check("conv2d", |g, rng| {
            let x = g.param(random(&[2, 2, 6, 5], rng));
            let k = g.param(random(&[3, 2, 3, 3], rng));
            let b = g.param(random(&[3], rng));
            g.conv2d_same(x, k, b, stride).unwrap()
        });
    }
}

#[test]
fn pooling_gradients() {
    check("maxpool1d", |g, rng| {
        let x = g.param(random(&[2, 3, 11], rng));
        g.maxpool1d(x, 3).unwrap()
    });
    check("maxpool2d", |g, rng| {
        let x = g.param(random(&[1, 2, 7, 7], rng));
        g.maxpool2d(x, 3, 2).unwrap()
    });
}

#[test]
fn activation_gradients() {
    check("relu", |g, rng| {
        let x = g.param(random(&[4, 6], rng));
        g.relu(x).unwrap()
    });
    check("softmax", |g, rng| {
        let x = g.param(random(&[3, 5], rng).map(|v| 3.0 * v));
        g.softmax(x).unwrap()
    });
}

#[test]
fn cosine_gradients() {
    check("cosine", |g, rng| {
        let a = g.param(random(&[4, 6], rng));
        let b = g.param(random(&[4, 6], rng));
        g.cosine_similarity(a, b).unwrap()
    });
}

#[test]
fn kl_gradients() {
    check("kl", |g, rng| {
        let p = {
            let raw = random(&[3, 5], rng).map(|v| v.abs() + 0.05);
            let mut rows = vec![];
            for r in 0..3 {
                let z: f64 = raw.row(r).iter().sum();
                rows.push(raw.row(r).iter().map(|v| v / z).collect::<Vec<_>>());
            }
            Tensor::from_rows(&rows).unwrap()
        };
        let logits = g.param(random(&[3, 5], rng));
        let q = g.softmax(logits).unwrap();
        g.kl_divergence(Arc::new(p), q).unwrap()
    });
}

#[test]
fn elementwise_and_gather_gradients() {
    check("composite", |g, rng| {
        let a = g.param(random(&[3, 4], rng));
        let b = g.param(random(&[3, 4], rng));
        let d = g.sub(a, b).unwrap();
        let s = g.scale(d, -1.7).unwrap();
        let s = g.add_scalar(s, 0.3).unwrap();
        let rows = g.gather_rows(s, &[2, 0, 2, 1]).unwrap();
        let e = g.add(rows, rows).unwrap();
        let m = g.mean(e).unwrap();
        let m = g.reshape(m, vec![1]).unwrap();
        let m2 = g.reshape(m, vec![1, 1]).unwrap();
        g.flatten(m2).unwrap()
    });
}

#[test]
fn chained_fc_relu_fc_matches_finite_differences() {
    check("fc-relu-fc", |g, rng| {
        let x = g.input(random(&[5, 6], rng));
        let w1 = g.param(random(&[6, 8], rng));
        let b1 = g.param(random(&[8], rng));
        let w2 = g.param(random(&[8, 3], rng));
        let b2 = g.param(random(&[3], rng));
        let h = g.fully_connected(x, w1, b1).unwrap();
        let h = g.relu(h).unwrap();
        g.fully_connected(h, w2, b2).unwrap()
    });
}

#[test]
fn identity_fc_passes_up_to_rounding() {
    let mut g = Graph::new();
    let x = g.param(Tensor::new(vec![1, 3], vec![0.5, -1.0, 2.0]).unwrap());
    let mut eye = Tensor::zeros(&[3, 3]);
    for i in 0..3 {
        eye.data_mut()[i * 3 + i] = 1.0;
    }
    let w = g.input(eye);
    let b = g.input(Tensor::zeros(&[3]));
    let y = g.fully_connected(x, w, b).unwrap();
    let s = g.sum(y).unwrap();
    let report = gradient_check(&mut g, s, EPS).unwrap();
    assert!(report.max_rel_error() < 1e-9, "{report:?}");
}

#[test]
fn corrupted_backward_is_detected() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut g = Graph::new();
    let x = g.input(random(&[4, 5], &mut rng));
    let w = g.param(random(&[5, 3], &mut rng));
    let b = g.param(random(&[3], &mut rng));
    let y = g.fully_connected(x, w, b).unwrap();
    let y = g.relu(y).unwrap();
    let loss = project(&mut g, y, &mut rng);
    let mut grads = g.backward(loss).unwrap();
    let clean = gradient_check_against(&mut g, loss, &grads, EPS, None).unwrap();
    assert!(clean.passes(TOL));
    // Flip the sign of one weight gradient, as a broken VJP would.
    let gw = grads.get_mut(w).unwrap();
    let idx = gw
        .data()
        .iter()
        .position(|v| v.abs() > 1e-3)
        .expect("some weight has a non-trivial gradient");
    gw.data_mut()[idx] *= -1.0;
    let corrupted = gradient_check_against(&mut g, loss, &grads, EPS, None).unwrap();
    assert!(!corrupted.passes(TOL));
    assert_eq!(corrupted.worst().unwrap().var, w);
}

#[test]
fn shared_node_gradient_is_sum_of_branch_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x0 = random(&[2, 4], &mut rng);
    let w1 = random(&[4, 3], &mut rng);
    let w2 = random(&[4, 3], &mut rng);
    let zero = Tensor::zeros(&[3]);

    let branch = |w: &Tensor, both: Option<&Tensor>| {
        let mut g = Graph::new();
        let x = g.param(x0.clone());
        let b = g.input(zero.clone());
        let wa = g.input(w.clone());
        let ya = g.fully_connected(x, wa, b).unwrap();
        let ya = g.relu(ya).unwrap();
        let mut loss = g.sum(ya).unwrap();
        if let Some(w2) = both {
            let wb = g.input(w2.clone());
            let yb = g.fully_connected(x, wb, b).unwrap();
            let yb = g.softmax(yb).unwrap();
            let yb = g.scale(yb, 2.0).unwrap();
            let sb = g.sum(yb).unwrap();
            let sq = g.cosine_similarity(ya, yb).ok();
            let _ = sq;
            loss = g.add(loss, sb).unwrap();
        }
        g.backward(loss).unwrap().get(x).unwrap().clone()
    };
    let only_second = {
        let mut g = Graph::new();
        let x = g.param(x0.clone());
        let b = g.input(zero.clone());
        let wb = g.input(w2.clone());
        let yb = g.fully_connected(x, wb, b).unwrap();
        let yb = g.softmax(yb).unwrap();
        let yb = g.scale(yb, 2.0).unwrap();
        let sb = g.sum(yb).unwrap();
        g.backward(sb).unwrap().get(x).unwrap().clone()
    };
    let first = branch(&w1, None);
    let joint = branch(&w1, Some(&w2));
    for i in 0..joint.len() {
        let expected = first.data()[i] + only_second.data()[i];
        assert!(relative_error(joint.data()[i], expected) < 1e-12 || (joint.data()[i] - expected).abs() < 1e-15);
    }
}
