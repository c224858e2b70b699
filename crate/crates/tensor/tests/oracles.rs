//! Forward kernels against independent nested-loop oracles and hand examples.

use aligned_tensor::{Graph, Tensor, TensorError};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Direct definition: bias plus every in-range tap, channels outermost.
fn conv1d_oracle(x: &Tensor, k: &Tensor, b: &Tensor) -> Vec<f64> {
    let (bs, c, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (f, kk) = (k.shape()[0], k.shape()[2]);
    let pad = (kk - 1) as isize / 2;
    let mut out = vec![];
    for bi in 0..bs {
        for fi in 0..f {
            for ti in 0..l {
                let mut acc = b.data()[fi];
                for ci in 0..c {
                    for ki in 0..kk {
                        let src = ti as isize + ki as isize - pad;
                        if src >= 0 && src < l as isize {
                            acc += k.data()[(fi * c + ci) * kk + ki]
                                * x.data()[(bi * c + ci) * l + src as usize];
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

fn conv2d_oracle(x: &Tensor, k: &Tensor, b: &Tensor, stride: usize) -> (Vec<usize>, Vec<f64>) {
    let s = x.shape();
    let ks = k.shape();
    let (ph, pw) = ((ks[2] - 1) / 2, (ks[3] - 1) / 2);
    let oh = (s[2] + 2 * ph - ks[2]) / stride + 1;
    let ow = (s[3] + 2 * pw - ks[3]) / stride + 1;
    let mut out = vec![];
    for bi in 0..s[0] {
        for fi in 0..ks[0] {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data()[fi];
                    for ci in 0..s[1] {
                        for ky in 0..ks[2] {
                            for kx in 0..ks[3] {
                                let iy = (oy * stride + ky) as isize - ph as isize;
                                let ix = (ox * stride + kx) as isize - pw as isize;
                                if iy >= 0 && ix >= 0 && iy < s[2] as isize && ix < s[3] as isize {
                                    let w = k.data()[((fi * s[1] + ci) * ks[2] + ky) * ks[3] + kx];
                                    let v = x.data()
                                        [((bi * s[1] + ci) * s[2] + iy as usize) * s[3] + ix as usize];
                                    acc += w * v;
                                }
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    (vec![s[0], ks[0], oh, ow], out)
}

#[test]
fn fully_connected_examples() {
    let mut g = Graph::new();
    let x = g.input(t(&[1, 2], &[1., 2.]));
    let w = g.param(t(&[2, 2], &[1., 0., 0., 1.]));
    let b = g.param(Tensor::zeros(&[2]));
    let y = g.fully_connected(x, w, b).unwrap();
    assert_eq!(g.value(y).data(), &[1., 2.]);

    let x = g.input(t(&[1, 2], &[1., 1.]));
    let w = g.param(t(&[2, 1], &[1., 1.]));
    let b = g.param(t(&[1], &[0.5]));
    let y = g.fully_connected(x, w, b).unwrap();
    assert_eq!(g.value(y).data(), &[1.0 * 1.0 + 1.0 * 1.0 + 0.5]);

    let x = g.input(t(&[3, 2], &[1., 2., 3., 4., 5., 6.]));
    let w = g.param(t(&[2, 4], &[0.1; 8]));
    let b = g.param(Tensor::zeros(&[4]));
    let y = g.fully_connected(x, w, b).unwrap();
    let s = g.sum(y).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(b).unwrap(), &Tensor::full(&[4], 3.0));

    let bad = g.param(Tensor::zeros(&[3, 4]));
    assert!(matches!(
        g.fully_connected(x, bad, b),
        Err(TensorError::Shape { .. })
    ));
}

#[test]
fn conv1d_examples() {
    let mut g = Graph::new();
    let x = g.input(t(&[1, 1, 4], &[3., -1., 2., 5.]));
    let k = g.param(t(&[1, 1, 1], &[1.]));
    let b = g.param(Tensor::zeros(&[1]));
    let y = g.conv1d_same(x, k, b).unwrap();
    assert_eq!(g.value(y).data(), &[3., -1., 2., 5.]);

    let x = g.input(t(&[1, 1, 3], &[1., 2., 3.]));
    let k = g.param(t(&[1, 1, 3], &[1., 1., 1.]));
    let y = g.conv1d_same(x, k, b).unwrap();
    let oracle = conv1d_oracle(g.value(x), g.value(k), g.value(b));
    assert_eq!(oracle, vec![3., 6., 5.]);
    assert_eq!(g.value(y).data(), &oracle[..]);

    let x = g.input(Tensor::zeros(&[2, 3, 5]));
    let k = g.param(Tensor::ones(&[2, 3, 3]));
    let b2 = g.param(t(&[2], &[0.25, -4.0]));
    let y = g.conv1d_same(x, k, b2).unwrap();
    for (i, row) in g.value(y).data().chunks(5).enumerate() {
        assert!(row.iter().all(|&v| v == [0.25, -4.0][i % 2]));
    }

    let even = g.param(Tensor::ones(&[1, 1, 2]));
    let x = g.input(Tensor::ones(&[1, 1, 4]));
    assert!(matches!(
        g.conv1d_same(x, even, b),
        Err(TensorError::Config { .. })
    ));
}

#[test]
fn conv2d_examples() {
    let mut g = Graph::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = g.input(random(&[1, 1, 4, 5], &mut rng));
    let k = g.param(t(&[1, 1, 1, 1], &[1.]));
    let b = g.param(Tensor::zeros(&[1]));
    let y = g.conv2d_same(x, k, b, 1).unwrap();
    assert_eq!(g.value(y), g.value(x));

    let ones = g.input(Tensor::ones(&[1, 1, 3, 3]));
    let k3 = g.param(Tensor::ones(&[1, 1, 3, 3]));
    let y = g.conv2d_same(ones, k3, b, 1).unwrap();
    let (_, oracle) = conv2d_oracle(g.value(ones), g.value(k3), g.value(b), 1);
    assert_eq!(oracle[4], 9.0);
    assert_eq!(g.value(y).data(), &oracle[..]);

    let x = g.input(Tensor::ones(&[1, 1, 7, 6]));
    let y = g.conv2d_same(x, k3, b, 2).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 1, 4, 3]);

    let tiny = g.input(Tensor::ones(&[1, 1, 1, 1]));
    assert!(matches!(
        g.conv2d_same(tiny, k, b, 2),
        Err(TensorError::Shape { .. })
    ));
}

#[test]
fn paper_scale_krizhevsky_extents() {
    // 227 → conv 11/4 → 57 → pool 3/2 → 28 → 13 → 6.
    let mut g = Graph::new();
    let x = g.input(Tensor::zeros(&[1, 1, 227, 227]));
    let k = g.param(Tensor::zeros(&[1, 1, 11, 11]));
    let b = g.param(Tensor::zeros(&[1]));
    let mut h = g.conv2d_same(x, k, b, 4).unwrap();
    assert_eq!(g.value(h).shape(), &[1, 1, 57, 57]);
    for expected in [28, 13, 6] {
        h = g.maxpool2d(h, 3, 2).unwrap();
        assert_eq!(g.value(h).shape()[2], expected);
    }
}

#[test]
fn maxpool_examples() {
    let mut g = Graph::new();
    let x = g.param(t(&[1, 1, 4], &[1., 5., 2., 4.]));
    let id = g.maxpool1d(x, 1).unwrap();
    assert_eq!(g.value(id), g.value(x));
    let p = g.maxpool1d(x, 2).unwrap();
    assert_eq!(g.value(p).data(), &[5., 4.]);

    let ragged = g.input(t(&[1, 1, 5], &[-3., -1., -2., -7., -9.]));
    let p = g.maxpool1d(ragged, 2).unwrap();
    assert_eq!(g.value(p).data(), &[-1., -2., -9.]);

    let mut h = g.input(Tensor::zeros(&[1, 2, 500]));
    for _ in 0..3 {
        h = g.maxpool1d(h, 5).unwrap();
    }
    assert_eq!(g.value(h).shape(), &[1, 2, 4]);
    assert!(matches!(g.maxpool1d(h, 0), Err(TensorError::Config { .. })));
}

#[test]
fn maxpool_tie_routes_gradient_to_first_maximum() {
    let mut g = Graph::new();
    let x = g.param(t(&[1, 1, 4], &[2., 2., 1., 1.]));
    let p = g.maxpool1d(x, 2).unwrap();
    let s = g.sum(p).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[1., 0., 1., 0.]);

    let x = g.param(Tensor::ones(&[1, 1, 2, 2]));
    let p = g.maxpool2d(x, 2, 2).unwrap();
    let s = g.sum(p).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[1., 0., 0., 0.]);
}

#[test]
fn relu_examples() {
    let mut g = Graph::new();
    let x = g.input(t(&[3], &[-1., 0., 2.]));
    let r = g.relu(x).unwrap();
    assert_eq!(g.value(r).data(), &[0., 0., 2.]);
    let neg = g.input(t(&[2, 2], &[-1., -0.5, -3., -1e-9]));
    let r = g.relu(neg).unwrap();
    assert_eq!(g.value(r), &Tensor::zeros(&[2, 2]));
}

#[test]
fn softmax_examples() {
    let mut g = Graph::new();
    let x = g.input(t(&[1, 4], &[0.7; 4]));
    let y = g.softmax(x).unwrap();
    assert!(g.value(y).data().iter().all(|&v| (v - 0.25).abs() < 1e-15));

    let x = g.input(t(&[1, 2], &[0.0, 2f64.ln()]));
    let y = g.softmax(x).unwrap();
    // Direct summation: e^0 / (e^0 + e^ln2) = 1/3.
    let z = 0f64.exp() + 2f64.ln().exp();
    let oracle = [0f64.exp() / z, 2f64.ln().exp() / z];
    for (v, o) in g.value(y).data().iter().zip(oracle) {
        assert!((v - o).abs() < 1e-15);
    }
    assert!((g.value(y).data()[0] - 1.0 / 3.0).abs() < 1e-15);

    let x = g.input(t(&[1, 3], &[1000.0, 1001.0, 999.0]));
    let shifted = g.input(t(&[1, 3], &[0.0, 1.0, -1.0]));
    let (y1, y2) = (g.softmax(x).unwrap(), g.softmax(shifted).unwrap());
    for (a, b) in g.value(y1).data().iter().zip(g.value(y2).data()) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn cosine_examples() {
    let mut g = Graph::new();
    let a = g.input(t(&[3, 2], &[3., 4., 1., 0., 1., 0.]));
    let b = g.input(t(&[3, 2], &[3., 4., 0., 1., 1., 1.]));
    let c = g.cosine_similarity(a, b).unwrap();
    let v = g.value(c).data();
    assert!((v[0] - 1.0).abs() < 1e-8);
    assert_eq!(v[1], 0.0);
    // Oracle: (1·1 + 0·1) / (‖(1,0)‖ · ‖(1,1)‖).
    let oracle = 1.0 / (1.0 * 2f64.sqrt());
    // The 1e-8 norm epsilon shifts the value by about 1.2e-8.
    assert!((v[2] - oracle).abs() < 1e-7);
    assert!((v[2] - 0.70710678).abs() < 1e-7);

    let zero = g.input(t(&[1, 2], &[0., 0.]));
    let one = g.input(t(&[1, 2], &[1., 0.]));
    assert!(matches!(
        g.cosine_similarity(zero, one),
        Err(TensorError::Degenerate { .. })
    ));
}

#[test]
fn conv_kernels_match_oracles_exactly_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..25 {
        let (bs, c, f) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
        let l = rng.random_range(1..9);
        let kk = [1, 3, 5, 7][rng.random_range(0..4)];
        let x = random(&[bs, c, l], &mut rng);
        let k = random(&[f, c, kk], &mut rng);
        let b = random(&[f], &mut rng);
        let got = aligned_tensor::ops::conv1d_forward(&x, &k, &b).unwrap();
        assert_eq!(got.data(), &conv1d_oracle(&x, &k, &b)[..]);

        let (h, w) = (rng.random_range(1..9), rng.random_range(1..9));
        let (kh, kw) = ([1, 3, 5][rng.random_range(0..3)], [1, 3][rng.random_range(0..2)]);
        let stride = rng.random_range(1..4);
        if stride > h + kh - 1 || stride > w + kw - 1 {
            continue;
        }
        let x = random(&[bs, c, h, w], &mut rng);
        let k = random(&[f, c, kh, kw], &mut rng);
        let got = aligned_tensor::ops::conv2d_forward(&x, &k, &b, stride).unwrap();
        let (shape, oracle) = conv2d_oracle(&x, &k, &b, stride);
        assert_eq!(got.shape(), &shape[..]);
        assert_eq!(got.data(), &oracle[..]);
    }
}

#[test]
fn forward_is_bitwise_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut g = Graph::new();
        let x = g.input(random(&[2, 3, 20], &mut rng));
        let k = g.param(random(&[4, 3, 5], &mut rng));
        let b = g.param(random(&[4], &mut rng));
        let h = g.conv1d_same(x, k, b).unwrap();
        let h = g.relu(h).unwrap();
        let h = g.maxpool1d(h, 3).unwrap();
        let h = g.flatten(h).unwrap();
        let y = g.softmax(h).unwrap();
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap();
        (g.value(y).clone(), grads.get(k).unwrap().clone())
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0.data(), b.0.data());
    assert_eq!(a.1.data(), b.1.data());
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(rows in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 5), 1..6)) {
        let mut g = Graph::new();
        let x = g.input(Tensor::from_rows(&rows).unwrap());
        let y = g.softmax(x).unwrap();
        for r in 0..rows.len() {
            let row = g.value(y).row(r);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| v > 0.0 && v <= 1.0));
        }
    }

    #[test]
    fn cosine_stays_in_unit_interval(
        a in prop::collection::vec(-1e3f64..1e3, 4),
        scale in 1e-3f64..1e3,
    ) {
        prop_assume!(a.iter().map(|v| v * v).sum::<f64>().sqrt() > 1e-6);
        let b: Vec<f64> = a.iter().map(|v| v * scale).collect();
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        let mut g = Graph::new();
        let x = g.input(Tensor::from_rows(&[a.clone(), a.clone()]).unwrap());
        let y = g.input(Tensor::from_rows(&[b, neg]).unwrap());
        let c = g.cosine_similarity(x, y).unwrap();
        for &v in g.value(c).data() {
            prop_assert!((-1.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn tensor_serialization_round_trips(
        shape in prop::collection::vec(1usize..4, 0..4),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random(&shape, &mut rng);
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        let back = Tensor::read_from(&buf[..]).unwrap();
        prop_assert_eq!(back.shape(), t.shape());
        prop_assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
