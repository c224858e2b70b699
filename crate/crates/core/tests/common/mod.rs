#![allow(dead_code)]

use aligned_core::data::{Modality, PairType, PairedBatch, Sample};
use aligned_core::encoders::{Layer, NetworkSpec, PathwaySpec};
use aligned_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Narrow network over 8×8 images; sound and text keep their fixed input
/// shapes but are pooled down quickly.
pub fn tiny_spec() -> NetworkSpec {
    use Layer::*;
    let bottleneck = 8;
    NetworkSpec {
        vision: PathwaySpec {
            input_shape: vec![3, 8, 8],
            layers: vec![
                Conv2d { filters: 2, kernel: 3, stride: 1 },
                Relu,
                MaxPool2d { window: 2, stride: 2 },
                Fc { units: bottleneck },
                Relu,
            ],
        },
        sound: PathwaySpec {
            input_shape: vec![257, 500],
            layers: vec![
                Conv1d { filters: 2, kernel: 3 },
                Relu,
                MaxPool1d { factor: 25 },
                Fc { units: bottleneck },
                Relu,
            ],
        },
        text: PathwaySpec {
            input_shape: vec![300, 16],
            layers: vec![
                Conv1d { filters: 3, kernel: 3 },
                Relu,
                MaxPool1d { factor: 4 },
                Fc { units: bottleneck },
                Relu,
            ],
        },
        shared: vec![Fc { units: 16 }, Relu, Fc { units: 16 }, Relu, Fc { units: 5 }, Softmax],
        bottleneck_dim: bottleneck,
        output_dim: 5,
    }
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn random_sample(id: &str, modality: Modality, image_side: usize, rng: &mut ChaCha8Rng) -> Sample {
    let shape = match modality {
        Modality::Image => vec![3, image_side, image_side],
        Modality::Sound => vec![257, 500],
        Modality::Text => vec![300, 16],
    };
    Sample::new(id, modality, random_tensor(&shape, rng)).unwrap()
}

/// Random teacher rows: strictly positive and normalized.
pub fn random_teacher(rows: usize, dim: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let mut data = Vec::with_capacity(rows * dim);
    for _ in 0..rows {
        let raw: Vec<f64> = (0..dim).map(|_| rng.random_range(0.1..1.0)).collect();
        let s: f64 = raw.iter().sum();
        data.extend(raw.iter().map(|v| v / s));
    }
    Tensor::new(vec![rows, dim], data).unwrap()
}

pub fn random_batch(pair_type: PairType, size: usize, image_side: usize, out_dim: usize, seed: u64) -> PairedBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let partner = pair_type.partner();
    let images = (0..size)
        .map(|i| random_sample(&format!("i{i}"), Modality::Image, image_side, &mut rng))
        .collect();
    let partners = (0..size)
        .map(|i| random_sample(&format!("o{i}"), partner, image_side, &mut rng))
        .collect();
    let teacher = random_teacher(size, out_dim, &mut rng);
    PairedBatch::new(pair_type, images, partners, Some(teacher)).unwrap()
}
