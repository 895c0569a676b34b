#![allow(dead_code)]

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use cast_core::imaging::{Corpus, CorpusManifest, Domain};
use cast_core::nn::l2_normalize_rows;
use cast_core::toy::{write_toy_corpora, ToyCorpora};
use cast_core::{ImageTensor, ModelConfig, StyleCode, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Narrowest networks that still exercise every layer.
pub fn tiny_model() -> ModelConfig {
    ModelConfig {
        backbone_width: 4,
        code_dims: [8, 8, 16, 16],
        modulation_hidden: 8,
        discriminator_width: 4,
        seed: 0,
    }
}

pub fn tiny_train_config(iterations: u64) -> TrainConfig {
    let mut c = TrainConfig::desk(iterations);
    c.model = tiny_model();
    c.batch = 2;
    c
}

pub fn random_image(batch: usize, size: usize, seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f32> = (0..batch * 3 * size * size).map(|_| rng.random_range(-1.0..1.0)).collect();
    ImageTensor::new(Tensor::from_vec(data, (batch, 3, size, size), &Device::Cpu).unwrap()).unwrap()
}

pub fn random_unit_rows(rng: &mut ChaCha8Rng, n: usize, d: usize, dtype: DType) -> Tensor {
    let data: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let t = Tensor::from_vec(data, (n, d), &Device::Cpu).unwrap().to_dtype(dtype).unwrap();
    if n == 0 {
        return t;
    }
    l2_normalize_rows(&t, 1e-12).unwrap()
}

pub fn random_code(rng: &mut ChaCha8Rng, batch: usize, dims: &[usize], dtype: DType) -> StyleCode {
    StyleCode::new(dims.iter().map(|&d| random_unit_rows(rng, batch, d, dtype)).collect()).unwrap()
}

pub fn toy_corpora(dir: &Path, per_style: usize, realistic: usize, seed: u64) -> (ToyCorpora, Corpus, Corpus) {
    let data = write_toy_corpora(dir, per_style, realistic, 64, seed).unwrap();
    let art = Corpus::new(CorpusManifest::scan(&data.artistic, Domain::Artistic, 64).unwrap(), &Device::Cpu).unwrap();
    let real = Corpus::new(CorpusManifest::scan(&data.realistic, Domain::Realistic, 64).unwrap(), &Device::Cpu).unwrap();
    (data, art, real)
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    (a - b)
        .unwrap()
        .abs()
        .unwrap()
        .flatten_all()
        .unwrap()
        .max(0)
        .unwrap()
        .to_dtype(DType::F64)
        .unwrap()
        .to_scalar::<f64>()
        .unwrap()
}

/// Brute-force contrastive loss over plain vectors: layers × batch × dims.
pub fn info_nce_oracle(anchor: &[Vec<Vec<f64>>], positive: &[Vec<Vec<f64>>], negatives: &[Vec<Vec<f64>>], tau: f64) -> f64 {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut total = 0.0;
    for l in 0..anchor.len() {
        if negatives[l].is_empty() {
            continue;
        }
        let mut layer = 0.0;
        for b in 0..anchor[l].len() {
            let pos = (dot(&anchor[l][b], &positive[l][b]) / tau).exp();
            let mut denom = pos;
            for n in &negatives[l] {
                denom += (dot(&anchor[l][b], n) / tau).exp();
            }
            layer += -(pos / denom).ln();
        }
        total += layer / anchor[l].len() as f64;
    }
    total
}

pub fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    t.to_dtype(DType::F64).unwrap().to_vec2::<f64>().unwrap()
}
