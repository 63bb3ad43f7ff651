//! Synthetic 3-class shape images, a desk-scale stand-in for CIFAR.
//!
//! Class 0 is a filled square, class 1 a filled disc, class 2 a plus sign.
//! Position, size and colour are random and independent of the class, so the
//! classifier has to look at shape. Gaussian pixel noise is added on top.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::json;

use super::{LabeledImageSet, Split};
use crate::error::{ensure, Error, Result};
use crate::nn::checkpoint::{decode_container, encode_container};
use crate::seed::{stream_rng, Stream};
use crate::tensor::Tensor;

pub const TOY_CLASSES: usize = 3;
pub const TOY_SIZE: usize = 16;
const NOISE_STD: f64 = 0.2;

fn draw_image(class: usize, rng: &mut ChaCha8Rng, out: &mut [f64]) {
    let s = TOY_SIZE as f64;
    let bg: [f64; 3] = [rng.random_range(0.0..0.35), rng.random_range(0.0..0.35), rng.random_range(0.0..0.35)];
    let fg: [f64; 3] = [rng.random_range(0.45..1.0), rng.random_range(0.45..1.0), rng.random_range(0.45..1.0)];
    let radius: f64 = rng.random_range(2.5..5.0);
    let cy: f64 = rng.random_range(radius..s - radius);
    let cx: f64 = rng.random_range(radius..s - radius);
    let thickness = (radius / 2.5).max(1.0);
    let noise = Normal::new(0.0, NOISE_STD).expect("positive std");
    let plane = TOY_SIZE * TOY_SIZE;
    for y in 0..TOY_SIZE {
        for x in 0..TOY_SIZE {
            let dy = y as f64 + 0.5 - cy;
            let dx = x as f64 + 0.5 - cx;
            let inside = match class {
                0 => dy.abs() <= radius * 0.85 && dx.abs() <= radius * 0.85,
                1 => dy * dy + dx * dx <= radius * radius,
                _ => {
                    (dy.abs() <= thickness / 2.0 && dx.abs() <= radius)
                        || (dx.abs() <= thickness / 2.0 && dy.abs() <= radius)
                }
            };
            for c in 0..3 {
                let base = if inside { fg[c] } else { bg[c] };
                out[c * plane + y * TOY_SIZE + x] = (base + noise.sample(rng)).clamp(0.0, 1.0);
            }
        }
    }
}

fn make_split(seed: u64, stream: Stream, n: usize, split: Split) -> Result<LabeledImageSet> {
    let mut rng = stream_rng(seed, stream, &[]);
    let per = 3 * TOY_SIZE * TOY_SIZE;
    let mut data = vec![0.0; n * per];
    let labels: Vec<usize> = (0..n).map(|i| i % TOY_CLASSES).collect();
    for (img, &label) in data.chunks_mut(per).zip(&labels) {
        draw_image(label, &mut rng, img);
    }
    LabeledImageSet::new(
        Tensor::new(vec![n, 3, TOY_SIZE, TOY_SIZE], data)?,
        labels,
        split,
        TOY_CLASSES,
    )
}

/// Deterministic balanced train/test sets of 3×16×16 images in `[0, 1]`.
pub fn make_toy_set(seed: u64, n_train: usize, n_test: usize) -> Result<(LabeledImageSet, LabeledImageSet)> {
    ensure!(n_train >= 1 && n_test >= 1, Config, "toy set sizes must be at least 1");
    Ok((
        make_split(seed, Stream::ToyTrain, n_train, Split::Train)?,
        make_split(seed, Stream::ToyTest, n_test, Split::Test)?,
    ))
}

/// Store both splits in the tensor container (labels as f64 tensors).
pub fn save_toy_cache(path: &Path, train: &LabeledImageSet, test: &LabeledImageSet) -> Result<()> {
    let labels = |s: &LabeledImageSet| {
        Tensor::new(vec![s.len()], s.labels.iter().map(|&l| l as f64).collect())
    };
    let tensors = vec![
        ("train.images".to_string(), train.images.clone()),
        ("train.labels".to_string(), labels(train)?),
        ("test.images".to_string(), test.images.clone()),
        ("test.labels".to_string(), labels(test)?),
    ];
    let meta = json!({"kind": "toy-dataset", "num_classes": TOY_CLASSES});
    std::fs::write(path, encode_container(&meta, &tensors)?)?;
    Ok(())
}

pub fn load_toy_cache(path: &Path) -> Result<(LabeledImageSet, LabeledImageSet)> {
    let (meta, tensors) = decode_container(&std::fs::read(path)?)?;
    if meta["kind"] != "toy-dataset" {
        return Err(Error::format(10, "container is not a toy dataset"));
    }
    let get = |name: &str| {
        tensors
            .iter()
            .position(|(n, _)| n == name)
            .map(|i| tensors[i].1.clone())
            .ok_or_else(|| Error::format(10, format!("missing tensor {name}")))
    };
    let build = |images: Tensor, labels: Tensor, split| {
        let labels = labels.data().iter().map(|&l| l as usize).collect();
        LabeledImageSet::new(images, labels, split, TOY_CLASSES)
    };
    let train = build(get("train.images")?, get("train.labels")?, Split::Train)?;
    let test = build(get("test.images")?, get("test.labels")?, Split::Test)?;
    Ok((train, test))
}
