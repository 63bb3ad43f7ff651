//! CIFAR-10 binary version: each record is one label byte followed by
//! 3×1024 bytes (R, G, B planes of a 32×32 image, row-major).

use std::fs;
use std::path::Path;

use super::{LabeledImageSet, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const RECORD_LEN: usize = 3073;
const PIXELS: usize = 3072;
const CIFAR100_RECORD_LEN: usize = 3074;

pub fn parse_cifar10(bytes: &[u8], split: Split) -> Result<LabeledImageSet> {
    if bytes.len() % RECORD_LEN != 0 {
        if bytes.len() % CIFAR100_RECORD_LEN == 0 {
            return Err(Error::format(
                0,
                "file looks like CIFAR-100 (3074-byte records), which is not supported",
            ));
        }
        let offset = (bytes.len() / RECORD_LEN * RECORD_LEN) as u64;
        return Err(Error::format(
            offset,
            format!("truncated record: {} trailing bytes", bytes.len() % RECORD_LEN),
        ));
    }
    let n = bytes.len() / RECORD_LEN;
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * PIXELS);
    for (i, rec) in bytes.chunks_exact(RECORD_LEN).enumerate() {
        if rec[0] > 9 {
            return Err(Error::format(
                (i * RECORD_LEN) as u64,
                format!("label {} out of range 0..=9", rec[0]),
            ));
        }
        labels.push(rec[0] as usize);
        data.extend(rec[1..].iter().map(|&b| b as f64 / 255.0));
    }
    let images = if n == 0 {
        Tensor::from_parts(vec![0, 3, 32, 32], vec![])
    } else {
        Tensor::new(vec![n, 3, 32, 32], data)?
    };
    LabeledImageSet::new(images, labels, split, 10)
}

/// Inverse of [`parse_cifar10`] for sets whose pixels are multiples of 1/255.
pub fn encode_cifar10(set: &LabeledImageSet) -> Result<Vec<u8>> {
    if set.image_shape() != [3, 32, 32] || set.num_classes > 10 {
        return Err(Error::Contract("CIFAR-10 records hold 3x32x32 images with labels 0..=9".into()));
    }
    let mut out = Vec::with_capacity(set.len() * RECORD_LEN);
    for (label, img) in set.labels.iter().zip(set.images.data().chunks(PIXELS)) {
        out.push(*label as u8);
        out.extend(img.iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    }
    Ok(out)
}

fn read_file(path: &Path, split: Split) -> Result<LabeledImageSet> {
    let bytes = fs::read(path)?;
    parse_cifar10(&bytes, split).map_err(|e| match e {
        Error::Format { offset, message } => Error::Format {
            offset,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

fn concat(sets: Vec<LabeledImageSet>, split: Split) -> Result<LabeledImageSet> {
    let n: usize = sets.iter().map(LabeledImageSet::len).sum();
    let mut data = Vec::with_capacity(n * PIXELS);
    let mut labels = Vec::with_capacity(n);
    for s in sets {
        data.extend_from_slice(s.images.data());
        labels.extend(s.labels);
    }
    let images = if n == 0 {
        Tensor::from_parts(vec![0, 3, 32, 32], vec![])
    } else {
        Tensor::new(vec![n, 3, 32, 32], data)?
    };
    LabeledImageSet::new(images, labels, split, 10)
}

/// Load `data_batch_{1..5}.bin` and `test_batch.bin` from `dir` (or from its
/// `cifar-10-batches-bin` subdirectory).
pub fn read_cifar10(dir: &Path) -> Result<(LabeledImageSet, LabeledImageSet)> {
    let nested = dir.join("cifar-10-batches-bin");
    let root = if nested.is_dir() { nested } else { dir.to_path_buf() };
    let train = (1..=5)
        .map(|i| read_file(&root.join(format!("data_batch_{i}.bin")), Split::Train))
        .collect::<Result<Vec<_>>>()?;
    let test = read_file(&root.join("test_batch.bin"), Split::Test)?;
    Ok((concat(train, Split::Train)?, test))
}
