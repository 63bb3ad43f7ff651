//! Image datasets, preprocessing and augmentation.

mod augment;
mod cifar;
mod toy;

pub use augment::{
    augment_batch, channel_stats, cutout_area, normalize, AugmentDraw, AugmentPolicy,
};
pub use cifar::{encode_cifar10, parse_cifar10, read_cifar10, RECORD_LEN};
pub use toy::{load_toy_cache, make_toy_set, save_toy_cache, TOY_CLASSES, TOY_SIZE};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Images `[N, C, H, W]` with one class id per image.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImageSet {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub split: Split,
    pub num_classes: usize,
}

impl LabeledImageSet {
    pub fn new(images: Tensor, labels: Vec<usize>, split: Split, num_classes: usize) -> Result<Self> {
        ensure!(
            images.shape().len() == 4,
            Dimension,
            "images must be [N, C, H, W], got {:?}",
            images.shape()
        );
        ensure!(
            images.shape()[0] == labels.len(),
            Dimension,
            "{} images but {} labels",
            images.shape()[0],
            labels.len()
        );
        ensure!(
            labels.iter().all(|&l| l < num_classes),
            Contract,
            "label out of range for {num_classes} classes"
        );
        Ok(LabeledImageSet {
            images,
            labels,
            split,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[C, H, W]`
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}
