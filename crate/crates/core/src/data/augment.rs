use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LabeledImageSet;
use crate::error::{ensure, Result};
use crate::exec::Exec;
use crate::tensor::Tensor;

/// Zero-pad + random crop, horizontal flip and Cutout, plus the per-channel
/// normalization constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    pub pad: usize,
    pub crop: usize,
    pub hflip_prob: f64,
    /// Side of the zeroed square; 0 disables Cutout.
    pub cutout_size: usize,
    pub channel_mean: Vec<f64>,
    pub channel_std: Vec<f64>,
}

impl AugmentPolicy {
    /// pad 4, crop 32, flip 0.5, Cutout 16.
    pub fn cifar(channel_mean: Vec<f64>, channel_std: Vec<f64>) -> Self {
        AugmentPolicy {
            pad: 4,
            crop: 32,
            hflip_prob: 0.5,
            cutout_size: 16,
            channel_mean,
            channel_std,
        }
    }

    /// The CIFAR recipe halved for 16×16 inputs: pad 2, crop 16, Cutout 8.
    pub fn toy(channel_mean: Vec<f64>, channel_std: Vec<f64>) -> Self {
        AugmentPolicy {
            pad: 2,
            crop: 16,
            hflip_prob: 0.5,
            cutout_size: 8,
            channel_mean,
            channel_std,
        }
    }

    /// No-op augmentation.
    pub fn identity(crop: usize, channels: usize) -> Self {
        AugmentPolicy {
            pad: 0,
            crop,
            hflip_prob: 0.0,
            cutout_size: 0,
            channel_mean: vec![0.0; channels],
            channel_std: vec![1.0; channels],
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.crop >= 1, Config, "crop must be positive");
        ensure!(
            self.cutout_size <= self.crop,
            Config,
            "cutout {} larger than crop {}",
            self.cutout_size,
            self.crop
        );
        ensure!(
            (0.0..=1.0).contains(&self.hflip_prob),
            Config,
            "flip probability {} outside [0, 1]",
            self.hflip_prob
        );
        ensure!(
            self.channel_mean.len() == self.channel_std.len(),
            Config,
            "channel mean/std lengths differ"
        );
        Ok(())
    }
}

/// Population mean and standard deviation of each channel.
pub fn channel_stats(set: &LabeledImageSet) -> (Vec<f64>, Vec<f64>) {
    let [c, h, w] = set.image_shape();
    let hw = h * w;
    let count = (set.len() * hw) as f64;
    let mut mean = vec![0.0; c];
    for (i, plane) in set.images.data().chunks(hw).enumerate() {
        mean[i % c] += plane.iter().sum::<f64>();
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![0.0; c];
    for (i, plane) in set.images.data().chunks(hw).enumerate() {
        let m = mean[i % c];
        var[i % c] += plane.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
    }
    (mean, var.iter().map(|v| (v / count).sqrt()).collect())
}

/// Per-channel `(x − mean) / std`.
pub fn normalize(set: &LabeledImageSet, policy: &AugmentPolicy) -> Result<LabeledImageSet> {
    let [c, h, w] = set.image_shape();
    ensure!(
        policy.channel_mean.len() == c && policy.channel_std.len() == c,
        Config,
        "normalization constants cover {} channels, images have {c}",
        policy.channel_mean.len()
    );
    ensure!(
        policy.channel_std.iter().all(|&s| s > 0.0),
        Config,
        "channel std must be positive, got {:?}",
        policy.channel_std
    );
    let hw = h * w;
    let mut data = set.images.data().to_vec();
    for (i, plane) in data.chunks_mut(hw).enumerate() {
        let (m, s) = (policy.channel_mean[i % c], policy.channel_std[i % c]);
        plane.iter_mut().for_each(|v| *v = (*v - m) / s);
    }
    let mut out = set.clone();
    out.images = Tensor::new(set.images.shape().to_vec(), data)?;
    Ok(out)
}

/// The random choices made for one image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentDraw {
    /// Crop offsets into the padded image, each in `[0, 2·pad]`.
    pub offset_y: usize,
    pub offset_x: usize,
    pub flip: bool,
    /// Cutout centre, uniform over the image; `None` when Cutout is off.
    pub cutout_center: Option<(usize, usize)>,
}

impl AugmentDraw {
    pub fn sample(policy: &AugmentPolicy, h: usize, w: usize, rng: &mut impl Rng) -> Self {
        let offset_y = rng.random_range(0..=2 * policy.pad);
        let offset_x = rng.random_range(0..=2 * policy.pad);
        let flip = policy.hflip_prob > 0.0 && rng.random_bool(policy.hflip_prob);
        let cutout_center = (policy.cutout_size > 0).then(|| (rng.random_range(0..h), rng.random_range(0..w)));
        AugmentDraw {
            offset_y,
            offset_x,
            flip,
            cutout_center,
        }
    }

    /// Apply to one `[C, H, W]` image in place.
    pub fn apply(&self, img: &mut [f64], c: usize, h: usize, w: usize, pad: usize, cutout: usize) {
        let src = img.to_vec();
        for ch in 0..c {
            let plane = &src[ch * h * w..(ch + 1) * h * w];
            let dst = &mut img[ch * h * w..(ch + 1) * h * w];
            for y in 0..h {
                let sy = (y + self.offset_y) as isize - pad as isize;
                for x in 0..w {
                    let xx = if self.flip { w - 1 - x } else { x };
                    let sx = (xx + self.offset_x) as isize - pad as isize;
                    dst[y * w + x] = if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                        0.0
                    } else {
                        plane[sy as usize * w + sx as usize]
                    };
                }
            }
            if let Some((cy, cx)) = self.cutout_center {
                let (y0, y1) = cutout_span(cy, cutout, h);
                let (x0, x1) = cutout_span(cx, cutout, w);
                for y in y0..y1 {
                    dst[y * w + x0..y * w + x1].fill(0.0);
                }
            }
        }
    }
}

fn cutout_span(center: usize, size: usize, extent: usize) -> (usize, usize) {
    let lo = center as isize - (size / 2) as isize;
    let hi = lo + size as isize;
    (lo.max(0) as usize, hi.clamp(0, extent as isize) as usize)
}

/// Number of pixels per channel zeroed by a Cutout square centred at `(cy, cx)`.
pub fn cutout_area(cy: usize, cx: usize, size: usize, h: usize, w: usize) -> usize {
    let (y0, y1) = cutout_span(cy, size, h);
    let (x0, x1) = cutout_span(cx, size, w);
    (y1 - y0) * (x1 - x0)
}

/// Augment every image of `batch` independently. Image `i` draws from a
/// ChaCha8 stream seeded with `seeds[i]`, so the output does not depend on
/// `exec`.
pub fn augment_batch(batch: &Tensor, policy: &AugmentPolicy, seeds: &[u64], exec: Exec) -> Result<Tensor> {
    let (n, c, h, w) = batch.dims4()?;
    ensure!(
        h == policy.crop && w == policy.crop,
        Dimension,
        "batch is {h}x{w} but the policy crops to {}",
        policy.crop
    );
    ensure!(seeds.len() == n, Contract, "{} seeds for {n} images", seeds.len());
    policy.validate()?;
    let mut data = batch.data().to_vec();
    exec.for_each_chunk(&mut data, c * h * w, |i, img| {
        let mut rng = ChaCha8Rng::seed_from_u64(seeds[i]);
        AugmentDraw::sample(policy, h, w, &mut rng).apply(img, c, h, w, policy.pad, policy.cutout_size);
    });
    Ok(Tensor::from_parts(batch.shape().to_vec(), data))
}
