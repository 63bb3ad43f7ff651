use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockKind {
    /// conv3x3 → BN → ReLU
    PlainConv,
    /// Basic residual block: two conv3x3/BN with an identity or 1x1 projection shortcut.
    Residual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub channels: usize,
    pub blocks: usize,
    pub kind: BlockKind,
    /// Halve the spatial resolution (2x2 average pool) on entry.
    pub downsample: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadOptions {
    pub use_batchnorm: bool,
    pub use_activation: bool,
}

impl Default for HeadOptions {
    fn default() -> Self {
        HeadOptions {
            use_batchnorm: true,
            use_activation: true,
        }
    }
}

/// Backbone description. The network always starts with a conv3x3/BN/ReLU
/// stem from `input_channels` to the first stage's width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub name: String,
    pub input_channels: usize,
    pub input_size: usize,
    pub stages: Vec<StageSpec>,
    pub num_classes: usize,
    pub head_options: HeadOptions,
}

/// Channel multiplier in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFactor(f64);

impl ScalingFactor {
    pub fn new(factor: f64) -> Result<Self> {
        ensure!(
            factor > 0.0 && factor <= 1.0,
            Config,
            "scaling factor must lie in (0, 1], got {factor}"
        );
        Ok(ScalingFactor(factor))
    }

    pub fn get(self) -> f64 {
        self.0
    }

    /// `max(1, round_half_up(c·s))`
    pub fn apply(self, channels: usize) -> usize {
        ((channels as f64 * self.0 + 0.5).floor() as usize).max(1)
    }
}

impl ArchSpec {
    /// Residual stand-in for ResNet-18 at desk scale: three residual stages.
    pub fn res_tiny(input_channels: usize, input_size: usize, num_classes: usize) -> Self {
        Self::three_stage("res-tiny", BlockKind::Residual, [1, 1, 1], input_channels, input_size, num_classes)
    }

    /// Plain-conv stand-in for VGG-16 at desk scale.
    pub fn vgg_tiny(input_channels: usize, input_size: usize, num_classes: usize) -> Self {
        Self::three_stage("vgg-tiny", BlockKind::PlainConv, [1, 2, 2], input_channels, input_size, num_classes)
    }

    fn three_stage(
        name: &str,
        kind: BlockKind,
        blocks: [usize; 3],
        input_channels: usize,
        input_size: usize,
        num_classes: usize,
    ) -> Self {
        let stages = [16, 32, 64]
            .into_iter()
            .zip(blocks)
            .enumerate()
            .map(|(i, (channels, blocks))| StageSpec {
                channels,
                blocks,
                kind,
                downsample: i > 0,
            })
            .collect();
        ArchSpec {
            name: name.into(),
            input_channels,
            input_size,
            stages,
            num_classes,
            head_options: HeadOptions::default(),
        }
    }

    /// CIFAR ResNet-18 layout (64-128-256-512, two basic blocks per stage).
    /// Used for parameter accounting; far too large to train here.
    pub fn resnet18(num_classes: usize) -> Self {
        let stages = [64, 128, 256, 512]
            .into_iter()
            .enumerate()
            .map(|(i, channels)| StageSpec {
                channels,
                blocks: 2,
                kind: BlockKind::Residual,
                downsample: i > 0,
            })
            .collect();
        ArchSpec {
            name: "resnet18".into(),
            input_channels: 3,
            input_size: 32,
            stages,
            num_classes,
            head_options: HeadOptions::default(),
        }
    }

    pub fn by_name(name: &str, input_channels: usize, input_size: usize, num_classes: usize) -> Result<Self> {
        match name {
            "res-tiny" => Ok(Self::res_tiny(input_channels, input_size, num_classes)),
            "vgg-tiny" => Ok(Self::vgg_tiny(input_channels, input_size, num_classes)),
            "resnet18" => Ok(Self::resnet18(num_classes)),
            other => Err(crate::Error::Config(format!(
                "unknown architecture {other:?} (expected res-tiny, vgg-tiny or resnet18)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.stages.is_empty(), Config, "architecture has no stages");
        ensure!(
            self.stages.iter().all(|s| s.channels > 0 && s.blocks > 0),
            Config,
            "stage channel and block counts must be positive"
        );
        ensure!(self.num_classes >= 2, Config, "need at least 2 classes");
        ensure!(self.input_channels > 0, Config, "input needs at least one channel");
        let mut size = self.input_size;
        for s in &self.stages {
            if s.downsample {
                ensure!(
                    size % 2 == 0 && size >= 2,
                    Config,
                    "cannot downsample a {size}x{size} feature map"
                );
                size /= 2;
            }
        }
        Ok(())
    }

    /// Stage index → part index. A new part starts at every stage that
    /// changes resolution; the first stage always opens part 0.
    pub fn stage_parts(&self) -> Vec<usize> {
        let mut part = 0;
        self.stages
            .iter()
            .enumerate()
            .map(|(i, s)| {
                if i > 0 && s.downsample {
                    part += 1;
                }
                part
            })
            .collect()
    }

    pub fn num_parts(&self) -> usize {
        self.stage_parts().last().map_or(0, |p| p + 1)
    }

    /// Output channel count of each part.
    pub fn part_channels(&self) -> Vec<usize> {
        let parts = self.stage_parts();
        let mut out = vec![0; self.num_parts()];
        for (s, &p) in self.stages.iter().zip(&parts) {
            out[p] = s.channels;
        }
        out
    }

    /// Trainable parameter count (conv/linear weights, linear biases, BN affine)
    /// with `m` heads attached. Running statistics are not counted.
    pub fn param_count(&self, m: usize) -> usize {
        let conv = |cin: usize, cout: usize, k: usize| cin * cout * k * k + 2 * cout;
        let mut total = conv(self.input_channels, self.stages[0].channels, 3);
        let mut cin = self.stages[0].channels;
        for s in &self.stages {
            for _ in 0..s.blocks {
                match s.kind {
                    BlockKind::PlainConv => total += conv(cin, s.channels, 3),
                    BlockKind::Residual => {
                        total += conv(cin, s.channels, 3) + conv(s.channels, s.channels, 3);
                        if cin != s.channels {
                            total += conv(cin, s.channels, 1);
                        }
                    }
                }
                cin = s.channels;
            }
        }
        let chans = self.part_channels();
        let k = self.num_classes;
        for (i, &c) in chans.iter().rev().take(m).enumerate() {
            total += c * k + k;
            if i > 0 && self.head_options.use_batchnorm {
                total += 2 * c;
            }
        }
        total
    }
}

/// Multiply every stage's width by `s`, rounding half up with a floor of 1.
pub fn scale_channels(spec: &ArchSpec, s: ScalingFactor) -> ArchSpec {
    let mut out = spec.clone();
    for st in &mut out.stages {
        st.channels = s.apply(st.channels);
    }
    log::debug!(
        "scaled {} by {}: parameter ratio {:.4}",
        spec.name,
        s.get(),
        out.param_count(1) as f64 / spec.param_count(1) as f64
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resnet18_matches_published_size() {
        let r = ArchSpec::resnet18(10);
        assert_eq!(r.param_count(1), 11_173_962);
        assert_eq!(r.num_parts(), 4);
    }

    #[test]
    fn extra_heads_on_resnet18_are_about_ten_thousand_params() {
        let r = ArchSpec::resnet18(10);
        let extra = r.param_count(4) - r.param_count(1);
        // "about 0.01 Mil." extra parameters
        assert!(extra > 2_000 && extra < 15_000, "extra = {extra}");
    }

    #[test]
    fn unit_scale_is_identity() {
        let r = ArchSpec::res_tiny(3, 16, 3);
        assert_eq!(scale_channels(&r, ScalingFactor::new(1.0).unwrap()), r);
    }

    #[test]
    fn rounding_is_half_up_with_floor_one() {
        let s = ScalingFactor::new(0.5).unwrap();
        assert_eq!(s.apply(3), 2);
        assert_eq!(s.apply(1), 1);
        assert_eq!(ScalingFactor::new(0.01).unwrap().apply(16), 1);
        assert!(ScalingFactor::new(0.0).is_err());
        assert!(ScalingFactor::new(1.5).is_err());
    }

    #[test]
    fn scaled_param_ratios_track_factor_squared() {
        let r = ArchSpec::res_tiny(3, 16, 3);
        let base = r.param_count(1) as f64;
        for (s, want) in [(0.5f64.sqrt(), 0.5), (0.5, 0.25), (0.25, 0.0625)] {
            let scaled = scale_channels(&r, ScalingFactor::new(s).unwrap());
            let ratio = scaled.param_count(1) as f64 / base;
            assert!((ratio - want).abs() <= 0.1 * want, "s={s}: ratio {ratio}");
        }
    }

    #[test]
    fn smaller_factor_means_fewer_params() {
        let r = ArchSpec::vgg_tiny(3, 16, 3);
        let mut prev = usize::MAX;
        for s in [1.0, 0.9, 0.75, 0.5, 0.3, 0.2] {
            let n = scale_channels(&r, ScalingFactor::new(s).unwrap()).param_count(1);
            assert!(n < prev);
            prev = n;
        }
    }

    #[test]
    fn parts_follow_resolution_changes() {
        let mut a = ArchSpec::res_tiny(3, 16, 3);
        assert_eq!(a.stage_parts(), vec![0, 1, 2]);
        a.stages[1].downsample = false;
        assert_eq!(a.stage_parts(), vec![0, 0, 1]);
        assert_eq!(a.part_channels(), vec![32, 64]);
    }

    #[test]
    fn validate_rejects_odd_downsample() {
        let mut a = ArchSpec::res_tiny(3, 6, 3);
        assert!(a.validate().is_err());
        a.input_size = 8;
        assert!(a.validate().is_ok());
    }
}
