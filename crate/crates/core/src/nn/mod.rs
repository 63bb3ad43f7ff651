//! Multi-head networks partitioned by feature-map scale.

mod arch;
pub mod checkpoint;
mod network;

pub use arch::{scale_channels, ArchSpec, BlockKind, HeadOptions, ScalingFactor, StageSpec};
pub use network::{build_multihead, jitter_params, Forward, HeadConfig, HeadOrder, Mode, MultiHeadNetwork, RunningStats};
