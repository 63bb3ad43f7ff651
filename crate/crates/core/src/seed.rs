//! Master-seed fan-out.
//!
//! A run has one master seed. Every random stream (weight init, shuffling,
//! augmentation, dataset synthesis) gets its own ChaCha8 generator whose seed is
//! `splitmix64` folded over `(master, stream tag, index...)`. The rule is fixed:
//!
//! ```text
//! s = splitmix64(master)
//! s = splitmix64(s ^ tag)
//! for each index i: s = splitmix64(s ^ i)
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 0x1_0001,
    HeadInit = 0x1_0002,
    Shuffle = 0x1_0003,
    Augment = 0x1_0004,
    ToyTrain = 0x1_0005,
    ToyTest = 0x1_0006,
    Probe = 0x1_0007,
    Member = 0x1_0008,
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, stream: Stream, indices: &[u64]) -> u64 {
    let mut s = splitmix64(splitmix64(master) ^ stream as u64);
    for &i in indices {
        s = splitmix64(s ^ i);
    }
    s
}

pub fn stream_rng(master: u64, stream: Stream, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, stream, indices))
}
