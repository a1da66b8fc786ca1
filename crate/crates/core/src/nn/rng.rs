//! Counter-style seeded streams.
//!
//! Every random draw in the crate comes from a ChaCha stream whose seed is a
//! hash of `(seed, label, indices...)`, so the order in which streams are
//! opened never changes what they produce.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// splitmix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream_seed(seed: u64, label: &str, indices: &[u64]) -> u64 {
    let mut h = mix64(seed ^ fnv1a(label.as_bytes()));
    for &i in indices {
        h = mix64(h ^ i);
    }
    h
}

pub fn stream(seed: u64, label: &str, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, label, indices))
}

/// Keys dropout masks by `(seed, epoch, batch, layer path)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DropoutKey {
    pub seed: u64,
    pub epoch: u64,
    pub batch: u64,
}

impl DropoutKey {
    pub fn new(seed: u64, epoch: u64, batch: u64) -> Self {
        Self { seed, epoch, batch }
    }

    pub fn stream(&self, path: &str) -> ChaCha8Rng {
        stream(self.seed, path, &[self.epoch, self.batch])
    }
}
