//! Seed discipline.
//!
//! Every random draw in a run comes from a substream derived from the master
//! seed and a label path `(purpose, indices...)`. The derivation hashes the
//! purpose string with 64-bit FNV-1a, folds in each index, and finalizes with
//! the SplitMix64 mixer; the result seeds a `ChaCha8Rng`. Streams for
//! different labels are independent, so adding a variant or an extra draw in
//! one place never shifts the randomness seen anywhere else.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8], mut hash: u64) -> u64 {
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive the 64-bit seed of the substream `(purpose, indices)` under `master`.
pub fn derive_seed(master: u64, purpose: &str, indices: &[u64]) -> u64 {
    let mut h = fnv1a(&master.to_le_bytes(), FNV_OFFSET);
    h = fnv1a(purpose.as_bytes(), h);
    for &i in indices {
        h = fnv1a(&i.to_le_bytes(), h);
        h = splitmix64(h);
    }
    splitmix64(h)
}

/// Factory of labelled substreams under one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Streams {
    master: u64,
}

impl Streams {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn rng(&self, purpose: &str, indices: &[u64]) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(derive_seed(self.master, purpose, indices))
    }
}

/// A `ChaCha8Rng` seeded directly from `seed`.
pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
