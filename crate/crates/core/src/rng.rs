//! Seeded random streams.
//!
//! Every consumer of randomness asks for a stream keyed by `(seed, label)`.
//! Streams with different labels are independent ChaCha8 streams over the same
//! key, so parameter draws and token draws can be replayed separately.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub mod labels {
    pub const PARAMS: &str = "params";
    pub const TOKENS: &str = "tokens";
    pub const INIT: &str = "init";
    pub const GIBBS: &str = "gibbs";
    pub const POSTERIOR: &str = "posterior";
    pub const ANOMALIES: &str = "anomalies";
}

fn label_hash(label: &str) -> u64 {
    // FNV-1a, stable across platforms and releases.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn stream(seed: u64, label: &str) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(label_hash(label));
    rng
}

/// Seed for the `index`-th derived run (re-initialisation attempts, multi-run protocols).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    if index == 0 {
        return seed;
    }
    // splitmix64 finaliser over the pair
    let mut z = seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of restart `restart` within one fit; restart 0 keeps `seed`.
pub fn restart_seed(seed: u64, restart: usize) -> u64 {
    derive_seed(seed, (restart as u64) << 20)
}
