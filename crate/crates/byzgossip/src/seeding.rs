//! Deterministic derivation of independent RNG streams.
//!
//! Every source of randomness in a run is a ChaCha stream whose seed is
//! derived from the run seed plus a list of labels (a stream tag and the
//! relevant indices, e.g. worker id and round). Streams therefore do not
//! depend on evaluation order or thread scheduling, which is what makes
//! runs reproducible and sweeps invariant to parallelism.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags. Keeping them in one place guarantees two different
/// purposes never collide on the same derived seed.
pub mod stream {
    pub const TOPOLOGY: u64 = 1;
    pub const BYZ_ATTACH: u64 = 2;
    pub const OBJECTIVE: u64 = 3;
    pub const GRADIENT: u64 = 4;
    pub const INIT_MOMENTUM: u64 = 5;
    pub const BUCKETING: u64 = 6;
    pub const CONSENSUS_INIT: u64 = 7;
}

/// SplitMix64 finalizer; a fixed bijective mixer on `u64`.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds `labels` into `parent` one at a time. The result changes if any
/// label changes, including permutations of the same label values.
pub fn derive_seed(parent: u64, labels: &[u64]) -> u64 {
    let mut h = mix64(parent);
    for &label in labels {
        h = mix64(h ^ mix64(label));
    }
    h
}

/// A ChaCha stream keyed by `(parent, labels)`.
pub fn stream_rng(parent: u64, labels: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(parent, labels))
}
