//! Counter-based random streams.
//!
//! Every replicate, minibatch step or evaluation pass gets its own ChaCha20
//! stream keyed by `(seed, stream id)`, so results do not depend on the
//! order in which parallel workers run.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub type StreamRng = ChaCha20Rng;

/// Independent stream `stream` of the generator seeded by `seed`.
pub fn stream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Packs a two-level index (e.g. epoch and step) into one stream id.
pub fn stream2(seed: u64, major: u64, minor: u64) -> StreamRng {
    stream(seed, (major << 32) ^ (minor & 0xffff_ffff))
}

/// Domain tags keep streams used for different purposes disjoint.
pub mod domain {
    pub const SWEEP: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const INIT: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const STEP: u64 = 5;
    pub const EVAL: u64 = 6;
    pub const SYNTH: u64 = 7;
}

/// Seed for a derived sub-generator: mixes a domain tag into the base seed.
pub fn derive_seed(seed: u64, domain: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ domain.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
