//! Seeded random streams.
//!
//! Every run owns one [`StreamRng`]. Streams are derived from a master seed
//! and a (run index, purpose tag) pair through a splitmix64 chain, so results
//! never depend on how runs are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Purpose tag for the instance-generation stream of a macro run.
pub const TAG_INSTANCE: u64 = 0;

/// Purpose tag for the sampling stream of sampler number `slot` in a macro run.
pub fn tag_sampler(slot: usize) -> u64 {
    1 + slot as u64
}

/// splitmix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for stream `(run, tag)` under `master`:
/// `splitmix64(splitmix64(master ^ splitmix64(run)) ^ tag)`.
pub fn derive_seed(master: u64, run: u64, tag: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(run)) ^ tag)
}

pub fn stream(master: u64, run: u64, tag: u64) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(master, run, tag))
}

pub fn from_seed(seed: u64) -> StreamRng {
    StreamRng::seed_from_u64(seed)
}
