//! Named random sub-streams derived from a single `u64` seed.
//!
//! Every consumer of randomness asks for a stream by purpose string (and
//! optionally an index), so results do not depend on call order or on how
//! work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable 64-bit hash of `(seed, purpose, index)`.
pub fn derive_seed(seed: u64, purpose: &str, index: u64) -> u64 {
    let mut h = FNV_OFFSET;
    for b in purpose.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    splitmix64(splitmix64(seed ^ h).wrapping_add(index))
}

pub fn stream(seed: u64, purpose: &str) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(seed, purpose, 0))
}

pub fn indexed_stream(seed: u64, purpose: &str, index: u64) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(seed, purpose, index))
}
