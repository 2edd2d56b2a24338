//! Named random substreams derived from a single root seed.
//!
//! Every consumer of randomness asks for a stream keyed by a stage name and a
//! list of indices (subject, edge, repeat, ...). The derived seed depends only
//! on those keys, so results do not depend on scheduling or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a 64-bit seed from a root seed, a stage tag and an index path.
pub fn derive_seed(root: u64, stage: &str, path: &[u64]) -> u64 {
    let mut h = splitmix64(root);
    for b in stage.bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    // separator so that ("ab", []) and ("a", [b]) differ
    h = splitmix64(h ^ 0xFF);
    for &p in path {
        h = splitmix64(h ^ p);
    }
    h
}

pub fn stream(root: u64, stage: &str, path: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, stage, path))
}
