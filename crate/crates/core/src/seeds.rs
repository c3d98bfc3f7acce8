//! Named random substreams derived from a single run seed.
//!
//! Every stochastic stage asks for its own stream (`corpus`, `lda`, `init`,
//! `rl`, ...) so stages can be re-run in isolation and still see the same
//! randomness.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with a stream name and any number of integer coordinates.
pub fn derive(seed: u64, stream: &str, coords: &[u64]) -> u64 {
    let mut h = splitmix(seed);
    for b in stream.bytes() {
        h = splitmix(h ^ u64::from(b));
    }
    for &c in coords {
        h = splitmix(h ^ c);
    }
    h
}

pub fn rng(seed: u64, stream: &str, coords: &[u64]) -> Rng {
    Rng::seed_from_u64(derive(seed, stream, coords))
}
