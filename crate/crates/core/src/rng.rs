//! Labeled random streams derived from one seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A generator for `(seed, label, index)`. Distinct labels give independent
/// ChaCha streams, so drawing from one never shifts another.
pub fn stream(seed: u64, label: &str, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(label) ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
