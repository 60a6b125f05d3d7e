//! Independent random streams keyed by integer coordinates.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream for `(seed, keys...)`; the result depends only on its inputs, so
/// work can be scheduled in any order.
pub fn stream(seed: u64, keys: &[u64]) -> ChaCha8Rng {
    let s = keys.iter().fold(splitmix(seed), |acc, k| splitmix(acc ^ splitmix(*k)));
    ChaCha8Rng::seed_from_u64(s)
}
