//! Named sub-seeds derived from one root seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministically derives a child seed from `root` and a stage tag.
pub fn derive(root: u64, tag: &str) -> u64 {
    // FNV-1a over the tag, then mixed with the root.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    splitmix64(root ^ splitmix64(h))
}

/// Same as [`derive`] with an integer index appended to the tag.
pub fn derive_indexed(root: u64, tag: &str, index: u64) -> u64 {
    splitmix64(derive(root, tag) ^ splitmix64(index.wrapping_add(1)))
}

pub fn rng(root: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(root, tag))
}
