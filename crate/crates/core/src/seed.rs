//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! keyed by a seed mixed from a base seed and a purpose tag.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combines a seed with a stream index.
pub fn mix(seed: u64, stream: u64) -> u64 {
    splitmix(seed ^ splitmix(stream.wrapping_add(0x632B_E59B_D9B4_E019)))
}

/// Stable 64-bit tag for a label (FNV-1a).
pub fn tag(label: &str) -> u64 {
    label.bytes().fold(0xCBF2_9CE4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

pub fn rng(seed: u64, label: &str) -> Rng {
    Rng::seed_from_u64(mix(seed, tag(label)))
}

pub fn rng_indexed(seed: u64, label: &str, index: u64) -> Rng {
    Rng::seed_from_u64(mix(mix(seed, tag(label)), index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = rng(7, "corpus").random();
        let b: u64 = rng(7, "corpus").random();
        let c: u64 = rng(7, "init").random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(mix(1, 0), mix(1, 1));
    }
}
