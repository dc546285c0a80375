//! Deterministic seed derivation.
//!
//! Every random draw in the pipeline flows from one master seed. Each
//! pipeline stage derives its own stream seed from the master seed plus a
//! fixed role string, so adding draws to one stage never perturbs another.
//! The derivation is a pinned FNV-1a/splitmix64 combination rather than
//! `std`'s hasher, which is not stable across releases.

use rand_chacha::ChaCha20Rng;
use rand_chacha::rand_core::SeedableRng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a stream seed from `master` and a role label.
///
/// Distinct roles give independent-looking seeds; the same inputs always give
/// the same output, on every platform.
pub fn derive_seed(master: u64, role: &str) -> u64 {
    let mut h = FNV_OFFSET;
    for byte in master.to_le_bytes() {
        h = (h ^ u64::from(byte)).wrapping_mul(FNV_PRIME);
    }
    for byte in role.bytes() {
        h = (h ^ u64::from(byte)).wrapping_mul(FNV_PRIME);
    }
    splitmix64(h)
}

/// Builds the crate's standard RNG from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}
