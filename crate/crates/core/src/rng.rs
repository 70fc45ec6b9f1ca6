//! Seeding conventions.
//!
//! Every random component draws from a [`ChaCha8Rng`] whose 64-bit seed is
//! derived from a master seed, a component name and an index:
//!
//! ```text
//! h = FNV-1a-64(component bytes)
//! seed = splitmix64(splitmix64(master ^ h) ^ index)
//! ```
//!
//! The 64-bit seed is expanded into the 32-byte ChaCha key with
//! `SeedableRng::seed_from_u64`. Since ChaCha is counter based, the stream is
//! independent of platform and word size.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Sub-seed for `component` at position `index` under `master`.
pub fn derive_seed(master: u64, component: &str, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ fnv1a(component.as_bytes())) ^ index)
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn component_rng(master: u64, component: &str, index: u64) -> Rng {
    rng_from_seed(derive_seed(master, component, index))
}
