//! Seed derivation. Every random stream in the crate is a ChaCha generator
//! keyed by a master seed plus a (domain, index) counter, so work items can
//! run in any order or on any thread and still reproduce bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn domain_hash(domain: &str) -> u64 {
    // FNV-1a
    domain.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Derive a child seed for work item `index` within `domain`.
pub fn derive_seed(master: u64, domain: &str, index: u64) -> u64 {
    let a = splitmix64(master ^ domain_hash(domain));
    splitmix64(a ^ splitmix64(index.wrapping_add(0x632B_E59B_D9B4_E019)))
}

pub fn stream(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_stream(master: u64, domain: &str, index: u64) -> StreamRng {
    stream(derive_seed(master, domain, index))
}
