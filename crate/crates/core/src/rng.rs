//! Seeding conventions.
//!
//! Every random stream in the crate is a ChaCha8 keystream (a counter-based
//! generator) addressed by a 64-bit key and a 64-bit stream id. Keys for
//! distinct consumers are separated by hashing the user seed together with a
//! domain tag through SplitMix64, so for example the initialization stream and
//! the batch-order stream never overlap even when the user passes the same
//! integer to both.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub const DOMAIN_INIT: u64 = 0x494e_4954;
pub const DOMAIN_ORDER: u64 = 0x4f52_4445;
pub const DOMAIN_DATA: u64 = 0x4441_5441;
pub const DOMAIN_PROBE: u64 = 0x5052_4f42;
pub const DOMAIN_LANGEVIN: u64 = 0x4c41_4e47;
pub const DOMAIN_FISHER: u64 = 0x4649_5348;

/// One round of SplitMix64.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a seed with a domain tag.
pub fn derive(seed: u64, domain: u64) -> u64 {
    splitmix64(seed ^ splitmix64(domain))
}

/// The generator for stream `stream` of key `derive(seed, domain)`.
pub fn stream(seed: u64, domain: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, domain));
    rng.set_stream(stream);
    rng
}
