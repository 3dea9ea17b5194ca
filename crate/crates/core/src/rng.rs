//! Seeded random streams.
//!
//! Every stochastic component takes an explicit stream. Child streams are
//! derived from a master seed and a (purpose, index) pair so that parallel
//! trials never share state and results do not depend on thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Stream purposes. Distinct purposes never collide for the same index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Topology = 1,
    Schedule = 2,
    Trials = 3,
    Signal = 4,
    Links = 5,
}

pub fn stream(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive an independent seed from a master seed.
pub fn derive_seed(master: u64, purpose: Purpose, index: u64) -> u64 {
    // splitmix64 finalizer over the mixed inputs
    let mut z = master
        ^ (purpose as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child stream `index` of a master seed. Uses ChaCha's stream counter so the
/// children are independent keystreams of the same key.
pub fn child_stream(master: u64, purpose: Purpose, index: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master, purpose, 0));
    rng.set_stream(index);
    rng
}
