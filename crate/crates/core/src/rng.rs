//! Reproducible random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator keyed by
//! `(base_seed, domain)` and positioned on a stream packed from
//! `(episode, theta, replicate)`:
//!
//! ```text
//! stream = episode << 40 | theta << 20 | replicate
//! ```
//!
//! ChaCha is counter-based, so distinct streams never overlap, and a cell's
//! draws do not depend on which worker ran it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Separates unrelated uses of the same base seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Generate = 1,
    Observe = 2,
    Simulate = 3,
    ThetaSample = 4,
    GridSearch = 5,
    Evaluate = 6,
    Split = 7,
    Train = 8,
    Restart = 9,
    Init = 10,
}

const FIELD_BITS: u32 = 20;
const FIELD_MAX: usize = 1 << FIELD_BITS;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Packs the three cell indices into a ChaCha stream id.
pub fn stream_id(episode: usize, theta: usize, replicate: usize) -> u64 {
    assert!(
        episode < (1 << 24) && theta < FIELD_MAX && replicate < FIELD_MAX,
        "stream index out of range: ({episode}, {theta}, {replicate})"
    );
    ((episode as u64) << 40) | ((theta as u64) << FIELD_BITS) | replicate as u64
}

pub fn stream_rng(base_seed: u64, domain: Domain, episode: usize, theta: usize, replicate: usize) -> SimRng {
    let key = splitmix64(base_seed ^ splitmix64(domain as u64));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(stream_id(episode, theta, replicate));
    rng
}

/// Derives a child seed, e.g. one per harness repetition.
pub fn derive_seed(base_seed: u64, salt: u64) -> u64 {
    splitmix64(base_seed ^ splitmix64(salt.wrapping_add(0xA5A5)))
}
