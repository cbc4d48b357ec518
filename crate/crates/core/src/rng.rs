//! Seed derivation for independent random streams.
//!
//! Every consumer of randomness (a user's local step, the server, grouping,
//! participant sampling) gets its own ChaCha stream keyed by a tuple of
//! integers, so results never depend on the order in which tasks execute.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Stream purposes, mixed into the key so that e.g. the server's step-3
/// stream never coincides with user 3's.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Partition = 1,
    Participants = 2,
    Groups = 3,
    UserStep = 4,
    ServerStep = 5,
    Init = 6,
    Dataset = 7,
    Split = 8,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a stream from a master seed and a key path.
pub fn stream(master: u64, purpose: Purpose, key: &[u64]) -> Stream {
    let mut h = splitmix64(master ^ 0x5353_464c_0000_0000);
    h = splitmix64(h ^ purpose as u64);
    for &k in key {
        h = splitmix64(h ^ k);
    }
    ChaCha8Rng::seed_from_u64(h)
}
