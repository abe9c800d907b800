//! Seed derivation.
//!
//! Every random stream is a ChaCha8 generator seeded from
//! `mix_seed(master, replica, role)`. The mixing function is SplitMix64
//! applied in sequence:
//!
//! ```text
//! s = splitmix64(master)
//! s = splitmix64(s ^ replica)
//! s = splitmix64(s ^ role_tag)
//! ```
//!
//! so jump randomness and observation noise for a given replica can be
//! replayed independently of each other.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamRole {
    Jump,
    Noise,
}

impl StreamRole {
    fn tag(self) -> u64 {
        match self {
            StreamRole::Jump => 0x4A55_4D50,
            StreamRole::Noise => 0x4E4F_4953,
        }
    }
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn mix_seed(master: u64, replica: u64, role: StreamRole) -> u64 {
    let s = splitmix64(master);
    let s = splitmix64(s ^ replica);
    splitmix64(s ^ role.tag())
}

pub fn stream(master: u64, replica: u64, role: StreamRole) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(master, replica, role))
}
