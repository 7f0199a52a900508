//! Seed splitting.
//!
//! Every random stream in a run is derived from one master seed, a purpose tag
//! and an index:
//!
//! ```text
//! seed(master, kind, index) = mix(mix(mix(master) ^ tag(kind)) ^ index)
//! ```
//!
//! where `mix` is the SplitMix64 finaliser. The derived 64-bit value seeds a
//! ChaCha8 generator. Because each client, replication and purpose owns its own
//! stream, results do not depend on the order in which work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    Availability,
    GradientNoise,
    Data,
    Replication,
    Estimator,
}

impl StreamKind {
    fn tag(self) -> u64 {
        match self {
            StreamKind::Availability => 0xA11C_E55E_0000_0001,
            StreamKind::GradientNoise => 0x9EAD_0015_E000_0002,
            StreamKind::Data => 0xDA7A_0000_0000_0003,
            StreamKind::Replication => 0x5E91_1CA7_0000_0004,
            StreamKind::Estimator => 0xE571_3A70_0000_0005,
        }
    }
}

/// SplitMix64 output function.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn split_seed(master: u64, kind: StreamKind, index: u64) -> u64 {
    mix(mix(mix(master) ^ kind.tag()) ^ index)
}

pub fn stream(master: u64, kind: StreamKind, index: u64) -> SimRng {
    SimRng::seed_from_u64(split_seed(master, kind, index))
}
