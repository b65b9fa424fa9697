//! Deterministic per-item random streams.
//!
//! Every particle (or chain, or probe) draws from its own ChaCha8 stream,
//! keyed by `(master seed, purpose, index)`. ChaCha is a counter-mode
//! generator, so stream `i` does not depend on how many numbers stream `j`
//! consumed or on which worker thread ran it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Separates the streams used for different jobs under one master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Purpose {
    InitialCondition,
    Dynamics,
    ForcedChain,
    Probes,
    Null,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::InitialCondition => 0x9e37_79b9_7f4a_7c15,
            Purpose::Dynamics => 0xbf58_476d_1ce4_e5b9,
            Purpose::ForcedChain => 0x94d0_49bb_1331_11eb,
            Purpose::Probes => 0x2545_f491_4f6c_dd1d,
            Purpose::Null => 0xd6e8_feb8_6659_fd93,
        }
    }
}

/// splitmix64 finaliser.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The stream for item `index` under `master`.
pub fn stream(master: u64, purpose: Purpose, index: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(master ^ purpose.tag()));
    rng.set_stream(index);
    rng
}
