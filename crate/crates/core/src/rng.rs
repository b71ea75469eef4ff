//! Seeded random streams.
//!
//! Every stochastic quantity is drawn from a ChaCha stream keyed by
//! `(seed, domain, index)`. ChaCha is counter based, so stream `index` for a
//! given key is fixed no matter which thread consumes it or in which order,
//! and results do not depend on the worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tag mixed into the stream key so that independent stages sharing a
/// user seed never reuse the same random numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamDomain {
    Langevin,
    Matheron,
    PotentialMc,
    Metrics,
    Selection,
    ModelSelection,
    Synthetic,
    Split,
}

impl StreamDomain {
    fn tag(self) -> u64 {
        match self {
            StreamDomain::Langevin => 0x6c61_6e67_6576_696e,
            StreamDomain::Matheron => 0x6d61_7468_6572_6f6e,
            StreamDomain::PotentialMc => 0x706f_7465_6e74_6d63,
            StreamDomain::Metrics => 0x6d65_7472_6963_7321,
            StreamDomain::Selection => 0x7365_6c65_6374_696f,
            StreamDomain::ModelSelection => 0x6879_7065_7270_6172,
            StreamDomain::Synthetic => 0x7379_6e74_6865_7469,
            StreamDomain::Split => 0x7370_6c69_7421_2121,
        }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent stream number `index` of the family `(seed, domain)`.
pub fn stream(seed: u64, domain: StreamDomain, index: u64) -> ChaCha8Rng {
    let mut state = seed ^ domain.tag();
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}
