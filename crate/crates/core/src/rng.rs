//! Deterministic random-stream derivation.
//!
//! Every random draw in a session comes from a stream keyed by
//! (master_seed, station_id, episode, domain). Streams are independent of
//! execution order, so serial and parallel runs produce identical results.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a derived stream is used for. Separate domains keep environment
/// randomness and agent exploration from ever sharing a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamDomain {
    Flows,
    Exploration,
}

impl StreamDomain {
    fn tag(self) -> u64 {
        match self {
            StreamDomain::Flows => 0,
            StreamDomain::Exploration => 1,
        }
    }
}

/// Derive the RNG for one (station, episode, domain) triple.
pub fn stream(master_seed: u64, station_id: u32, episode: u64, domain: StreamDomain) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[0..8].copy_from_slice(&master_seed.to_le_bytes());
    seed[8..16].copy_from_slice(&u64::from(station_id).to_le_bytes());
    seed[16..24].copy_from_slice(&episode.to_le_bytes());
    seed[24..32].copy_from_slice(&domain.tag().to_le_bytes());
    ChaCha8Rng::from_seed(seed)
}
