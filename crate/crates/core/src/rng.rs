//! Seeded random streams.
//!
//! Every stream is a ChaCha8 generator keyed by a domain tag and up to three
//! 64-bit coordinates, so results never depend on the order in which
//! instances or samples are visited.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags keep streams for different purposes disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Weights = 1,
    Sampling = 2,
    FewShot = 3,
    Mixture = 4,
}

/// Builds the stream for `(domain, seed, a, b)`.
pub fn stream(domain: Domain, seed: u64, a: u64, b: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&(domain as u64).to_le_bytes());
    key[8..16].copy_from_slice(&seed.to_le_bytes());
    key[16..24].copy_from_slice(&a.to_le_bytes());
    key[24..].copy_from_slice(&b.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Sampling stream for one sample of one instance.
pub fn sample_stream(run_seed: u64, instance: u64, sample: u64) -> ChaCha8Rng {
    stream(Domain::Sampling, run_seed, instance, sample)
}
