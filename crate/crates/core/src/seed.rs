//! Counter-based seed fan-out.
//!
//! Every random stream in a run is keyed by a path such as
//! `(Stream::Channel, round, user)` and derived from the master seed by
//! SplitMix64 mixing, so the value a stream receives never depends on the
//! order in which other streams were consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Top-level namespaces for derived streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Partition = 1,
    Devices = 2,
    Clustering = 3,
    Channel = 4,
    Selection = 5,
    Matching = 6,
    Training = 7,
    Data = 8,
    Baseline = 9,
    Bench = 10,
}

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `master` and a key path.
pub fn derive(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    master: u64,
}

impl SeedTree {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn seed(&self, stream: Stream, path: &[u64]) -> u64 {
        let mut full = Vec::with_capacity(path.len() + 1);
        full.push(stream as u64);
        full.extend_from_slice(path);
        derive(self.master, &full)
    }

    pub fn rng(&self, stream: Stream, path: &[u64]) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed(stream, path))
    }
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
