//! Seeded random streams.
//!
//! Every node draws from its own substreams, derived from the scenario seed
//! and the node id, so adding a node leaves the draws of every other node
//! untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

use crate::kernel::NodeId;

/// One 64-bit mixing round (splitmix64 finalizer).
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combines several words into one well-mixed value. Order matters.
pub fn hash_words(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0xA076_1D64_78BD_642F, |acc, w| mix64(acc ^ mix64(*w)))
}

/// FNV-1a over bytes; used for stable content fingerprints.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Which family of draws a substream serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stream {
    Radio = 1,
    Mobility = 2,
    App = 3,
}

/// Lazily created per-(node, stream) generators.
#[derive(Debug, Clone)]
pub struct RngStreams {
    seed: u64,
    streams: BTreeMap<(NodeId, Stream), ChaCha8Rng>,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        Self { seed, streams: BTreeMap::new() }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn get(&mut self, node: NodeId, stream: Stream) -> &mut ChaCha8Rng {
        let seed = self.seed;
        self.streams.entry((node, stream)).or_insert_with(|| {
            ChaCha8Rng::seed_from_u64(hash_words(&[seed, u64::from(node.0), stream as u64]))
        })
    }
}
