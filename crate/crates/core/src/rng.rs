//! Named, independently reproducible random streams derived from one seed.
//!
//! A stream key is `sha256(master || name || index)`, which seeds a ChaCha8
//! generator. Two streams never share state, and any stream can be rebuilt
//! from `(master, name, index)` alone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Named substreams used across the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Init,
    Shuffle,
    Noise,
    LabelSample,
    Corruption,
    RandomK,
}

impl Stream {
    pub fn name(self) -> &'static str {
        match self {
            Stream::Init => "init",
            Stream::Shuffle => "shuffle",
            Stream::Noise => "noise",
            Stream::LabelSample => "label_sample",
            Stream::Corruption => "corruption",
            Stream::RandomK => "random_k",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrngStreams {
    master: u64,
}

impl PrngStreams {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn stream(&self, stream: Stream) -> ChaCha8Rng {
        self.substream(stream, 0)
    }

    /// Indexed substream, used where draws must not depend on evaluation order.
    pub fn substream(&self, stream: Stream, index: u64) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(self.key(stream, index))
    }

    /// A 64-bit seed derived from a substream, for APIs that take plain seeds.
    pub fn derive_seed(&self, stream: Stream, index: u64) -> u64 {
        let key = self.key(stream, index);
        u64::from_le_bytes(key[..8].try_into().expect("32-byte key"))
    }

    fn key(&self, stream: Stream, index: u64) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.master.to_le_bytes());
        h.update(stream.name().as_bytes());
        h.update([0u8]);
        h.update(index.to_le_bytes());
        h.finalize().into()
    }
}

/// Generator for a bare 64-bit seed (corruption specs, synthetic tasks).
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(b"eseize-seed");
    h.update(seed.to_le_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}
