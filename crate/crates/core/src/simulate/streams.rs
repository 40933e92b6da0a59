//! Counter-based stream derivation.
//!
//! A stream is the pair `(key, index)`: the key is a splitmix64 mix of the
//! master seed and a domain tag, the index selects one of the 2^64 ChaCha8
//! streams under that key. Replicate `i` therefore owns stream
//! `(key(master, domain), i)` regardless of which thread runs it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Domain tags keep independent uses of one master seed apart.
pub mod domain {
    pub const PATHS: u64 = 0x7061_7468;
    pub const PASTS: u64 = 0x7061_7374;
    pub const FUTURES: u64 = 0x6675_7475;
    pub const CENTERING: u64 = 0x6365_6e74;
    pub const PROJECTION: u64 = 0x7072_6f6a;
    pub const SIGMA: u64 = 0x7369_676d;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct StreamId {
    pub hi: u64,
    pub lo: u64,
}

#[inline]
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Key for `(master, domain)`.
pub fn stream_key(master: u64, domain: u64) -> u64 {
    splitmix64(master ^ splitmix64(domain))
}

/// Stream `index` in `domain` under `master`.
pub fn stream(master: u64, domain: u64, index: u64) -> StreamId {
    StreamId {
        hi: stream_key(master, domain),
        lo: index,
    }
}

impl StreamId {
    /// Generator positioned at the start of this stream.
    pub fn rng(self) -> ChaCha8Rng {
        let mut seed = [0u8; 32];
        let mut s = self.hi;
        for chunk in seed.chunks_exact_mut(8) {
            s = splitmix64(s);
            chunk.copy_from_slice(&s.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.lo);
        rng
    }

    /// A sub-family keyed by this stream (e.g. futures of one pinned past).
    pub fn child(self, domain: u64) -> u64 {
        splitmix64(self.hi ^ splitmix64(self.lo ^ splitmix64(domain)))
    }
}
