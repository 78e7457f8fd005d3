//! Deterministic random streams.
//!
//! Every random quantity in the pipeline comes from a ChaCha8 stream keyed by
//! `(seed, tag, index)`. The 32-byte ChaCha key is the little-endian
//! concatenation of `seed`, the 64-bit FNV-1a hash of `tag`, `index`, and
//! eight zero bytes. The mapping is injective in `(seed, index)` for a fixed
//! tag, so per-chunk and per-record streams never collide, and the output is
//! identical on every platform and for every thread count.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(tag: &str) -> u64 {
    tag.bytes().fold(FNV_OFFSET, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// Random stream for `(seed, tag, index)`.
pub fn stream(seed: u64, tag: &str, index: u64) -> StreamRng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&fnv1a(tag).to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// A child seed, the first word of the `(seed, tag, index)` stream.
pub fn derive_seed(seed: u64, tag: &str, index: u64) -> u64 {
    stream(seed, tag, index).next_u64()
}
