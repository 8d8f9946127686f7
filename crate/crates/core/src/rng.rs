//! Seeded random substreams.
//!
//! All randomness in the pipeline flows from one master seed through named
//! substreams, so that e.g. model initialization is identical across runs
//! that only differ in data ordering. Derivation is a fixed hash of
//! `(master, name, index)`, stable across platforms and releases.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// FNV-1a over the stream name; cheap and collision-free for the handful
/// of fixed names used here.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A deterministic RNG for the substream `name` of `master`.
pub fn substream(master: u64, name: &str) -> ChaCha12Rng {
    substream_indexed(master, name, 0)
}

/// Like [`substream`] but with an extra index, e.g. one stream per epoch
/// or per utterance.
pub fn substream_indexed(master: u64, name: &str, index: u64) -> ChaCha12Rng {
    let tag = fnv1a(name.as_bytes());
    let mut seed = [0u8; 32];
    let mut state = master ^ tag.rotate_left(17) ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for chunk in seed.chunks_exact_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha12Rng::from_seed(seed)
}
