//! Counter-based stream derivation for reproducible parallel runs.
//!
//! Every random stream in the workspace is derived from a master seed and a
//! path of labels, so the stream a worker sees depends only on *what* it is
//! computing, never on scheduling order. This is what makes CSV outputs
//! byte-identical across reruns even when draws execute on a rayon pool.

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

/// SplitMix64 finalizer; good avalanche behavior for label mixing.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a 64-bit stream key from a master seed and a label path.
pub fn derive_key(master: u64, path: &[u64]) -> u64 {
    let mut state = splitmix64(master ^ 0x5851_f42d_4c95_7f2d);
    for &label in path {
        state = splitmix64(state ^ splitmix64(label.wrapping_add(0x14057_b7ef_767_814f)));
    }
    state
}

/// A seeded random stream addressed by `(master, path)`.
pub fn stream(master: u64, path: &[u64]) -> ChaCha8Rng {
    let key = derive_key(master, path);
    let mut seed = [0u8; 32];
    let mut s = key;
    for chunk in seed.chunks_mut(8) {
        s = splitmix64(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}
