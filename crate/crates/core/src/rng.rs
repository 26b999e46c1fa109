//! Counter-based random streams.
//!
//! Every random quantity is drawn from a ChaCha8 stream whose key is derived
//! from a domain tag and a caller key, and whose stream number is the sample
//! index. A sample's randomness therefore depends only on
//! (domain, key, index), never on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags separating independent uses of the same key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    /// Standard normals driving the discretized field.
    Field = 0x0066_6965_6c64,
    /// The independent Gaussian Ω of the scaling law.
    Omega = 0x006f_6d65_6761,
    /// Standard exponentials paired with bank masses.
    Exponential = 0x6578_706f,
    /// Gaussian proposals of importance-sampled estimators.
    Importance = 0x696d_706f_7274,
    /// Synthetic laws used by oracles.
    Synthetic = 0x7379_6e74,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream for sample `index` under (`domain`, `key`).
pub fn stream(domain: Domain, key: u64, index: u64) -> ChaCha8Rng {
    let mut state = (domain as u64) ^ key.rotate_left(17);
    let _ = splitmix64(&mut state);
    state ^= key;
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(index);
    rng
}
