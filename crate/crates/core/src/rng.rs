//! Named random streams derived from one master seed.
//!
//! `stream(seed, name)` seeds ChaCha8 with the master seed and selects the ChaCha
//! stream `fnv1a64(name)`. Different names give independent sequences, so adding
//! draws to one subsystem never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub fn stream(master: u64, name: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(fnv1a64(name.as_bytes()));
    rng
}

/// `stream(master, "name/index")`.
pub fn indexed_stream(master: u64, name: &str, index: usize) -> ChaCha8Rng {
    stream(master, &format!("{name}/{index}"))
}
