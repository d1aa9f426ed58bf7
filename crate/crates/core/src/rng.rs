//! Seeded random streams and argmax helpers.
//!
//! A run's master seed is split into named, independent ChaCha streams
//! (environment, initialisation, replay sampling, exploration, evaluation)
//! so that consuming randomness in one place never shifts another.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// FNV-1a, used to turn stream names into ChaCha stream ids.
const fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    let mut i = 0;
    while i < bytes.len() {
        hash ^= bytes[i] as u64;
        hash = hash.wrapping_mul(0x0100_0000_01b3);
        i += 1;
    }
    hash
}

/// Independent stream `name` derived from `seed`.
pub fn stream(seed: u64, name: &str) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(name.as_bytes()));
    rng
}

/// All indices attaining the maximum (exact float equality).
pub fn argmax_set(values: &[f64]) -> Vec<usize> {
    let mut best = f64::NEG_INFINITY;
    let mut set = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        if v > best {
            best = v;
            set.clear();
            set.push(i);
        } else if v == best {
            set.push(i);
        }
    }
    set
}

/// Argmax with a uniformly random choice among ties. Draws from `rng` only
/// when there is more than one maximiser.
pub fn argmax_tie_break<R: Rng + ?Sized>(values: &[f64], rng: &mut R) -> usize {
    let set = argmax_set(values);
    match set.len() {
        0 => 0,
        1 => set[0],
        n => set[rng.random_range(0..n)],
    }
}

/// First index attaining the maximum.
pub fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
