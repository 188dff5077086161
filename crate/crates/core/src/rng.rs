//! Seed derivation and order-stable parallel sampling.
//!
//! Work is cut into fixed-size chunks; chunk `c` draws from its own stream
//! derived from `(seed, c)`, and results are reassembled in index order. The
//! output is therefore identical for any number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::Result;

pub type Rng = ChaCha8Rng;

/// Samples per independently seeded chunk.
pub const CHUNK: usize = 512;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for stream `stream` of master seed `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ stream.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub fn rng_for(seed: u64, stream: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, stream))
}

/// FNV-1a, stable across platforms and releases.
pub fn name_hash(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// `f(rng, i)` for `i in 0..n`, chunk-parallel, in index order.
pub fn par_sample<T, F>(n: usize, seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut Rng, usize) -> T + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<Vec<T>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_for(seed, c as u64);
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n);
            (lo..hi).map(|i| f(&mut rng, i)).collect()
        })
        .collect();
    parts.into_iter().flatten().collect()
}

/// Fallible variant of [`par_sample`]; the first error in index order wins.
pub fn try_par_sample<T, F>(n: usize, seed: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut Rng, usize) -> Result<T> + Sync,
{
    par_sample(n, seed, f).into_iter().collect()
}
