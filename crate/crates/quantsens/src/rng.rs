//! Counter-based random streams.
//!
//! Every stream is addressed by `(seed, domain, index)`. Simulation work is split
//! into fixed-size chunks, each with its own stream, so results do not depend on
//! how many threads execute the chunks.

use std::ops::Range;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::special::norm_quantile;

/// Rows per independently seeded chunk.
pub const CHUNK_ROWS: usize = 4096;

/// Root seed of a computation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SeedSpec(pub u64);

impl From<u64> for SeedSpec {
    fn from(v: u64) -> Self {
        SeedSpec(v)
    }
}

/// Stream domains keep unrelated random consumers apart under one root seed.
pub mod domain {
    pub const SAMPLE: u64 = 1;
    pub const SCENARIOS: u64 = 2;
    pub const CONDITIONAL: u64 = 0x100;
    pub const BOOTSTRAP: u64 = 3;
    pub const COMPOUND: u64 = 4;
    pub const DISCRETE: u64 = 5;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A single reproducible random stream.
pub struct Stream(ChaCha8Rng);

impl Stream {
    pub fn new(seed: SeedSpec, domain: u64, index: u64) -> Self {
        let mut key = [0u8; 32];
        let mut state = splitmix(seed.0 ^ splitmix(domain));
        for word in key.chunks_exact_mut(8) {
            state = splitmix(state);
            word.copy_from_slice(&state.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(index);
        Stream(rng)
    }

    /// Uniform on the open interval (0, 1), never exactly 0 or 1.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        ((self.0.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal by inversion.
    #[inline]
    pub fn normal(&mut self) -> f64 {
        norm_quantile(self.uniform())
    }

    /// Uniform integer in `0..n`.
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        ((self.0.next_u64() as u128 * n as u128) >> 64) as usize
    }
}

/// Runs `f` over consecutive row ranges of at most [`CHUNK_ROWS`], in parallel,
/// handing each range its own stream. Results come back in row order.
pub fn par_chunks<T, F>(n: usize, seed: SeedSpec, domain: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut Stream, Range<usize>) -> Result<T> + Sync,
{
    let chunks = n.div_ceil(CHUNK_ROWS);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut stream = Stream::new(seed, domain, c as u64);
            let start = c * CHUNK_ROWS;
            f(&mut stream, start..(start + CHUNK_ROWS).min(n))
        })
        .collect()
}
