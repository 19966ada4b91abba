//! Seeded stream RNGs.
//!
//! Every stochastic component draws from a ChaCha stream addressed by
//! `(master seed, domain, index)`. Streams are independent by construction,
//! so per-particle and per-path work can run in parallel and still produce
//! the same numbers as a sequential run.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derives independent RNG streams from a single master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedSequence {
    master: u64,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl SeedSequence {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// RNG for stream `(domain, index)`. Both must fit in 32 bits so the
    /// pair maps injectively onto the ChaCha stream id.
    pub fn stream(&self, domain: u64, index: u64) -> ChaCha8Rng {
        assert!(domain < (1 << 32), "stream domain out of range");
        assert!(index < (1 << 32), "stream index out of range");
        let mut state = self.master;
        let mut seed = [0u8; 32];
        for chunk in seed.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream((domain << 32) | index);
        rng
    }
}

/// Plain single-stream RNG for operations taking a bare integer seed.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    SeedSequence::new(seed).stream(0, 0)
}
