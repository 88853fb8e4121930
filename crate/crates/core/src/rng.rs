//! Deterministic random streams keyed by `(global_seed, epoch, sample_index)`.
//!
//! Every random choice in the pipeline (greyscale coin, crop offsets,
//! permutation draw, neighbour draw, weight init, batch order) comes from an
//! [`RngStream`]. Two streams built from the same key produce the same draws,
//! so sample preparation is independent of iteration or worker order.

use rand::{Error as RandError, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Epoch slot reserved for held-out evaluation samples.
pub const EVAL_EPOCH: u64 = u64::MAX;
/// Epoch slot reserved for parameter initialisation.
pub const INIT_EPOCH: u64 = u64::MAX - 1;
/// Sample slot reserved for per-epoch batch ordering.
pub const ORDER_INDEX: u64 = u64::MAX;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct RngStream {
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(global_seed: u64, epoch: u64, sample_index: u64) -> Self {
        let mut seed = [0u8; 32];
        let a = splitmix64(global_seed);
        let b = splitmix64(a ^ epoch);
        let c = splitmix64(b ^ sample_index.rotate_left(17));
        let d = splitmix64(c ^ 0xC0FF_EE00_D15E_A5E5);
        for (chunk, word) in seed.chunks_exact_mut(8).zip([a, b, c, d]) {
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        Self {
            inner: ChaCha8Rng::from_seed(seed),
        }
    }

    /// Stream for a single seed, e.g. a permutation-set or head initialisation.
    pub fn from_seed(seed: u64) -> Self {
        Self::new(seed, 0, 0)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), RandError> {
        self.inner.try_fill_bytes(dest)
    }
}
