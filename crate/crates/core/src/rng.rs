//! Seeded random streams.
//!
//! Every replica of every experiment draws from its own ChaCha8 stream. The
//! stream id is a hash of the experiment seed and the replica's labels, so a
//! replica's randomness does not depend on which worker runs it or when.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream id for a replica identified by `labels` under experiment `seed`.
pub fn stream_id(seed: u64, labels: &[u64]) -> u64 {
    labels
        .iter()
        .fold(mix64(seed), |acc, &l| mix64(acc ^ mix64(l.wrapping_add(0x5851_F42D_4C95_7F2D))))
}

/// A deterministic random source identified by `(seed, stream)`.
///
/// Lattice steps consume two bits each from a buffered 64-bit word, so a
/// walk's realization depends only on the seed, the stream, and the order of
/// draws.
#[derive(Clone, Debug)]
pub struct RandomSource {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
    bits: u64,
    nbits: u32,
}

impl RandomSource {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RandomSource {
            seed,
            stream,
            rng,
            bits: 0,
            nbits: 0,
        }
    }

    /// Source for the replica named by `labels` within experiment `seed`.
    pub fn derive(seed: u64, labels: &[u64]) -> Self {
        RandomSource::new(seed, stream_id(seed, labels))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    #[inline]
    fn take_bits(&mut self, k: u32) -> u64 {
        debug_assert!((1..=32).contains(&k));
        if self.nbits < k {
            self.bits = self.rng.next_u64();
            self.nbits = 64;
        }
        let out = self.bits & ((1u64 << k) - 1);
        self.bits >>= k;
        self.nbits -= k;
        out
    }

    /// Uniform lattice direction (E, N, W, S as 0..4).
    #[inline]
    pub fn direction(&mut self) -> u8 {
        self.take_bits(2) as u8
    }

    /// Uniform integer in `0..n` by rejection on the smallest sufficient
    /// number of bits.
    #[inline]
    pub fn below(&mut self, n: u32) -> u32 {
        debug_assert!(n >= 1);
        if n == 1 {
            return 0;
        }
        let k = 32 - (n - 1).leading_zeros();
        loop {
            let v = self.take_bits(k) as u32;
            if v < n {
                return v;
            }
        }
    }

    /// Uniform `f64` in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Standard normal deviate (Box-Muller).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}
