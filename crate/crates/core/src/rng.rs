//! Deterministic random streams and low-discrepancy point sets.
//!
//! Every random draw in the crate comes from a stream keyed by
//! `(seed, purpose tag, index)`, so adding or redrawing samples in one stream
//! never shifts the values seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags used to split random streams.
pub mod tag {
    pub const GROUND_TRUTH: u64 = 1;
    pub const TRAIN: u64 = 2;
    pub const TEST: u64 = 3;
    pub const NOISE_TRAIN: u64 = 4;
    pub const NOISE_TEST: u64 = 5;
    pub const INSTANCE: u64 = 6;
    pub const DESIGN: u64 = 10;
    pub const FIT: u64 = 11;
    pub const ACQUISITION: u64 = 12;
    pub const PROFILE: u64 = 13;
    pub const HALTON_SHIFT: u64 = 14;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `(seed, tag, index)` into a single 64-bit seed.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ tag.rotate_left(17)) ^ index.rotate_left(41))
}

/// A ChaCha stream keyed by `(seed, tag)` positioned on stream `index`.
pub fn keyed_rng(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let words = [
        splitmix64(seed),
        splitmix64(seed ^ 0x5151_5151),
        splitmix64(tag),
        splitmix64(tag ^ seed.rotate_left(7)),
    ];
    for (chunk, w) in key.chunks_exact_mut(8).zip(words) {
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

const PRIMES: [u32; 32] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
    97, 101, 103, 107, 109, 113, 127, 131,
];

/// Largest dimension supported by [`Halton`].
pub const MAX_HALTON_DIM: usize = PRIMES.len();

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

/// Halton sequence in `[0,1)^d` with a seeded Cranley-Patterson rotation.
#[derive(Debug, Clone)]
pub struct Halton {
    shift: Vec<f64>,
}

impl Halton {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(
            dim <= MAX_HALTON_DIM,
            "Halton sequence supports at most {MAX_HALTON_DIM} dimensions"
        );
        let shift = (0..dim)
            .map(|j| {
                let bits = derive_seed(seed, tag::HALTON_SHIFT, j as u64) >> 11;
                bits as f64 / (1u64 << 53) as f64
            })
            .collect();
        Self { shift }
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    /// The `i`-th point (0-based; the sequence origin is skipped).
    pub fn point(&self, i: usize) -> Vec<f64> {
        self.shift
            .iter()
            .zip(PRIMES)
            .map(|(s, p)| {
                let v = radical_inverse(i as u64 + 1, p as u64) + s;
                v - v.floor()
            })
            .collect()
    }

    pub fn points(&self, n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|i| self.point(i)).collect()
    }
}
