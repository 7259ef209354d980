//! Quasi-random sampling and per-path random streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PRIMES: [u32; 48] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97, 101, 103, 107,
    109, 113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173, 179, 181, 191, 193, 197, 199, 211, 223,
];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let (mut f, mut r) = (inv, 0.0);
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

/// Halton sequence with a seeded Cranley–Patterson shift.
#[derive(Clone, Debug)]
pub struct Halton {
    shift: Vec<f64>,
}

impl Halton {
    pub fn new(dims: usize, seed: u64) -> Self {
        assert!(dims <= PRIMES.len(), "at most {} Halton dimensions", PRIMES.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            shift: (0..dims).map(|_| rng.random::<f64>()).collect(),
        }
    }

    pub fn dims(&self) -> usize {
        self.shift.len()
    }

    /// Point `index` of the shifted sequence, in `[0,1)^dims`.
    pub fn point(&self, index: u64, out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate().take(self.dims()) {
            let v = radical_inverse(index + 1, PRIMES[k] as u64) + self.shift[k];
            *o = v - v.floor();
        }
    }
}

/// Independent ChaCha stream for `(seed, stream)`; the order in which
/// streams are consumed never changes their contents.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
