use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::Matrix;
use crate::{Error, Result};

/// Deterministic random stream.
///
/// Backed by ChaCha8: the 64-bit master seed is expanded into the cipher key
/// and a component label selects the ChaCha stream id, so each labelled
/// component draws from its own sub-stream and adding a component never
/// shifts the numbers another one sees.
#[derive(Clone, Debug)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    /// Stream 0 of `seed`.
    pub fn new(seed: u64) -> Self {
        Rng {
            inner: ChaCha8Rng::from_seed(expand_seed(seed)),
        }
    }

    /// Independent sub-stream identified by `(seed, label)`.
    pub fn substream(seed: u64, label: &str) -> Self {
        let mut inner = ChaCha8Rng::from_seed(expand_seed(seed));
        inner.set_stream(fnv1a(label.as_bytes()));
        Rng { inner }
    }

    /// Derives a child stream from the current state, advancing `self`.
    pub fn fork(&mut self, label: &str) -> Self {
        let seed = self.inner.next_u64();
        Rng::substream(seed, label)
    }

    /// Uniform on `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    #[inline]
    pub fn uniform_range(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.uniform()
    }

    /// Standard normal draw.
    #[inline]
    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `0..n`. `n` must be positive.
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn expand_seed(seed: u64) -> [u8; 32] {
    let mut state = seed;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    key
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Uniform draw from the unit sphere in `dim` dimensions, built by
/// normalizing an isotropic Gaussian vector.
pub fn sample_unit_sphere(rng: &mut Rng, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 {
        return Err(Error::invalid("unit sphere dimension must be at least 1"));
    }
    let mut v = vec![0.0; dim];
    fill_unit_sphere(rng, &mut v);
    Ok(v)
}

/// In-place variant of [`sample_unit_sphere`]; `out` must be non-empty.
pub(crate) fn fill_unit_sphere(rng: &mut Rng, out: &mut [f64]) {
    loop {
        let mut norm2 = 0.0;
        for x in out.iter_mut() {
            *x = rng.normal();
            norm2 += *x * *x;
        }
        // an all-zero Gaussian draw has probability zero but would divide by 0
        if norm2 > 1e-200 {
            let norm = norm2.sqrt();
            out.iter_mut().for_each(|x| *x /= norm);
            return;
        }
    }
}

/// Matrix of i.i.d. `N(0, stddev²)` entries.
pub fn gaussian_init(rng: &mut Rng, rows: usize, cols: usize, stddev: f64) -> Result<Matrix> {
    if !(stddev >= 0.0) || !stddev.is_finite() {
        return Err(Error::invalid(format!("stddev must be finite and >= 0, got {stddev}")));
    }
    if stddev == 0.0 {
        return Ok(Matrix::zeros(rows, cols));
    }
    Ok(Matrix::from_fn(rows, cols, |_, _| stddev * rng.normal()))
}
