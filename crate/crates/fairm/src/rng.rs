//! Deterministic, platform-independent random number streams.
//!
//! Each `(master_seed, stream_id)` pair names an independent ChaCha stream;
//! draws are a pure function of the pair and the call sequence. Normal
//! variates come from Box-Muller over 53-bit uniforms so no libm-dependent
//! sampler is involved.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone)]
pub struct RngStream {
    master_seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(stream_id);
        RngStream {
            master_seed,
            stream_id,
            rng,
            spare_normal: None,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform draw in the open interval (0, 1), 53-bit resolution.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        // map to {1, ..., 2^53} / 2^53 so ln() never sees zero
        (((self.rng.next_u64() >> 11) + 1) as f64) * (1.0 / 9007199254740992.0)
    }

    /// Uniform integer in `[0, n)` via rejection sampling.
    pub fn uniform_index(&mut self, n: usize) -> usize {
        assert!(n > 0);
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.rng.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// One standard normal draw (Box-Muller, one spare cached per pair).
    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// `count` i.i.d. N(0, 1) draws.
    pub fn standard_normal(&mut self, count: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            out.push(self.next_normal());
        }
        out
    }

    /// Returns `L z` with `z ~ N(0, I)`, i.e. one draw from N(0, L L^T).
    pub fn correlated_gaussian(&mut self, cholesky_factor: &Matrix) -> Result<Vec<f64>> {
        let p = cholesky_factor.rows();
        if cholesky_factor.cols() != p {
            return Err(Error::DimensionMismatch {
                context: "correlated_gaussian: factor must be square",
                expected: p,
                found: cholesky_factor.cols(),
            });
        }
        let z = self.standard_normal(p);
        let mut out = vec![0.0; p];
        for (i, o) in out.iter_mut().enumerate() {
            let row = cholesky_factor.row(i);
            let mut s = 0.0;
            // lower triangular: columns beyond i are zero
            for k in 0..=i {
                s += row[k] * z[k];
            }
            *o = s;
        }
        Ok(out)
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.uniform_index(i + 1);
            items.swap(i, j);
        }
    }

    /// `k` distinct values sampled uniformly from `pool`, in draw order.
    pub fn sample_without_replacement(&mut self, pool: &[usize], k: usize) -> Vec<usize> {
        assert!(k <= pool.len());
        let mut pool = pool.to_vec();
        let mut out = Vec::with_capacity(k);
        for _ in 0..k {
            let j = self.uniform_index(pool.len());
            out.push(pool.swap_remove(j));
        }
        out
    }
}
