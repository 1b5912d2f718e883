//! Splittable, counter-addressed random streams.
//!
//! A stream is identified by `(master_seed, stream_id)`; its position is a
//! 32-bit-word counter into a ChaCha8 keystream. The key is derived from the
//! master seed with `SeedableRng::seed_from_u64`, the ChaCha stream nonce is
//! `stream_id`, so any `(master_seed, stream_id, counter)` triple names one
//! fixed value. Stream ids come from [`stream_id`], which mixes a purpose
//! label and an index.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `splitmix64(fnv1a64(label) ^ splitmix64(index))`.
pub fn stream_id(label: &str, index: u64) -> u64 {
    splitmix64(fnv1a64(label.as_bytes()) ^ splitmix64(index))
}

#[derive(Clone, Debug)]
pub struct RngStream {
    master_seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        Self::at(master_seed, stream_id, 0)
    }

    pub fn labeled(master_seed: u64, label: &str, index: u64) -> Self {
        Self::new(master_seed, stream_id(label, index))
    }

    pub fn at(master_seed: u64, stream_id: u64, counter: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(master_seed);
        inner.set_stream(stream_id);
        inner.set_word_pos(counter as u128);
        RngStream {
            master_seed,
            stream_id,
            inner,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Position in 32-bit keystream words.
    pub fn counter(&self) -> u64 {
        self.inner.get_word_pos() as u64
    }

    /// A child stream whose id mixes this stream's id with `label`/`index`.
    pub fn fork(&self, label: &str, index: u64) -> RngStream {
        RngStream::new(self.master_seed, splitmix64(self.stream_id ^ stream_id(label, index)))
    }

    /// Uniform on `(0, 1]` with 53 random bits.
    pub fn uniform_open(&mut self) -> f64 {
        ((self.inner.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Two independent standard normals from one Box-Muller transform.
    pub fn standard_normal_pair(&mut self) -> (f64, f64) {
        let u1 = self.uniform_open();
        let u2 = self.uniform_open();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        (r * theta.cos(), r * theta.sin())
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

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}

/// Bivariate normal with a precomputed lower Cholesky factor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gaussian2 {
    mu: [f64; 2],
    chol: [[f64; 2]; 2],
}

const PSD_TOL: f64 = 1e-12;

/// Lower Cholesky factor of a symmetric positive semidefinite 2×2 matrix.
pub fn cholesky2(s: [[f64; 2]; 2]) -> Result<[[f64; 2]; 2]> {
    let [[a, b], [b2, c]] = s;
    let scale = a.abs().max(c.abs()).max(1.0);
    if !(a.is_finite() && b.is_finite() && b2.is_finite() && c.is_finite()) {
        return Err(Error::Decomposition("covariance has non-finite entries".into()));
    }
    if (b - b2).abs() > PSD_TOL * scale {
        return Err(Error::Decomposition(format!("covariance is not symmetric ({b} vs {b2})")));
    }
    if a < -PSD_TOL * scale || c < -PSD_TOL * scale {
        return Err(Error::Decomposition("covariance has a negative variance".into()));
    }
    let l11 = a.max(0.0).sqrt();
    let l21 = if l11 > 0.0 {
        b / l11
    } else if b.abs() <= PSD_TOL * scale {
        0.0
    } else {
        return Err(Error::Decomposition("covariance is not positive semidefinite".into()));
    };
    let rest = c - l21 * l21;
    if rest < -PSD_TOL * scale {
        return Err(Error::Decomposition("covariance is not positive semidefinite".into()));
    }
    Ok([[l11, 0.0], [l21, rest.max(0.0).sqrt()]])
}

impl Gaussian2 {
    pub fn new(mu: [f64; 2], sigma: [[f64; 2]; 2]) -> Result<Self> {
        Ok(Gaussian2 {
            mu,
            chol: cholesky2(sigma)?,
        })
    }

    pub fn sample(&self, rng: &mut RngStream) -> [f64; 2] {
        let (z0, z1) = rng.standard_normal_pair();
        let l = &self.chol;
        [self.mu[0] + l[0][0] * z0, self.mu[1] + l[1][0] * z0 + l[1][1] * z1]
    }
}

/// One draw from `N(mu, sigma)`: two uniforms, Box-Muller, Cholesky, shift.
pub fn gaussian2d(rng: &mut RngStream, mu: [f64; 2], sigma: [[f64; 2]; 2]) -> Result<[f64; 2]> {
    Ok(Gaussian2::new(mu, sigma)?.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_address_same_value() {
        let mut a = RngStream::new(7, 11);
        let _ = a.next_u64();
        let _ = a.next_u64();
        let counter = a.counter();
        let v = a.next_u64();
        let mut b = RngStream::at(7, 11, counter);
        assert_eq!(b.next_u64(), v);
    }

    #[test]
    fn distinct_streams_differ() {
        let mut a = RngStream::labeled(1, "sample", 0);
        let mut b = RngStream::labeled(1, "sample", 1);
        let mut c = RngStream::labeled(1, "noise", 0);
        let (x, y, z) = (a.next_u64(), b.next_u64(), c.next_u64());
        assert!(x != y && y != z && x != z);
    }

    #[test]
    fn zero_covariance_is_point_mass() {
        let mut rng = RngStream::new(3, 4);
        for _ in 0..10 {
            assert_eq!(gaussian2d(&mut rng, [1.5, -2.0], [[0.0; 2]; 2]).unwrap(), [1.5, -2.0]);
        }
    }

    #[test]
    fn determinism_of_draws() {
        let sigma = [[2.0, 0.3], [0.3, 1.0]];
        let a = gaussian2d(&mut RngStream::new(9, 9), [0.0, 0.0], sigma).unwrap();
        let b = gaussian2d(&mut RngStream::new(9, 9), [0.0, 0.0], sigma).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_non_psd() {
        assert!(matches!(cholesky2([[1.0, 2.0], [2.0, 1.0]]), Err(Error::Decomposition(_))));
        assert!(matches!(cholesky2([[-1.0, 0.0], [0.0, 1.0]]), Err(Error::Decomposition(_))));
        assert!(matches!(cholesky2([[1.0, 0.5], [0.2, 1.0]]), Err(Error::Decomposition(_))));
        assert!(matches!(cholesky2([[0.0, 0.5], [0.5, 1.0]]), Err(Error::Decomposition(_))));
    }

    #[test]
    fn cholesky_reconstructs() {
        let s = [[3.71, 0.4], [0.4, 3.52]];
        let l = cholesky2(s).unwrap();
        assert!((l[0][0] * l[0][0] - s[0][0]).abs() < 1e-12);
        assert!((l[1][0] * l[0][0] - s[1][0]).abs() < 1e-12);
        assert!((l[1][0] * l[1][0] + l[1][1] * l[1][1] - s[1][1]).abs() < 1e-12);
    }

    #[test]
    fn identity_normal_moments() {
        // Law-of-large-numbers band: 4σ/√n for the mean, 4·√(2/n) for the variance.
        let mut rng = RngStream::labeled(2024, "moments", 0);
        let n = 100_000;
        let (mut s, mut ss) = ([0.0; 2], [0.0; 2]);
        for _ in 0..n {
            let p = gaussian2d(&mut rng, [0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]]).unwrap();
            for k in 0..2 {
                s[k] += p[k];
                ss[k] += p[k] * p[k];
            }
        }
        for k in 0..2 {
            let mean = s[k] / n as f64;
            let var = ss[k] / n as f64 - mean * mean;
            assert!(mean.abs() < 0.02, "mean {mean}");
            assert!((var - 1.0).abs() < 0.03, "var {var}");
        }
    }
}
