//! Seeded randomness: Laplace noise and exponential-mechanism selection.
//!
//! # Stream derivation
//!
//! A [`RandomStream`] is identified by a 64-bit seed and a path of child
//! indices. Its generator is ChaCha20 keyed with
//! `SHA-256("pview-stream-v1" || seed || path[0] || path[1] || ...)`, every
//! integer encoded as 8 little-endian bytes. Uniform reals are
//! `(next_u64 >> 11) * 2^-53`. Any implementation following these rules
//! replays the same draws.
//!
//! Floating-point side channels of textbook Laplace sampling are not
//! mitigated here.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const STREAM_DOMAIN: &[u8] = b"pview-stream-v1";

/// Deterministic random stream addressed by `(seed, path)`.
#[derive(Clone, Debug)]
pub struct RandomStream {
    seed: u64,
    path: Vec<u64>,
    rng: ChaCha20Rng,
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        Self::at(seed, Vec::new())
    }

    fn at(seed: u64, path: Vec<u64>) -> Self {
        let mut h = Sha256::new();
        h.update(STREAM_DOMAIN);
        h.update(seed.to_le_bytes());
        for p in &path {
            h.update(p.to_le_bytes());
        }
        let key: [u8; 32] = h.finalize().into();
        Self {
            seed,
            path,
            rng: ChaCha20Rng::from_seed(key),
        }
    }

    /// Fresh stream at `path ++ [index]`, independent of how much of this
    /// stream has been consumed.
    pub fn child(&self, index: u64) -> RandomStream {
        let mut path = self.path.clone();
        path.push(index);
        Self::at(self.seed, path)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path(&self) -> &[u64] {
        &self.path
    }

    /// Uniform draw from `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform index in `0..n`; `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Inverse CDF of Laplace(0, scale) at `u ∈ (-1/2, 1/2)`.
pub fn laplace_from_uniform(u: f64, scale: f64) -> f64 {
    if u == 0.0 {
        return 0.0;
    }
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// One Laplace(0, scale) draw.
pub fn sample_laplace(scale: f64, rng: &mut RandomStream) -> Result<f64> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Parameter(format!(
            "Laplace scale must be positive and finite, got {scale}"
        )));
    }
    loop {
        let u = rng.uniform() - 0.5;
        if u > -0.5 {
            return Ok(laplace_from_uniform(u, scale));
        }
    }
}

/// Normalized selection probabilities `∝ exp(ε q_i / (2Δ))`, computed with
/// the maximum quality subtracted first.
pub fn exponential_weights(qualities: &[f64], epsilon: f64, sensitivity: f64) -> Result<Vec<f64>> {
    let mut w = unnormalized_weights(qualities, epsilon, sensitivity)?;
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    Ok(w)
}

fn unnormalized_weights(qualities: &[f64], epsilon: f64, sensitivity: f64) -> Result<Vec<f64>> {
    if qualities.is_empty() {
        return Err(Error::NoCandidates);
    }
    if let Some(index) = qualities.iter().position(|q| q.is_nan()) {
        return Err(Error::NanQuality { index });
    }
    if !(epsilon > 0.0) || !(sensitivity > 0.0) {
        return Err(Error::Parameter(format!(
            "exponential mechanism needs epsilon > 0 and sensitivity > 0 (got {epsilon}, {sensitivity})"
        )));
    }
    let q_max = qualities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let factor = epsilon / (2.0 * sensitivity);
    Ok(qualities
        .iter()
        .map(|&q| (factor * (q - q_max)).exp())
        .collect())
}

/// Samples an index with probability proportional to `exp(ε q_i / (2Δ))`.
pub fn exponential_choice(
    qualities: &[f64],
    epsilon: f64,
    sensitivity: f64,
    rng: &mut RandomStream,
) -> Result<usize> {
    let w = unnormalized_weights(qualities, epsilon, sensitivity)?;
    Ok(weighted_index(&w, rng))
}

fn weighted_index(weights: &[f64], rng: &mut RandomStream) -> usize {
    let total: f64 = weights.iter().sum();
    let target = rng.uniform() * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if target < acc {
            return i;
        }
    }
    // rounding can leave target at the very top; fall back to the last
    // positive weight
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn laplace_median_is_zero() {
        assert_eq!(laplace_from_uniform(0.0, 1.0), 0.0);
        assert!(laplace_from_uniform(0.25, 1.0) > 0.0);
        assert!(laplace_from_uniform(-0.25, 1.0) < 0.0);
        // CDF(x) = 1 - exp(-x)/2 for x > 0, so u = 0.25 maps to ln 2
        assert!((laplace_from_uniform(0.25, 1.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn laplace_rejects_bad_scale() {
        let mut rng = RandomStream::new(1);
        assert!(sample_laplace(0.0, &mut rng).is_err());
        assert!(sample_laplace(-1.0, &mut rng).is_err());
        assert!(sample_laplace(f64::NAN, &mut rng).is_err());
    }

    #[test]
    fn same_seed_and_path_replay() {
        let a = RandomStream::new(7).child(3).child(1);
        let b = RandomStream::new(7).child(3).child(1);
        let (mut a, mut b) = (a, b);
        for _ in 0..10 {
            assert_eq!(
                sample_laplace(2.0, &mut a).unwrap().to_bits(),
                sample_laplace(2.0, &mut b).unwrap().to_bits()
            );
        }
        let mut c = RandomStream::new(7).child(3).child(2);
        let mut a = RandomStream::new(7).child(3).child(1);
        assert_ne!(a.next_u64(), c.next_u64());
    }

    #[test]
    fn child_ignores_parent_consumption() {
        let mut parent = RandomStream::new(11);
        let before = parent.child(0).next_u64();
        parent.uniform();
        assert_eq!(parent.child(0).next_u64(), before);
    }

    #[test]
    fn laplace_moments() {
        let mut rng = RandomStream::new(42);
        let n = 1_000_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let x = sample_laplace(2.0, &mut rng).unwrap();
            s += x;
            s2 += x * x;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 8.0).abs() < 0.4, "variance {var}");
    }

    #[test]
    fn exponential_errors() {
        let mut rng = RandomStream::new(1);
        assert!(matches!(exponential_choice(&[], 1.0, 1.0, &mut rng), Err(Error::NoCandidates)));
        assert!(matches!(
            exponential_choice(&[0.0, f64::NAN], 1.0, 1.0, &mut rng),
            Err(Error::NanQuality { index: 1 })
        ));
        assert!(exponential_choice(&[0.0], 1.0, 0.0, &mut rng).is_err());
    }

    #[test]
    fn single_candidate_always_wins() {
        let mut rng = RandomStream::new(3);
        for _ in 0..100 {
            assert_eq!(exponential_choice(&[-1e9], 0.5, 4.0, &mut rng).unwrap(), 0);
        }
    }

    #[test]
    fn equal_qualities_are_uniform() {
        let mut rng = RandomStream::new(5);
        let n = 100_000;
        let mut freq = [0usize; 4];
        for _ in 0..n {
            freq[exponential_choice(&[3.0; 4], 1.0, 1.0, &mut rng).unwrap()] += 1;
        }
        let sigma = (0.25 * 0.75 / n as f64).sqrt();
        for f in freq {
            assert!((f as f64 / n as f64 - 0.25).abs() < 3.0 * sigma);
        }
    }

    #[test]
    fn shift_invariance_gives_identical_draws() {
        let q = [-3.0, -1.0, -7.5, 0.0];
        let shifted: Vec<f64> = q.iter().map(|x| x + 123.0).collect();
        let (mut a, mut b) = (RandomStream::new(9), RandomStream::new(9));
        for _ in 0..1000 {
            assert_eq!(
                exponential_choice(&q, 0.3, 2.0, &mut a).unwrap(),
                exponential_choice(&shifted, 0.3, 2.0, &mut b).unwrap()
            );
        }
    }

    #[test]
    fn raising_a_quality_raises_its_probability() {
        let q = [-3.0, -1.0, -7.5, 0.0];
        let base = exponential_weights(&q, 0.7, 4.0).unwrap();
        for i in 0..q.len() {
            let mut raised = q;
            raised[i] += 0.5;
            let w = exponential_weights(&raised, 0.7, 4.0).unwrap();
            assert!(w[i] > base[i]);
        }
    }

    #[test]
    fn no_overflow_for_extreme_qualities() {
        let w = exponential_weights(&[1e6, 0.0, -1e6], 10.0, 1.0).unwrap();
        assert_eq!(w[0], 1.0);
        assert!(w.iter().all(|x| x.is_finite()));
    }
}
