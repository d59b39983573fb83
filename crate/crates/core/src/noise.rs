//! Poisson photon-counting noise on log-transformed projections.
//!
//! A ray with ideal line integral `p` carries on average
//! `λ = N₀·exp(-p)` photons; the detector reports a Poisson count `N` and
//! the measured projection is `ln(N₀ / max(N, 1))`.

use crate::error::bail;
use crate::math;
use crate::projection::Sinogram;
use crate::rng::SplitMix64;
use crate::{Error, Result};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Photon counts per ray used for training data.
pub const TRAINING_DOSES: [f64; 3] = [1e4, 5e4, 1e5];

/// Below this mean the Poisson sampler inverts the CDF exactly.
pub const INVERSION_LIMIT: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct NoiseModel {
    /// Incident photons per ray, N₀.
    pub photon_count: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn new(photon_count: f64, seed: u64) -> Self {
        Self { photon_count, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.photon_count >= 1.0) || !self.photon_count.is_finite() {
            bail!(InvalidConfig, "photon count must be >= 1, got {}", self.photon_count);
        }
        Ok(())
    }

    /// Round-robin dose for the `index`-th dataset.
    pub fn round_robin(index: usize, seed: u64) -> Self {
        Self::new(TRAINING_DOSES[index % TRAINING_DOSES.len()], seed)
    }
}

/// Draw one Poisson variate.
///
/// Inversion by sequential search for `λ < 30`; above that a normal
/// approximation with continuity correction, `⌊λ + √λ·z + ½⌋` clamped at 0.
pub fn sample_poisson(rng: &mut SplitMix64, lambda: f64) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    if lambda < INVERSION_LIMIT {
        let u = rng.next_f64();
        let mut k = 0u64;
        let mut p = math::exp(-lambda);
        let mut cdf = p;
        // the bound guards against u landing in the rounded-off tail
        while u >= cdf && k < 1000 {
            k += 1;
            p *= lambda / k as f64;
            cdf += p;
        }
        k
    } else {
        let z = rng.normal();
        let n = math::floor(lambda + math::sqrt(lambda) * z + 0.5);
        if n < 0.0 {
            0
        } else {
            n as u64
        }
    }
}

/// Replace each ideal line integral by a noisy measurement.
///
/// `stream` selects an independent random stream (e.g. the slice index), so
/// different slices can be noised concurrently and reproducibly.
pub fn apply_poisson(sino: &Sinogram, model: &NoiseModel, stream: u64) -> Result<Sinogram> {
    model.validate()?;
    sino.check_shape()?;
    if let Some((index, &value)) = sino.data.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(Error::NegativeLineIntegral { index, value });
    }
    let n0 = model.photon_count;
    let mut rng = SplitMix64::stream(model.seed, stream);
    let mut out = sino.clone();
    for v in out.data.iter_mut() {
        let lambda = n0 * math::exp(-*v);
        let counts = sample_poisson(&mut rng, lambda).max(1);
        *v = math::ln(n0 / counts as f64);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;

    fn flat(value: f64, n: usize) -> Sinogram {
        let mut s = Sinogram::zeros(vec![0.0; n], 1, 1.0);
        s.data.iter_mut().for_each(|v| *v = value);
        s
    }

    fn moments(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn small_lambda_inversion_moments() {
        for &lambda in &[0.5, 3.0, 12.0, 29.0] {
            let mut rng = SplitMix64::new(42);
            let n = 100_000;
            let xs: Vec<f64> = (0..n).map(|_| sample_poisson(&mut rng, lambda) as f64).collect();
            let (mean, var) = moments(&xs);
            let se_mean = math::sqrt(lambda / n as f64);
            // Var of the sample variance of a Poisson: (λ + 2λ²(n/(n-1)))/n ≈ (λ + 2λ²)/n
            let se_var = math::sqrt((lambda + 2.0 * lambda * lambda) / n as f64);
            assert!((mean - lambda).abs() < 3.0 * se_mean, "λ={lambda} mean={mean}");
            assert!((var - lambda).abs() < 3.0 * se_var, "λ={lambda} var={var}");
        }
    }

    #[test]
    fn zero_line_integral_mean_matches_delta_method() {
        // E[ln(N0/N)] ≈ 1/(2 N0) for N ~ Poisson(N0)
        let n0 = 1e4;
        let n = 200_000;
        let out = apply_poisson(&flat(0.0, n), &NoiseModel::new(n0, 3), 0).unwrap();
        let (mean, var) = moments(&out.data);
        let se = math::sqrt(var / n as f64);
        let predicted = 1.0 / (2.0 * n0);
        assert!((mean - predicted).abs() < 3.0 * se, "mean={mean} predicted={predicted} se={se}");
    }

    #[test]
    fn huge_dose_is_noiseless() {
        let ideal = flat(0.37, 1000);
        let out = apply_poisson(&ideal, &NoiseModel::new(1e12, 1), 0).unwrap();
        assert!(out.data.iter().all(|v| (v - 0.37).abs() < 1e-3));
    }

    #[test]
    fn deterministic_per_seed_and_stream() {
        let ideal = flat(0.2, 500);
        let m = NoiseModel::new(1e4, 9);
        assert_eq!(apply_poisson(&ideal, &m, 4).unwrap(), apply_poisson(&ideal, &m, 4).unwrap());
        assert_ne!(apply_poisson(&ideal, &m, 4).unwrap(), apply_poisson(&ideal, &m, 5).unwrap());
    }

    #[test]
    fn starvation_is_clamped() {
        // λ = 10 * e^-20 ≈ 2e-8, nearly always zero counts
        let out = apply_poisson(&flat(20.0, 100), &NoiseModel::new(10.0, 0), 0).unwrap();
        assert!(out.data.iter().all(|v| v.is_finite() && (*v - math::ln(10.0)).abs() < 1e-12));
    }

    #[test]
    fn negative_input_rejected() {
        let mut s = flat(0.1, 4);
        s.data[2] = -0.01;
        assert!(matches!(
            apply_poisson(&s, &NoiseModel::new(1e4, 0), 0),
            Err(Error::NegativeLineIntegral { index: 2, .. })
        ));
        assert!(apply_poisson(&flat(0.1, 4), &NoiseModel::new(0.5, 0), 0).is_err());
    }

    #[test]
    fn round_robin_cycles_doses() {
        let d: Vec<f64> = (0..6).map(|i| NoiseModel::round_robin(i, 0).photon_count).collect();
        assert_eq!(d, vec![1e4, 5e4, 1e5, 1e4, 5e4, 1e5]);
    }
}
