//! Penalized weighted least-squares denoising of log projections.
//!
//! Minimizes
//!
//! ```text
//! Φ(p) = Σᵢ (p̂ᵢ - pᵢ)² / σᵢ²  +  β · ½ Σᵢ Σ_{j ∈ N₄(i)} wᵢⱼ (pᵢ - pⱼ)²
//! wᵢⱼ  = exp(-(p̂ᵢ - p̂ⱼ)² / σ²)
//! σᵢ²  = a · exp(p̂ᵢ / η)
//! ```
//!
//! over a 2-D array of measurements `p̂`. Variances and weights come from the
//! measured data and stay frozen, so Φ is quadratic. One iteration is a
//! raster-order Gauss-Seidel sweep that replaces each sample by its exact
//! coordinate-wise minimizer, which can never increase Φ.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::bail;
use crate::math;
use crate::projection::Sinogram;
use crate::Result;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct PwlsConfig {
    pub beta: f64,
    /// Edge scale of the neighbour weights.
    pub sigma: f64,
    /// Variance scale `a`.
    pub a: f64,
    /// Variance exponent scale `η`.
    pub eta: f64,
    pub iterations: usize,
}

impl Default for PwlsConfig {
    fn default() -> Self {
        Self { beta: 0.3, sigma: 2.0, a: 0.5, eta: 1.0, iterations: 2 }
    }
}

impl PwlsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            bail!(InvalidConfig, "pwls beta must be >= 0, got {}", self.beta);
        }
        if !(self.sigma > 0.0) || !(self.eta > 0.0) || !(self.a > 0.0) {
            bail!(InvalidConfig, "pwls sigma, eta and a must be positive");
        }
        if self.iterations == 0 {
            bail!(InvalidConfig, "pwls needs at least one iteration");
        }
        Ok(())
    }
}

/// Per-sample variance estimates, the diagonal of the data-term weighting.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceMap {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl VarianceMap {
    pub fn constant(rows: usize, cols: usize, value: f64) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }
}

/// 4-neighbour weights, stored once per undirected edge so `w(i,j) = w(j,i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightField {
    pub rows: usize,
    pub cols: usize,
    /// between `(r, c)` and `(r, c+1)`, `rows x (cols-1)`
    pub horizontal: Vec<f64>,
    /// between `(r, c)` and `(r+1, c)`, `(rows-1) x cols`
    pub vertical: Vec<f64>,
}

impl WeightField {
    /// Weight between two samples, `None` unless they are 4-neighbours.
    pub fn weight(&self, a: (usize, usize), b: (usize, usize)) -> Option<f64> {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        if lo.0 == hi.0 && hi.1 == lo.1 + 1 {
            Some(self.horizontal[lo.0 * (self.cols - 1) + lo.1])
        } else if lo.1 == hi.1 && hi.0 == lo.0 + 1 {
            Some(self.vertical[lo.0 * self.cols + lo.1])
        } else {
            None
        }
    }

    /// Number of neighbours of `(r, c)`.
    pub fn degree(&self, r: usize, c: usize) -> usize {
        usize::from(r > 0) + usize::from(r + 1 < self.rows) + usize::from(c > 0) + usize::from(c + 1 < self.cols)
    }
}

pub fn estimate_variance_grid(rows: usize, cols: usize, measured: &[f64], config: &PwlsConfig) -> VarianceMap {
    let data = measured.iter().map(|&p| config.a * math::exp(p / config.eta)).collect();
    VarianceMap { rows, cols, data }
}

/// `σᵢ² = a·exp(p̂ᵢ/η)` for every sinogram sample.
pub fn estimate_variance(measured: &Sinogram, config: &PwlsConfig) -> VarianceMap {
    estimate_variance_grid(measured.n_angles(), measured.detector_count, &measured.data, config)
}

pub fn compute_weights_grid(rows: usize, cols: usize, p: &[f64], config: &PwlsConfig) -> WeightField {
    let s2 = config.sigma * config.sigma;
    let w = |a: f64, b: f64| math::exp(-(a - b) * (a - b) / s2);
    let mut horizontal = Vec::with_capacity(rows * cols.saturating_sub(1));
    for r in 0..rows {
        for c in 0..cols.saturating_sub(1) {
            horizontal.push(w(p[r * cols + c], p[r * cols + c + 1]));
        }
    }
    let mut vertical = Vec::with_capacity(rows.saturating_sub(1) * cols);
    for r in 0..rows.saturating_sub(1) {
        for c in 0..cols {
            vertical.push(w(p[r * cols + c], p[(r + 1) * cols + c]));
        }
    }
    WeightField { rows, cols, horizontal, vertical }
}

/// Edge-preserving neighbour weights `exp(-(pᵢ - pⱼ)²/σ²)`.
pub fn compute_weights(p: &Sinogram, config: &PwlsConfig) -> WeightField {
    compute_weights_grid(p.n_angles(), p.detector_count, &p.data, config)
}

/// Φ evaluated at `p` with the given frozen variances and weights.
pub fn objective(p: &[f64], measured: &[f64], variance: &VarianceMap, weights: &WeightField, beta: f64) -> f64 {
    let data: f64 = p
        .iter()
        .zip(measured)
        .zip(&variance.data)
        .map(|((x, m), v)| (m - x) * (m - x) / v)
        .sum();
    // ½ ΣᵢΣⱼ counts every undirected edge twice
    let (rows, cols) = (weights.rows, weights.cols);
    let mut reg = 0.0;
    for r in 0..rows {
        for c in 0..cols.saturating_sub(1) {
            let d = p[r * cols + c] - p[r * cols + c + 1];
            reg += weights.horizontal[r * (cols - 1) + c] * d * d;
        }
    }
    for r in 0..rows.saturating_sub(1) {
        for c in 0..cols {
            let d = p[r * cols + c] - p[(r + 1) * cols + c];
            reg += weights.vertical[r * cols + c] * d * d;
        }
    }
    data + beta * reg
}

/// One raster-order Gauss-Seidel sweep, in place.
pub fn gauss_seidel_sweep(p: &mut [f64], measured: &[f64], variance: &VarianceMap, weights: &WeightField, beta: f64) {
    let (rows, cols) = (weights.rows, weights.cols);
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            let inv_var = 1.0 / variance.data[i];
            let mut num = measured[i] * inv_var;
            let mut den = inv_var;
            if c > 0 {
                let w = weights.horizontal[r * (cols - 1) + c - 1];
                num += beta * w * p[i - 1];
                den += beta * w;
            }
            if c + 1 < cols {
                let w = weights.horizontal[r * (cols - 1) + c];
                num += beta * w * p[i + 1];
                den += beta * w;
            }
            if r > 0 {
                let w = weights.vertical[(r - 1) * cols + c];
                num += beta * w * p[i - cols];
                den += beta * w;
            }
            if r + 1 < rows {
                let w = weights.vertical[r * cols + c];
                num += beta * w * p[i + cols];
                den += beta * w;
            }
            p[i] = num / den;
        }
    }
}

/// Denoise a row-major `rows x cols` array; returns the result and Φ before
/// the first sweep and after each sweep.
pub fn pwls_denoise_grid(
    rows: usize,
    cols: usize,
    measured: &[f64],
    variance: Option<&VarianceMap>,
    config: &PwlsConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    config.validate()?;
    if measured.len() != rows * cols {
        bail!(ShapeMismatch, "pwls input {rows}x{cols} holds {} values", measured.len());
    }
    if measured.iter().any(|v| !v.is_finite()) {
        bail!(InvalidConfig, "pwls input contains non-finite values");
    }
    let estimated;
    let variance = match variance {
        Some(v) => {
            if v.data.len() != measured.len() || v.data.iter().any(|&x| !(x > 0.0)) {
                bail!(InvalidConfig, "variance map must match the input and be strictly positive");
            }
            v
        }
        None => {
            estimated = estimate_variance_grid(rows, cols, measured, config);
            &estimated
        }
    };
    let weights = compute_weights_grid(rows, cols, measured, config);
    let mut p = measured.to_vec();
    let mut trace = Vec::with_capacity(config.iterations + 1);
    trace.push(objective(&p, measured, variance, &weights, config.beta));
    if config.beta == 0.0 {
        // every sweep reproduces the measurement exactly
        trace.extend(core::iter::repeat(trace[0]).take(config.iterations));
        return Ok((p, trace));
    }
    for _ in 0..config.iterations {
        gauss_seidel_sweep(&mut p, measured, variance, &weights, config.beta);
        trace.push(objective(&p, measured, variance, &weights, config.beta));
    }
    Ok((p, trace))
}

/// Denoise one sinogram as a 2-D (angle × detector) array.
pub fn pwls_denoise(measured: &Sinogram, config: &PwlsConfig) -> Result<Sinogram> {
    pwls_denoise_traced(measured, None, config).map(|(s, _)| s)
}

/// [`pwls_denoise`] with an optional variance override, also returning the
/// objective after each sweep.
pub fn pwls_denoise_traced(measured: &Sinogram, variance: Option<&VarianceMap>, config: &PwlsConfig) -> Result<(Sinogram, Vec<f64>)> {
    measured.check_shape()?;
    let (data, trace) = pwls_denoise_grid(measured.n_angles(), measured.detector_count, &measured.data, variance, config)?;
    Ok((Sinogram { data, ..measured.clone() }, trace))
}

/// Denoise the sinograms of a stack of slices per projection image.
///
/// Sinogram `v` holds row `v` of every projection, so for each angle the
/// (v, u) projection image is assembled, denoised, and scattered back.
pub fn pwls_denoise_projections(sinograms: &[Sinogram], config: &PwlsConfig) -> Result<Vec<Sinogram>> {
    let Some(first) = sinograms.first() else {
        return Ok(Vec::new());
    };
    for s in sinograms {
        s.check_shape()?;
        if s.angles != first.angles || s.detector_count != first.detector_count {
            bail!(ShapeMismatch, "all sinograms in a stack must share angles and detector size");
        }
    }
    let (nv, nu) = (sinograms.len(), first.detector_count);
    let mut out: Vec<Sinogram> = sinograms.to_vec();
    let mut image = vec![0.0; nv * nu];
    for a in 0..first.n_angles() {
        for (v, s) in sinograms.iter().enumerate() {
            image[v * nu..(v + 1) * nu].copy_from_slice(s.row(a));
        }
        let (den, _) = pwls_denoise_grid(nv, nu, &image, None, config)?;
        for (v, s) in out.iter_mut().enumerate() {
            s.row_mut(a).copy_from_slice(&den[v * nu..(v + 1) * nu]);
        }
    }
    Ok(out)
}
