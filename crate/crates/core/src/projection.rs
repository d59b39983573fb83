//! Parallel-beam forward projection of 2-D slices.
//!
//! Convention: at angle θ the detector coordinate of a point is
//! `u = x cosθ + y sinθ`, so θ = 0 sends rays parallel to the y axis and `u`
//! runs along x. The rotation axis passes through the slice center and the
//! detector center. Detector bin `k` sits at `u_k = (k - (D-1)/2) * Δu`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::bail;
use crate::grid::Slice;
use crate::math;
use crate::Result;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Scan description. Angles in degrees, pixel pitches in nm.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Geometry {
    pub theta_min: f64,
    pub theta_max: f64,
    pub angle_step: f64,
    pub detector_count: usize,
    pub detector_pixel: f64,
    pub recon_size: usize,
    pub recon_pixel: f64,
}

impl Geometry {
    /// Detector and reconstruction grid spanning the same physical width.
    pub fn new(theta_min: f64, theta_max: f64, angle_step: f64, detector_count: usize, detector_pixel: f64, recon_size: usize) -> Self {
        let recon_pixel = if recon_size > 0 {
            detector_pixel * detector_count as f64 / recon_size as f64
        } else {
            0.0
        };
        Self { theta_min, theta_max, angle_step, detector_count, detector_pixel, recon_size, recon_pixel }
    }

    /// -50°..50° in 1° steps, 512 detector pixels at 21.9 nm, 256² reconstruction.
    pub fn paper_scale() -> Self {
        Self::new(-50.0, 50.0, 1.0, 512, 21.9, 256)
    }

    /// Same angles and field of view as [`Geometry::paper_scale`] sampled on 64 pixels.
    pub fn desk_scale() -> Self {
        Self::new(-50.0, 50.0, 1.0, 64, 175.2, 64)
    }

    pub fn with_angles(mut self, theta_min: f64, theta_max: f64, angle_step: f64) -> Self {
        self.theta_min = theta_min;
        self.theta_max = theta_max;
        self.angle_step = angle_step;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta_min < self.theta_max) {
            bail!(InvalidConfig, "theta_min {} must be < theta_max {}", self.theta_min, self.theta_max);
        }
        if !(self.angle_step > 0.0) {
            bail!(InvalidConfig, "angle step must be positive, got {}", self.angle_step);
        }
        if self.detector_count == 0 || self.recon_size == 0 {
            bail!(InvalidConfig, "detector count and reconstruction size must be positive");
        }
        if !(self.detector_pixel > 0.0) || !(self.recon_pixel > 0.0) {
            bail!(InvalidConfig, "pixel sizes must be positive");
        }
        Ok(())
    }

    /// `theta_min, theta_min + step, ..., theta_max` inclusive.
    pub fn angles(&self) -> Vec<f64> {
        let n = math::floor((self.theta_max - self.theta_min) / self.angle_step + 1e-9) as usize + 1;
        (0..n).map(|k| self.theta_min + k as f64 * self.angle_step).collect()
    }

    /// Detector coordinate of bin `k`, μm.
    pub fn detector_u(&self, k: usize) -> f64 {
        (k as f64 - (self.detector_count as f64 - 1.0) / 2.0) * self.detector_pixel * 1e-3
    }
}

/// Log-transformed projections of one slice; row `a` holds angle `angles[a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    /// degrees
    pub angles: Vec<f64>,
    pub detector_count: usize,
    /// nm
    pub detector_pixel: f64,
    pub data: Vec<f64>,
}

impl Sinogram {
    pub fn zeros(angles: Vec<f64>, detector_count: usize, detector_pixel: f64) -> Self {
        let data = vec![0.0; angles.len() * detector_count];
        Self { angles, detector_count, detector_pixel, data }
    }

    pub fn for_geometry(geometry: &Geometry) -> Self {
        Self::zeros(geometry.angles(), geometry.detector_count, geometry.detector_pixel)
    }

    pub fn n_angles(&self) -> usize {
        self.angles.len()
    }

    pub fn row(&self, a: usize) -> &[f64] {
        &self.data[a * self.detector_count..(a + 1) * self.detector_count]
    }

    pub fn row_mut(&mut self, a: usize) -> &mut [f64] {
        &mut self.data[a * self.detector_count..(a + 1) * self.detector_count]
    }

    pub fn check_shape(&self) -> Result<()> {
        if self.data.len() != self.angles.len() * self.detector_count {
            bail!(
                ShapeMismatch,
                "sinogram {}x{} holds {} values",
                self.angles.len(),
                self.detector_count,
                self.data.len()
            );
        }
        Ok(())
    }

    /// Keep only the listed angle rows.
    pub fn select_angles(&self, rows: &[usize]) -> Sinogram {
        let mut out = Sinogram::zeros(rows.iter().map(|&r| self.angles[r]).collect(), self.detector_count, self.detector_pixel);
        for (i, &r) in rows.iter().enumerate() {
            out.row_mut(i).copy_from_slice(self.row(r));
        }
        out
    }
}

/// Line integrals of `slice` with rays sampled every half pixel.
pub fn forward_project(slice: &Slice, geometry: &Geometry) -> Result<Sinogram> {
    forward_project_with_step(slice, geometry, 0.5)
}

/// Line integrals with an explicit ray sampling step, in slice pixels.
///
/// The slice is treated as the bilinear interpolant of its pixel values,
/// zero beyond the outermost pixel centers' neighbours.
pub fn forward_project_with_step(slice: &Slice, geometry: &Geometry, step_px: f64) -> Result<Sinogram> {
    geometry.validate()?;
    if !(step_px > 0.0) {
        bail!(InvalidConfig, "ray step must be positive, got {step_px}");
    }
    let mut sino = Sinogram::for_geometry(geometry);
    let (w, h) = (slice.width, slice.height);
    let ps_um = slice.pixel_size * 1e-3;
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    // bilinear support in pixel units around the center
    let half_x = (w as f64 + 1.0) / 2.0;
    let half_y = (h as f64 + 1.0) / 2.0;
    let t_origin = math::sqrt(half_x * half_x + half_y * half_y);
    let scale = step_px * ps_um;

    for (a, &theta) in sino.angles.clone().iter().enumerate() {
        let th = math::to_radians(theta);
        let (s, c) = (math::sin(th), math::cos(th));
        for k in 0..geometry.detector_count {
            let u = geometry.detector_u(k) / ps_um;
            // point(t) = (u c - t s, u s + t c), pixel units relative to center
            let Some((t0, t1)) = clip_to_box(u * c, u * s, -s, c, half_x, half_y) else {
                continue;
            };
            let m0 = math::ceil((t0 + t_origin) / step_px - 0.5).max(0.0) as usize;
            let m1 = math::floor((t1 + t_origin) / step_px - 0.5);
            if m1 < m0 as f64 {
                continue;
            }
            let mut acc = 0.0;
            for m in m0..=(m1 as usize) {
                let t = (m as f64 + 0.5) * step_px - t_origin;
                let x = u * c - t * s + cx;
                let y = u * s + t * c + cy;
                acc += bilinear(slice, x, y);
            }
            sino.data[a * geometry.detector_count + k] = acc * scale;
        }
    }
    Ok(sino)
}

/// Parameter interval where `origin + t * dir` lies in `[-hx, hx] x [-hy, hy]`.
fn clip_to_box(ox: f64, oy: f64, dx: f64, dy: f64, hx: f64, hy: f64) -> Option<(f64, f64)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for (o, d, h) in [(ox, dx, hx), (oy, dy, hy)] {
        if math::abs(d) < 1e-15 {
            if math::abs(o) > h {
                return None;
            }
        } else {
            let a = (-h - o) / d;
            let b = (h - o) / d;
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
    }
    (t0 <= t1).then_some((t0, t1))
}

/// Bilinear sample at fractional (col, row); zero outside the grid.
#[inline]
pub(crate) fn bilinear(slice: &Slice, x: f64, y: f64) -> f64 {
    let x0f = math::floor(x);
    let y0f = math::floor(y);
    let fx = x - x0f;
    let fy = y - y0f;
    let x0 = x0f as isize;
    let y0 = y0f as isize;
    let (w, h) = (slice.width as isize, slice.height as isize);
    let px = |r: isize, c: isize| -> f64 {
        if r >= 0 && r < h && c >= 0 && c < w {
            slice.data[(r * w + c) as usize]
        } else {
            0.0
        }
    };
    let top = (1.0 - fx) * px(y0, x0) + fx * px(y0, x0 + 1);
    let bottom = (1.0 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1);
    (1.0 - fy) * top + fy * bottom
}

/// A solid 2-D ellipse in physical coordinates (μm), rotated by `angle` degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Ellipse {
    pub center: [f64; 2],
    pub semi_axes: [f64; 2],
    pub angle: f64,
    pub intensity: f64,
}

impl Ellipse {
    pub fn disk(radius: f64, intensity: f64) -> Self {
        Self { center: [0.0, 0.0], semi_axes: [radius, radius], angle: 0.0, intensity }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let phi = math::to_radians(self.angle);
        let (s, c) = (math::sin(phi), math::cos(phi));
        let dx = x - self.center[0];
        let dy = y - self.center[1];
        let lx = c * dx + s * dy;
        let ly = -s * dx + c * dy;
        let [a, b] = self.semi_axes;
        (lx * lx) / (a * a) + (ly * ly) / (b * b) <= 1.0
    }

    /// Exact chord length through the ellipse along the ray `(u, θ)`.
    pub fn chord(&self, u: f64, theta_deg: f64) -> f64 {
        let th = math::to_radians(theta_deg);
        let (s, c) = (math::sin(th), math::cos(th));
        let alpha = th - math::to_radians(self.angle);
        let [a, b] = self.semi_axes;
        let (sa, ca) = (math::sin(alpha), math::cos(alpha));
        let r2 = a * a * ca * ca + b * b * sa * sa;
        let d = u - (self.center[0] * c + self.center[1] * s);
        if d * d >= r2 {
            0.0
        } else {
            2.0 * a * b * math::sqrt(r2 - d * d) / r2
        }
    }
}

/// Closed-form sinogram of a sum of ellipses.
pub fn analytic_ellipse_sinogram(ellipses: &[Ellipse], geometry: &Geometry) -> Result<Sinogram> {
    geometry.validate()?;
    for e in ellipses {
        if !(e.semi_axes[0] > 0.0 && e.semi_axes[1] > 0.0) {
            bail!(InvalidConfig, "ellipse semi-axes must be positive, got {:?}", e.semi_axes);
        }
    }
    let mut sino = Sinogram::for_geometry(geometry);
    let d = geometry.detector_count;
    for a in 0..sino.n_angles() {
        let theta = sino.angles[a];
        for k in 0..d {
            let u = geometry.detector_u(k);
            sino.data[a * d + k] = ellipses.iter().map(|e| e.intensity * e.chord(u, theta)).sum();
        }
    }
    Ok(sino)
}

/// Sample ellipses onto a `size x size` grid, averaging `supersample²`
/// point samples per pixel (1 = pixel-center membership).
pub fn rasterize_ellipses(ellipses: &[Ellipse], size: usize, pixel_size: f64, supersample: usize) -> Slice {
    let ss = supersample.max(1);
    let ps_um = pixel_size * 1e-3;
    let c = (size as f64 - 1.0) / 2.0;
    let mut slice = Slice::zeros(size, size, pixel_size);
    let norm = 1.0 / (ss * ss) as f64;
    for r in 0..size {
        for col in 0..size {
            let mut acc = 0.0;
            for sr in 0..ss {
                let y = (r as f64 - c - 0.5 + (sr as f64 + 0.5) / ss as f64) * ps_um;
                for sc in 0..ss {
                    let x = (col as f64 - c - 0.5 + (sc as f64 + 0.5) / ss as f64) * ps_um;
                    for e in ellipses {
                        if e.contains(x, y) {
                            acc += e.intensity;
                        }
                    }
                }
            }
            slice.data[r * size + col] = acc * norm;
        }
    }
    slice
}
