//! RMSE inside the field of view and SSIM.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::bail;
use crate::grid::Slice;
use crate::math;
use crate::{Error, Result};

pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

/// Pixels whose centers lie in the circle inscribed in the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FovMask {
    pub width: usize,
    pub height: usize,
    pub inside: Vec<bool>,
}

impl FovMask {
    pub fn inscribed(width: usize, height: usize) -> Self {
        let cx = (width as f64 - 1.0) / 2.0;
        let cy = (height as f64 - 1.0) / 2.0;
        let r = width.min(height) as f64 / 2.0;
        let mut inside = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                let dx = col as f64 - cx;
                let dy = row as f64 - cy;
                inside.push(dx * dx + dy * dy <= r * r);
            }
        }
        Self { width, height, inside }
    }

    pub fn for_slice(slice: &Slice) -> Self {
        Self::inscribed(slice.width, slice.height)
    }

    #[inline]
    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.inside[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.inside.iter().filter(|&&b| b).count()
    }
}

fn check_pair(a: &Slice, b: &Slice) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        bail!(ShapeMismatch, "images {}x{} and {}x{} differ", a.width, a.height, b.width, b.height);
    }
    Ok(())
}

/// Root-mean-square difference over the masked pixels, μm⁻¹.
pub fn rmse_fov(image: &Slice, reference: &Slice, mask: &FovMask) -> Result<f64> {
    check_pair(image, reference)?;
    if mask.width != image.width || mask.height != image.height {
        bail!(ShapeMismatch, "mask does not match the image size");
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((a, b), &m) in image.data.iter().zip(&reference.data).zip(&mask.inside) {
        if m {
            sum += (a - b) * (a - b);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(math::sqrt(sum / n as f64))
}

/// Normalized 1-D Gaussian of the SSIM window.
fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = math::exp(-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA));
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable 'valid' Gaussian filtering; output is `(w-10) x (h-10)`.
fn filter_valid(data: &[f64], width: usize, height: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = width - SSIM_WINDOW + 1;
    let oh = height - SSIM_WINDOW + 1;
    let mut tmp = vec![0.0; ow * height];
    for r in 0..height {
        let row = &data[r * width..(r + 1) * width];
        for c in 0..ow {
            tmp[r * ow + c] = g.iter().zip(&row[c..c + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..SSIM_WINDOW).map(|k| g[k] * tmp[(r + k) * ow + c]).sum();
        }
    }
    out
}

/// Local SSIM values, one per full 11×11 window, with the window centers.
pub fn ssim_map(image: &Slice, reference: &Slice, dynamic_range: f64) -> Result<(usize, usize, Vec<f64>)> {
    check_pair(image, reference)?;
    if !(dynamic_range > 0.0) {
        bail!(InvalidConfig, "SSIM dynamic range must be positive, got {dynamic_range}");
    }
    let (w, h) = (image.width, image.height);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        bail!(ShapeMismatch, "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}");
    }
    let g = gaussian_window();
    let x = &image.data;
    let y = &reference.data;
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let mx = filter_valid(x, w, h, &g);
    let my = filter_valid(y, w, h, &g);
    let sxx = filter_valid(&xx, w, h, &g);
    let syy = filter_valid(&yy, w, h, &g);
    let sxy = filter_valid(&xy, w, h, &g);
    let c1 = (SSIM_K1 * dynamic_range) * (SSIM_K1 * dynamic_range);
    let c2 = (SSIM_K2 * dynamic_range) * (SSIM_K2 * dynamic_range);
    let map = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .collect();
    Ok((w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1, map))
}

/// Mean local SSIM with an 11×11 Gaussian window (σ = 1.5).
pub fn ssim(image: &Slice, reference: &Slice, dynamic_range: f64) -> Result<f64> {
    let (_, _, map) = ssim_map(image, reference, dynamic_range)?;
    Ok(map.iter().sum::<f64>() / map.len() as f64)
}

/// Mean local SSIM over windows centered inside the mask.
pub fn ssim_fov(image: &Slice, reference: &Slice, dynamic_range: f64, mask: &FovMask) -> Result<f64> {
    let (mw, mh, map) = ssim_map(image, reference, dynamic_range)?;
    let off = SSIM_WINDOW / 2;
    let mut sum = 0.0;
    let mut n = 0usize;
    for r in 0..mh {
        for c in 0..mw {
            if mask.contains(r + off, c + off) {
                sum += map[r * mw + c];
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(sum / n as f64)
}

/// `max - min` of the reference, the SSIM dynamic range used for evaluation.
pub fn dynamic_range(reference: &Slice) -> f64 {
    reference.max() - reference.min()
}
