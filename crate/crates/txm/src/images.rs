//! Ingest ordinary raster images as extra training slices.

use std::path::Path;

use image::imageops::{self, FilterType};
use image::{DynamicImage, ImageBuffer, Luma};
use txm_core::Slice;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct IngestConfig {
    /// Output side length in pixels.
    pub size: usize,
    /// nm
    pub pixel_size: f64,
    /// Attenuation (μm⁻¹) that black and white map to.
    pub range: [f64; 2],
}

impl IngestConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.range;
        if self.size == 0 || !(self.pixel_size > 0.0) {
            return Err(Error::Config("ingest size and pixel size must be positive".into()));
        }
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() || lo < 0.0 {
            return Err(Error::Config(format!("attenuation range [{lo}, {hi}] must satisfy 0 <= lo < hi")));
        }
        Ok(())
    }
}

/// Rec. 709 luminance in `[0, 1]`. Gray pixels map to their own value
/// exactly, so an RGB image with equal channels matches its grayscale twin.
fn luminance(img: &DynamicImage) -> ImageBuffer<Luma<f32>, Vec<f32>> {
    let (w, h) = (img.width(), img.height());
    let data: Vec<f32> = if img.color().has_color() {
        img.to_rgb16()
            .pixels()
            .map(|p| {
                let [r, g, b] = p.0.map(f64::from);
                ((2126.0 * r + 7152.0 * g + 722.0 * b) / 10000.0 / 65535.0) as f32
            })
            .collect()
    } else {
        img.to_luma16().pixels().map(|p| (f64::from(p.0[0]) / 65535.0) as f32).collect()
    };
    ImageBuffer::from_raw(w, h, data).expect("buffer matches dimensions")
}

pub fn image_to_slice(img: &DynamicImage, cfg: &IngestConfig) -> Result<Slice> {
    cfg.validate()?;
    let mut lum = luminance(img);
    let n = cfg.size as u32;
    if lum.width() != n || lum.height() != n {
        lum = imageops::resize(&lum, n, n, FilterType::Triangle);
    }
    let [lo, hi] = cfg.range;
    let data = lum.pixels().map(|p| lo + (hi - lo) * f64::from(p.0[0]).clamp(0.0, 1.0)).collect();
    Ok(Slice::new(cfg.size, cfg.size, cfg.pixel_size, data)?)
}

/// Every readable image in `dir`, in file-name order. Unreadable files are
/// skipped with a warning; a directory without any readable image is an error.
pub fn ingest_images(dir: &Path, cfg: &IngestConfig) -> Result<Vec<Slice>> {
    cfg.validate()?;
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(Error::io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in &paths {
        match image::open(p) {
            Ok(img) => out.push(image_to_slice(&img, cfg)?),
            Err(e) => log::warn!("skipping {}: {e}", p.display()),
        }
    }
    if out.is_empty() {
        return Err(Error::format(dir, "no readable images"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, RgbImage};

    fn cfg(size: usize) -> IngestConfig {
        IngestConfig { size, pixel_size: 43.8, range: [0.0, 0.02] }
    }

    #[test]
    fn white_maps_to_top_of_range() {
        let img = DynamicImage::ImageLuma8(GrayImage::from_pixel(32, 20, Luma([255])));
        let s = image_to_slice(&img, &cfg(16)).unwrap();
        // Resampling runs in f32.
        assert!(s.data.iter().all(|&v| (v - 0.02).abs() < 1e-8));
    }

    #[test]
    fn gray_rgb_matches_grayscale() {
        let gray = GrayImage::from_fn(24, 24, |x, y| Luma([(x * 7 + y * 3) as u8]));
        let rgb = RgbImage::from_fn(24, 24, |x, y| {
            let v = gray.get_pixel(x, y).0[0];
            image::Rgb([v, v, v])
        });
        let a = image_to_slice(&DynamicImage::ImageLuma8(gray), &cfg(16)).unwrap();
        let b = image_to_slice(&DynamicImage::ImageRgb8(rgb), &cfg(16)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn directory_ingest() {
        let dir = tempfile::tempdir().unwrap();
        assert!(ingest_images(dir.path(), &cfg(8)).is_err());
        GrayImage::from_fn(256, 256, |x, y| Luma([((x + y) % 256) as u8])).save(dir.path().join("a.png")).unwrap();
        std::fs::write(dir.path().join("b.png"), b"not an image").unwrap();
        let slices = ingest_images(dir.path(), &cfg(64)).unwrap();
        assert_eq!(slices.len(), 1);
        assert!(slices[0].min() >= 0.0 && slices[0].max() <= 0.02);
        assert_eq!((slices[0].width, slices[0].height), (64, 64));
    }

    #[test]
    fn bad_range() {
        let c = IngestConfig { range: [0.02, 0.0], ..cfg(8) };
        assert!(c.validate().is_err());
    }
}
