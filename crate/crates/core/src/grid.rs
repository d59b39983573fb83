//! Sampled attenuation maps: 2-D slices and 3-D volumes.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::bail;
use crate::Result;

/// A horizontal (constant-z) section of an attenuation map.
///
/// `data` is row-major, `height` rows of `width` pixels, values in μm⁻¹.
/// Pixel `(row, col)` has its center at
/// `x = (col - (width-1)/2) * pixel_size`, `y = (row - (height-1)/2) * pixel_size`.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    pub width: usize,
    pub height: usize,
    /// nm
    pub pixel_size: f64,
    pub data: Vec<f64>,
}

impl Slice {
    pub fn new(width: usize, height: usize, pixel_size: f64, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            bail!(InvalidConfig, "slice dimensions must be positive, got {width}x{height}");
        }
        if data.len() != width * height {
            bail!(
                ShapeMismatch,
                "slice {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            );
        }
        if !(pixel_size > 0.0) {
            bail!(InvalidConfig, "pixel size must be positive, got {pixel_size}");
        }
        if data.iter().any(|v| !v.is_finite()) {
            bail!(InvalidConfig, "slice contains non-finite values");
        }
        Ok(Self { width, height, pixel_size, data })
    }

    pub fn filled(width: usize, height: usize, pixel_size: f64, value: f64) -> Self {
        Self { width, height, pixel_size, data: vec![value; width * height] }
    }

    pub fn zeros(width: usize, height: usize, pixel_size: f64) -> Self {
        Self::filled(width, height, pixel_size, 0.0)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Physical width in μm.
    pub fn physical_width_um(&self) -> f64 {
        self.width as f64 * self.pixel_size * 1e-3
    }

    /// Rotate by 90° counter-clockwise (in the row-down display convention).
    ///
    /// Requires a square slice.
    pub fn rot90(&self) -> Result<Slice> {
        if self.width != self.height {
            bail!(ShapeMismatch, "rotation needs a square slice, got {}x{}", self.width, self.height);
        }
        let n = self.width;
        let mut out = Vec::with_capacity(n * n);
        for r in 0..n {
            for c in 0..n {
                out.push(self.data[c * n + (n - 1 - r)]);
            }
        }
        Ok(Slice { width: n, height: n, pixel_size: self.pixel_size, data: out })
    }

    /// Box-average by an integer factor in both directions.
    pub fn downsample(&self, factor: usize) -> Result<Slice> {
        if factor == 0 || self.width % factor != 0 || self.height % factor != 0 {
            bail!(
                InvalidConfig,
                "downsample factor {factor} must divide {}x{}",
                self.width,
                self.height
            );
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let (w, h) = (self.width / factor, self.height / factor);
        let norm = 1.0 / (factor * factor) as f64;
        let mut data = vec![0.0; w * h];
        for r in 0..h {
            for c in 0..w {
                let mut acc = 0.0;
                for dr in 0..factor {
                    let row = &self.data[(r * factor + dr) * self.width..];
                    for dc in 0..factor {
                        acc += row[c * factor + dc];
                    }
                }
                data[r * w + c] = acc * norm;
            }
        }
        Ok(Slice { width: w, height: h, pixel_size: self.pixel_size * factor as f64, data })
    }
}

/// A 3-D attenuation map, z-major then row-major (`index = (z*ny + y)*nx + x`).
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    /// nm, isotropic
    pub voxel_size: f64,
    pub data: Vec<f64>,
}

impl Volume {
    pub fn filled(nx: usize, ny: usize, nz: usize, voxel_size: f64, value: f64) -> Self {
        Self { nx, ny, nz, voxel_size, data: vec![value; nx * ny * nz] }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.ny + y) * self.nx + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.index(x, y, z)]
    }

    /// The horizontal section at height `z`.
    pub fn slice(&self, z: usize) -> Result<Slice> {
        if z >= self.nz {
            bail!(OutOfRange, "slice {z} outside volume of depth {}", self.nz);
        }
        let n = self.nx * self.ny;
        Ok(Slice {
            width: self.nx,
            height: self.ny,
            pixel_size: self.voxel_size,
            data: self.data[z * n..(z + 1) * n].to_vec(),
        })
    }

    /// Stack equally sized slices along z.
    pub fn from_slices(slices: &[Slice]) -> Result<Volume> {
        let Some(first) = slices.first() else {
            bail!(InvalidConfig, "cannot build a volume from zero slices");
        };
        let mut data = Vec::with_capacity(first.data.len() * slices.len());
        for s in slices {
            if s.width != first.width || s.height != first.height {
                bail!(ShapeMismatch, "slices differ in size");
            }
            data.extend_from_slice(&s.data);
        }
        Ok(Volume {
            nx: first.width,
            ny: first.height,
            nz: slices.len(),
            voxel_size: first.pixel_size,
            data,
        })
    }

    /// Rotate every slice by 90° about the z axis (see [`Slice::rot90`]).
    pub fn rot90_z(&self) -> Result<Volume> {
        let slices = (0..self.nz)
            .map(|z| self.slice(z).and_then(|s| s.rot90()))
            .collect::<Result<Vec<_>>>()?;
        Volume::from_slices(&slices)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> Slice {
        Slice::new(n, n, 1.0, (0..n * n).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn rot90_four_times_is_identity() {
        let s = ramp(5);
        let r = s.rot90().unwrap().rot90().unwrap().rot90().unwrap().rot90().unwrap();
        assert_eq!(r, s);
    }

    #[test]
    fn rot90_moves_corner() {
        // [[0,1],[2,3]] -> [[1,3],[0,2]]
        let r = ramp(2).rot90().unwrap();
        assert_eq!(r.data, vec![1.0, 3.0, 0.0, 2.0]);
    }

    #[test]
    fn rot90_rejects_rectangular() {
        let s = Slice::zeros(3, 2, 1.0);
        assert!(s.rot90().is_err());
    }

    #[test]
    fn downsample_averages() {
        let d = ramp(4).downsample(2).unwrap();
        assert_eq!(d.data, vec![2.5, 4.5, 10.5, 12.5]);
        assert_eq!(d.pixel_size, 2.0);
    }

    #[test]
    fn new_rejects_bad_input() {
        assert!(Slice::new(0, 3, 1.0, vec![]).is_err());
        assert!(Slice::new(2, 2, 1.0, vec![0.0; 3]).is_err());
        assert!(Slice::new(1, 1, 1.0, vec![f64::NAN]).is_err());
    }

    #[test]
    fn volume_slice_roundtrip() {
        let slices = [ramp(3), ramp(3)];
        let v = Volume::from_slices(&slices).unwrap();
        assert_eq!(v.slice(1).unwrap(), slices[1]);
        assert!(v.slice(2).is_err());
    }
}
