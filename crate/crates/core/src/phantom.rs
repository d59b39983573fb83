//! Randomized ellipsoid phantoms mimicking single algae cells, slice
//! selection, and rotation augmentation.
//!
//! A phantom is a constant background plus a sum of solid ellipsoids in four
//! categories: two large ones forming the cell boundary, two mid-sized ones
//! standing in for the cup-shaped chloroplast, small lipid bodies, and tiny
//! high-attenuation gold markers. Overlapping ellipsoids add.

use alloc::vec::Vec;

use crate::error::bail;
use crate::grid::{Slice, Volume};
use crate::math;
use crate::rng::SplitMix64;
use crate::Result;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// One solid ellipsoid.
///
/// Center and semi-axes are in voxel index units; a voxel belongs to the
/// ellipsoid iff its center satisfies the quadratic inequality.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct EllipsoidSpec {
    pub center: [f64; 3],
    pub semi_axes: [f64; 3],
    /// Intrinsic z-y-x rotation, degrees.
    pub euler_angles: [f64; 3],
    /// Additive attenuation, μm⁻¹.
    pub intensity: f64,
}

impl EllipsoidSpec {
    /// Rotation matrix `Rz(a) * Ry(b) * Rx(c)`, mapping local to grid axes.
    fn rotation(&self) -> [[f64; 3]; 3] {
        let [a, b, c] = self.euler_angles.map(math::to_radians);
        let (sa, ca) = (math::sin(a), math::cos(a));
        let (sb, cb) = (math::sin(b), math::cos(b));
        let (sc, cc) = (math::sin(c), math::cos(c));
        [
            [ca * cb, ca * sb * sc - sa * cc, ca * sb * cc + sa * sc],
            [sa * cb, sa * sb * sc + ca * cc, sa * sb * cc - ca * sc],
            [-sb, cb * sc, cb * cc],
        ]
    }

    fn validate(&self) -> Result<()> {
        if self.semi_axes.iter().any(|&a| !(a > 0.0) || !a.is_finite()) {
            bail!(InvalidConfig, "ellipsoid semi-axes must be positive, got {:?}", self.semi_axes);
        }
        Ok(())
    }

    /// Add `intensity` to every voxel whose center lies inside.
    fn paint(&self, volume: &mut Volume) {
        let rot = self.rotation();
        let reach = self.semi_axes.iter().copied().fold(0.0, f64::max);
        let dims = [volume.nx, volume.ny, volume.nz];
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for k in 0..3 {
            let l = math::floor(self.center[k] - reach).max(0.0);
            let h = math::ceil(self.center[k] + reach).min(dims[k] as f64 - 1.0);
            if h < l {
                return;
            }
            lo[k] = l as usize;
            hi[k] = h as usize;
        }
        let inv = self.semi_axes.map(|a| 1.0 / (a * a));
        for z in lo[2]..=hi[2] {
            let dz = z as f64 - self.center[2];
            for y in lo[1]..=hi[1] {
                let dy = y as f64 - self.center[1];
                for x in lo[0]..=hi[0] {
                    let dx = x as f64 - self.center[0];
                    // local = R^T d
                    let lx = rot[0][0] * dx + rot[1][0] * dy + rot[2][0] * dz;
                    let ly = rot[0][1] * dx + rot[1][1] * dy + rot[2][1] * dz;
                    let lz = rot[0][2] * dx + rot[1][2] * dy + rot[2][2] * dz;
                    if lx * lx * inv[0] + ly * ly * inv[1] + lz * lz * inv[2] <= 1.0 {
                        let i = volume.index(x, y, z);
                        volume.data[i] += self.intensity;
                    }
                }
            }
        }
    }
}

/// Randomization ranges for one ellipsoid category.
///
/// Offsets and semi-axes are fractions of the grid size.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct CategoryConfig {
    pub count: usize,
    /// Maximum |center - grid center| per axis.
    pub center_spread: f64,
    pub axes: [f64; 2],
    /// μm⁻¹
    pub intensity: [f64; 2],
}

impl CategoryConfig {
    fn validate(&self, name: &str) -> Result<()> {
        let [alo, ahi] = self.axes;
        if !(alo > 0.0) || alo > ahi {
            bail!(InvalidConfig, "{name}: axis range [{alo}, {ahi}] must satisfy 0 < lo <= hi");
        }
        if ahi > 0.5 {
            bail!(InvalidConfig, "{name}: semi-axis fraction {ahi} exceeds the grid (max 0.5)");
        }
        let [ilo, ihi] = self.intensity;
        if !(ilo >= 0.0) || ilo > ihi || !ihi.is_finite() {
            bail!(InvalidConfig, "{name}: intensity range [{ilo}, {ihi}] must satisfy 0 <= lo <= hi");
        }
        if !(self.center_spread >= 0.0) || self.center_spread > 0.5 {
            bail!(InvalidConfig, "{name}: center spread {} must lie in [0, 0.5]", self.center_spread);
        }
        Ok(())
    }

    fn sample(&self, rng: &mut SplitMix64, grid: usize) -> EllipsoidSpec {
        let g = grid as f64;
        let mid = (g - 1.0) / 2.0;
        let spread = self.center_spread * g;
        let center = [(); 3].map(|_| mid + rng.uniform(-spread, spread));
        let semi_axes = [(); 3].map(|_| rng.uniform(self.axes[0], self.axes[1]) * g);
        let euler_angles = [(); 3].map(|_| rng.uniform(0.0, 180.0));
        let intensity = rng.uniform(self.intensity[0], self.intensity[1]);
        EllipsoidSpec { center, semi_axes, euler_angles, intensity }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct PhantomConfig {
    pub grid_size: usize,
    /// nm
    pub voxel_size: f64,
    pub seed: u64,
    /// μm⁻¹, the ice the cells are embedded in
    pub background: f64,
    pub outer: CategoryConfig,
    pub chloroplast: CategoryConfig,
    pub lipid: CategoryConfig,
    pub gold: CategoryConfig,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            grid_size: 64,
            voxel_size: 175.2,
            seed: 0,
            background: 0.002,
            outer: CategoryConfig { count: 2, center_spread: 0.04, axes: [0.35, 0.48], intensity: [0.002, 0.004] },
            chloroplast: CategoryConfig { count: 2, center_spread: 0.12, axes: [0.15, 0.30], intensity: [0.004, 0.008] },
            lipid: CategoryConfig { count: 20, center_spread: 0.25, axes: [0.02, 0.06], intensity: [0.006, 0.010] },
            gold: CategoryConfig { count: 50, center_spread: 0.35, axes: [0.005, 0.015], intensity: [0.03, 0.06] },
        }
    }
}

impl PhantomConfig {
    /// Full-size phantom: 512³ voxels at the detector pixel pitch.
    pub fn paper_scale() -> Self {
        Self { grid_size: 512, voxel_size: 21.9, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_size < 8 {
            bail!(InvalidConfig, "phantom grid size must be >= 8, got {}", self.grid_size);
        }
        if !(self.background >= 0.0) || !self.background.is_finite() {
            bail!(InvalidConfig, "background must be >= 0, got {}", self.background);
        }
        if !(self.voxel_size > 0.0) {
            bail!(InvalidConfig, "voxel size must be positive, got {}", self.voxel_size);
        }
        self.outer.validate("outer")?;
        self.chloroplast.validate("chloroplast")?;
        self.lipid.validate("lipid")?;
        self.gold.validate("gold")?;
        Ok(())
    }

    /// Same config with every category count set to zero.
    pub fn empty(self) -> Self {
        let mut c = self;
        c.outer.count = 0;
        c.chloroplast.count = 0;
        c.lipid.count = 0;
        c.gold.count = 0;
        c
    }
}

/// Draw a random phantom; returns the volume and the ellipsoids that make it.
pub fn generate_phantom(config: &PhantomConfig) -> Result<(Volume, Vec<EllipsoidSpec>)> {
    config.validate()?;
    let mut rng = SplitMix64::new(config.seed);
    let mut specs = Vec::new();
    for cat in [&config.outer, &config.chloroplast, &config.lipid, &config.gold] {
        for _ in 0..cat.count {
            specs.push(cat.sample(&mut rng, config.grid_size));
        }
    }
    let volume = rasterize(&specs, config.grid_size, config.voxel_size, config.background)?;
    Ok((volume, specs))
}

/// Background plus the indicator function of each ellipsoid times its intensity.
pub fn rasterize(specs: &[EllipsoidSpec], grid_size: usize, voxel_size: f64, background: f64) -> Result<Volume> {
    let mut volume = Volume::filled(grid_size, grid_size, grid_size, voxel_size, background);
    for spec in specs {
        spec.validate()?;
        spec.paint(&mut volume);
    }
    Ok(volume)
}

/// Index of slice `k` of `n` uniformly spaced slices in a stack of `depth`.
///
/// The stack is cut into `n` equal bins and the voxel nearest each bin
/// center is taken; an exact tie between two voxels picks the lower one.
pub fn uniform_slice_index(k: usize, n: usize, depth: usize) -> usize {
    // bin center in voxel-center coordinates: ((2k+1)*depth - n) / (2n)
    let num = (2 * k + 1) as i64 * depth as i64 - n as i64;
    let den = 2 * n as i64;
    // round half down: ceil(num/den - 1/2) = ceil((2num - den) / 2den)
    let a = 2 * num - den;
    let b = 2 * den;
    let idx = (a + b - 1).div_euclid(b);
    idx.clamp(0, depth as i64 - 1) as usize
}

/// `n` horizontal slices at uniformly spaced heights, in z order.
pub fn extract_slices(volume: &Volume, n: usize) -> Result<Vec<Slice>> {
    if n == 0 || n > volume.nz {
        bail!(OutOfRange, "slice count {n} must lie in 1..={}", volume.nz);
    }
    (0..n).map(|k| volume.slice(uniform_slice_index(k, n, volume.nz))).collect()
}

/// Each input followed by its 90°, 180° and 270° rotations.
pub fn augment_rotations(slices: &[Slice]) -> Result<Vec<Slice>> {
    let mut out = Vec::with_capacity(slices.len() * 4);
    for s in slices {
        let r1 = s.rot90()?;
        let r2 = r1.rot90()?;
        let r3 = r2.rot90()?;
        out.extend([s.clone(), r1, r2, r3]);
    }
    Ok(out)
}
