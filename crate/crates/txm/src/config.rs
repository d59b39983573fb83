//! Run configuration, read from TOML.
//!
//! ```toml
//! seed = 7
//! output_dir = "runs/desk"
//!
//! [geometry]      # angles in degrees, pixel sizes in nm
//! theta_min = -50.0
//! theta_max = 50.0
//! angle_step = 1.0
//! detector_count = 64
//! detector_pixel = 175.2
//! recon_size = 64
//! recon_pixel = 175.2
//!
//! [phantom]       # grid_size, voxel_size, background, per-category ranges
//! [noise]         # doses (round-robin over training scans), eval_dose
//! [pwls]          # beta, sigma, a, eta, iterations
//! [unet]          # depth, base_channels, se_reduction, input_size
//! [training]      # epochs, batch_size, learning_rate, final_learning_rate, ...
//! [pipeline]      # train_phantoms, slices_per_phantom, image_dir, image_range
//! ```
//!
//! Every section except `geometry` may be omitted and falls back to the
//! desk-scale defaults. The `seed` fields inside `phantom` and `training`
//! are ignored: all random streams derive from the top-level `seed`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use txm_core::noise::TRAINING_DOSES;
use txm_core::phantom::PhantomConfig;
use txm_core::projection::Geometry;
use txm_core::pwls::PwlsConfig;
use txm_core::rng::SplitMix64;
use txm_core::unet::{TrainConfig, UNetConfig};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    /// Photons per ray for training scans, assigned round-robin.
    pub doses: Vec<f64>,
    /// Photons per ray for the held-out evaluation scan.
    pub eval_dose: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self { doses: TRAINING_DOSES.to_vec(), eval_dose: 1e4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub train_phantoms: usize,
    /// Slices taken from each of the four rotated scans of a phantom.
    pub slices_per_phantom: usize,
    /// Optional directory of raster images added to the training set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_dir: Option<PathBuf>,
    /// Attenuation (μm⁻¹) that black and white images map to.
    pub image_range: [f64; 2],
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self { train_phantoms: 2, slices_per_phantom: 25, image_dir: None, image_range: [0.0, 0.02] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub geometry: Geometry,
    #[serde(default)]
    pub phantom: PhantomConfig,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub pwls: PwlsConfig,
    #[serde(default)]
    pub unet: UNetConfig,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub pipeline: PipelineSection,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/out")
}

/// Stream keys for seeds derived from the run seed.
pub mod streams {
    pub const PHANTOM: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const TRAINING: u64 = 3;
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl RunConfig {
    /// 64² slices, 101 angles, depth-3 network.
    pub fn desk() -> Self {
        Self {
            seed: 0,
            output_dir: default_output_dir(),
            geometry: Geometry::desk_scale(),
            phantom: PhantomConfig::default(),
            noise: NoiseSection::default(),
            pwls: PwlsConfig::default(),
            unet: UNetConfig::default(),
            training: TrainConfig::default(),
            pipeline: PipelineSection::default(),
        }
    }

    /// 512³ phantoms on a 512-pixel detector, 256² reconstructions, depth-4 network.
    pub fn paper() -> Self {
        Self {
            geometry: Geometry::paper_scale(),
            phantom: PhantomConfig::paper_scale(),
            unet: UNetConfig::paper_scale(),
            training: TrainConfig::paper_scale(),
            ..Self::desk()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Check every section and the cross-section constraints.
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.phantom.validate()?;
        self.pwls.validate()?;
        self.unet.validate()?;
        self.training.validate()?;
        if self.noise.doses.is_empty() {
            return Err(Error::Config("noise.doses must not be empty".into()));
        }
        for &d in self.noise.doses.iter().chain([&self.noise.eval_dose]) {
            txm_core::noise::NoiseModel::new(d, 0).validate()?;
        }
        let p = &self.pipeline;
        if p.train_phantoms == 0 {
            return Err(Error::Config("pipeline.train_phantoms must be >= 1".into()));
        }
        if p.slices_per_phantom == 0 || p.slices_per_phantom > self.phantom.grid_size {
            return Err(Error::Config(format!(
                "pipeline.slices_per_phantom must lie in 1..={}, got {}",
                self.phantom.grid_size, p.slices_per_phantom
            )));
        }
        let [lo, hi] = p.image_range;
        if !(0.0 <= lo && lo < hi && hi.is_finite()) {
            return Err(Error::Config(format!("pipeline.image_range [{lo}, {hi}] must satisfy 0 <= lo < hi")));
        }
        let g = &self.geometry;
        if g.recon_size != self.unet.input_size {
            return Err(Error::Config(format!(
                "geometry.recon_size {} differs from unet.input_size {}",
                g.recon_size, self.unet.input_size
            )));
        }
        let n = self.phantom.grid_size;
        if n % g.recon_size != 0 {
            return Err(Error::Config(format!("phantom grid {n} is not a multiple of recon_size {}", g.recon_size)));
        }
        let field = n as f64 * self.phantom.voxel_size;
        let rel = |a: f64, b: f64| ((a - b) / b).abs() < 1e-9;
        if !rel(g.detector_count as f64 * g.detector_pixel, field) || !rel(g.recon_size as f64 * g.recon_pixel, field) {
            return Err(Error::Config(format!(
                "detector ({} x {} nm) and reconstruction ({} x {} nm) must span the phantom field ({n} x {} nm)",
                g.detector_count, g.detector_pixel, g.recon_size, g.recon_pixel, self.phantom.voxel_size
            )));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Seed for the `index`-th draw of a given stream.
    pub fn derived_seed(&self, stream: u64, index: u64) -> u64 {
        SplitMix64::stream(self.seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15), index).next_u64()
    }

    pub fn phantom_config(&self, index: usize) -> PhantomConfig {
        PhantomConfig { seed: self.derived_seed(streams::PHANTOM, index as u64), ..self.phantom.clone() }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.derived_seed(streams::TRAINING, 0), ..self.training.clone() }
    }

    pub fn noise_seed(&self) -> u64 {
        self.derived_seed(streams::NOISE, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::desk().validate().unwrap();
        RunConfig::paper().validate().unwrap();
    }

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig::desk();
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn minimal_file() {
        let cfg = RunConfig::from_toml(
            "seed = 3\n[geometry]\ntheta_min = -50.0\ntheta_max = 50.0\nangle_step = 1.0\n\
             detector_count = 64\ndetector_pixel = 175.2\nrecon_size = 64\nrecon_pixel = 175.2\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.pipeline, PipelineSection::default());
    }

    #[test]
    fn rejects_bad_sections() {
        let mut cfg = RunConfig::desk();
        cfg.pwls.sigma = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::desk();
        cfg.unet.input_size = 32;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::desk();
        cfg.geometry.detector_pixel = 100.0;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::desk();
        cfg.noise.doses.clear();
        assert!(cfg.validate().is_err());
        assert!(RunConfig::from_toml("seed = 1\nbogus = 2\n").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::desk();
        let mut b = a.clone();
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn derived_seeds_differ() {
        let cfg = RunConfig::desk();
        assert_ne!(cfg.phantom_config(0).seed, cfg.phantom_config(1).seed);
        assert_ne!(cfg.noise_seed(), cfg.train_config().seed);
    }
}
