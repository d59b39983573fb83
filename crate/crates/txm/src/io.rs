//! Raw little-endian `f32` volumes with a JSON sidecar.
//!
//! `name.vol` holds the payload, z-major then row-major (x fastest).
//! `name.vol.json` holds the [`Header`]. Sinogram stacks use the same layout
//! with dims `[detector, angles, slices]`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use txm_core::projection::Sinogram;
use txm_core::{Slice, Volume};

use crate::{Error, Result};

pub const DTYPE: &str = "f32le";
pub const UNITS_ATTENUATION: &str = "um^-1";
pub const UNITS_LINE_INTEGRAL: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Volume,
    Sinograms,
}

/// One step of the chain that produced a file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub command: String,
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub kind: Kind,
    /// Fastest-varying first.
    pub dims: [usize; 3],
    pub pixel_size_nm: f64,
    pub units: String,
    pub dtype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub command: String,
    pub config_hash: String,
    /// Oldest step first; the last entry is the step that wrote this file.
    pub provenance: Vec<Step>,
    /// Degrees, for sinogram stacks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angles: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub extras: Map<String, Value>,
}

impl Header {
    pub fn new(kind: Kind, dims: [usize; 3], pixel_size_nm: f64, step: Step, parents: &[&Header]) -> Self {
        let mut provenance: Vec<Step> = parents.iter().flat_map(|h| h.provenance.iter().cloned()).collect();
        provenance.push(step.clone());
        Self {
            kind,
            dims,
            pixel_size_nm,
            units: match kind {
                Kind::Volume => UNITS_ATTENUATION,
                Kind::Sinograms => UNITS_LINE_INTEGRAL,
            }
            .into(),
            dtype: DTYPE.into(),
            seed: step.seed,
            command: step.command,
            config_hash: step.config_hash,
            provenance,
            angles: None,
            extras: Map::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VolumeFile {
    pub header: Header,
    pub data: Vec<f32>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

impl VolumeFile {
    pub fn from_volume(volume: &Volume, step: Step, parents: &[&Header]) -> Self {
        let header = Header::new(Kind::Volume, [volume.nx, volume.ny, volume.nz], volume.voxel_size, step, parents);
        Self { header, data: volume.data.iter().map(|&v| v as f32).collect() }
    }

    pub fn from_sinograms(sinos: &[Sinogram], step: Step, parents: &[&Header]) -> Result<Self> {
        let Some(first) = sinos.first() else {
            return Err(Error::Usage("no sinograms to write".into()));
        };
        for s in sinos {
            s.check_shape()?;
            if s.angles != first.angles || s.detector_count != first.detector_count {
                return Err(txm_core::Error::ShapeMismatch("sinograms in a stack differ in shape".into()).into());
            }
        }
        let dims = [first.detector_count, first.n_angles(), sinos.len()];
        let mut header = Header::new(Kind::Sinograms, dims, first.detector_pixel, step, parents);
        header.angles = Some(first.angles.clone());
        let data = sinos.iter().flat_map(|s| s.data.iter().map(|&v| v as f32)).collect();
        Ok(Self { header, data })
    }

    pub fn to_volume(&self) -> Result<Volume> {
        self.expect_kind(Kind::Volume)?;
        let [nx, ny, nz] = self.header.dims;
        Ok(Volume { nx, ny, nz, voxel_size: self.header.pixel_size_nm, data: self.data.iter().map(|&v| v as f64).collect() })
    }

    pub fn slice(&self, z: usize) -> Result<Slice> {
        self.expect_kind(Kind::Volume)?;
        let [nx, ny, nz] = self.header.dims;
        if z >= nz {
            return Err(txm_core::Error::OutOfRange(format!("slice {z} outside volume of depth {nz}")).into());
        }
        let n = nx * ny;
        let data = self.data[z * n..(z + 1) * n].iter().map(|&v| v as f64).collect();
        Ok(Slice::new(nx, ny, self.header.pixel_size_nm, data)?)
    }

    pub fn to_sinograms(&self) -> Result<Vec<Sinogram>> {
        self.expect_kind(Kind::Sinograms)?;
        let [det, na, nz] = self.header.dims;
        let angles = self.header.angles.clone().unwrap_or_default();
        if angles.len() != na {
            return Err(Error::Usage(format!("sinogram header lists {} angles for {na} rows", angles.len())));
        }
        let n = det * na;
        Ok((0..nz)
            .map(|z| Sinogram {
                angles: angles.clone(),
                detector_count: det,
                detector_pixel: self.header.pixel_size_nm,
                data: self.data[z * n..(z + 1) * n].iter().map(|&v| v as f64).collect(),
            })
            .collect())
    }

    fn expect_kind(&self, kind: Kind) -> Result<()> {
        if self.header.kind != kind {
            return Err(Error::Usage(format!("expected a {kind:?} file, got {:?}", self.header.kind)));
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if self.data.len() != self.header.len() {
            return Err(Error::format(path, format!("payload has {} values, dims need {}", self.data.len(), self.header.len())));
        }
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(Error::io(dir))?;
        }
        let mut bytes = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, bytes).map_err(Error::io(path))?;
        let side = sidecar_path(path);
        let json = serde_json::to_string_pretty(&self.header).expect("header serializes");
        fs::write(&side, json + "\n").map_err(Error::io(&side))?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let header = read_header(path)?;
        if header.dtype != DTYPE {
            return Err(Error::format(path, format!("unsupported dtype {:?}", header.dtype)));
        }
        let bytes = fs::read(path).map_err(Error::io(path))?;
        if bytes.len() != header.len() * 4 {
            return Err(Error::format(
                path,
                format!("payload is {} bytes, dims {:?} need {}", bytes.len(), header.dims, header.len() * 4),
            ));
        }
        let data = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        Ok(Self { header, data })
    }
}

pub fn read_header(path: &Path) -> Result<Header> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(Error::io(&side))?;
    serde_json::from_str(&text).map_err(|e| Error::format(&side, e.to_string()))
}
