//! Versioned binary checkpoint for [`UNetParams`].
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic    8 bytes  "TXMUNET\0"
//! version  u32
//! config   u32 length + UTF-8 JSON {"unet": .., "normalization": ..}
//! count    u32
//! count × { u32 name length, name, u32 rank, rank × u64 dims, f64 values }
//! ```
//!
//! Tensors are the trainable parameters followed by the batch-norm running
//! statistics.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use txm_core::unet::{NormalizationSpec, UNetConfig, UNetParams};

use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"TXMUNET\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointConfig {
    pub unet: UNetConfig,
    /// Scale used during training.
    pub normalization: NormalizationSpec,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn encode(params: &mut UNetParams, normalization: NormalizationSpec) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    let cfg = CheckpointConfig { unet: params.config.clone(), normalization };
    let json = serde_json::to_vec(&cfg).expect("config serializes");
    put_u32(&mut out, json.len() as u32);
    out.extend_from_slice(&json);

    let mut entries: Vec<(String, Vec<usize>, Vec<f64>)> = params
        .params_mut()
        .into_iter()
        .map(|p| (p.name, p.tensor.shape.to_vec(), p.tensor.data.clone()))
        .collect();
    for (name, buf) in params.buffers_mut() {
        entries.push((name, vec![buf.len()], buf.clone()));
    }
    put_u32(&mut out, entries.len() as u32);
    for (name, dims, data) in entries {
        put_u32(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, dims.len() as u32);
        for d in dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated checkpoint")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> std::result::Result<(UNetParams, NormalizationSpec), String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err("not a txm checkpoint (bad magic)".into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let n = r.u32()? as usize;
    let cfg: CheckpointConfig = serde_json::from_slice(r.take(n)?).map_err(|e| e.to_string())?;
    let mut params = UNetParams::init(&cfg.unet, 0).map_err(|e| e.to_string())?;

    let count = r.u32()? as usize;
    let mut stored = std::collections::HashMap::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|e| e.to_string())?;
        let rank = r.u32()? as usize;
        let dims = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
        let total = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or("tensor size overflows")?;
        let raw = r.take(total.checked_mul(8).ok_or("tensor size overflows")?)?;
        let data: Vec<f64> = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
        if stored.insert(name.clone(), (dims, data)).is_some() {
            return Err(format!("duplicate tensor {name}"));
        }
    }
    if r.pos != bytes.len() {
        return Err("trailing bytes after the last tensor".into());
    }

    let mut fill = |name: &str, dims: &[usize], dst: &mut Vec<f64>| -> std::result::Result<(), String> {
        let (d, data) = stored.remove(name).ok_or_else(|| format!("missing tensor {name}"))?;
        if d != dims {
            return Err(format!("tensor {name} has shape {d:?}, expected {dims:?}"));
        }
        *dst = data;
        Ok(())
    };
    for p in params.params_mut() {
        let shape = p.tensor.shape;
        fill(&p.name, &shape, &mut p.tensor.data)?;
    }
    for (name, buf) in params.buffers_mut() {
        let len = buf.len();
        fill(&name, &[len], buf)?;
    }
    if let Some(extra) = stored.keys().next() {
        return Err(format!("unexpected tensor {extra}"));
    }
    Ok((params, cfg.normalization))
}

pub fn save(path: &Path, params: &mut UNetParams, normalization: NormalizationSpec) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    fs::write(path, encode(params, normalization)).map_err(Error::io(path))
}

pub fn load(path: &Path) -> Result<(UNetParams, NormalizationSpec)> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    decode(&bytes).map_err(|msg| Error::format(path, msg))
}
