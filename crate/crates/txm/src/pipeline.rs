//! End-to-end synthetic experiment: phantoms, limited-angle scans, both
//! reconstruction branches, network training and held-out evaluation.
//!
//! Training data: each phantom is scanned in four orientations (0°, 90°,
//! 180°, 270° about z). The 0° and 90° scans are reconstructed straight
//! from the noisy projections, the 180° and 270° scans after PWLS. Doses
//! cycle through `noise.doses` per scan. Every pair is an FBP slice and its
//! artifact image (FBP minus the reference slice).
//!
//! Evaluation: one unseen phantom at `noise.eval_dose`, every slice, both
//! branches, before and after the network.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use txm_core::metrics::{self, FovMask};
use txm_core::noise::{apply_poisson, NoiseModel};
use txm_core::phantom::{generate_phantom, uniform_slice_index};
use txm_core::projection::{forward_project, Geometry, Sinogram};
use txm_core::pwls::{pwls_denoise, pwls_denoise_projections, PwlsConfig};
use txm_core::unet::{infer, train_observed, LossRecord, NormalizationSpec, UNetParams};
use txm_core::{fbp, Slice, Volume};

use crate::config::RunConfig;
use crate::error::StageExt;
use crate::images::{ingest_images, IngestConfig};
use crate::io::{Step, VolumeFile};
use crate::{checkpoint, Error, Result};

/// Project every slice of a stack.
pub fn project_all(slices: &[Slice], geometry: &Geometry) -> Result<Vec<Sinogram>> {
    Ok(slices.par_iter().map(|s| forward_project(s, geometry)).collect::<txm_core::Result<Vec<_>>>()?)
}

/// Noise slice `z` of scan `scan` from stream `(scan << 32) | z`.
pub fn noise_all(sinos: &[Sinogram], model: &NoiseModel, scan: u64) -> Result<Vec<Sinogram>> {
    Ok(sinos
        .par_iter()
        .enumerate()
        .map(|(z, s)| apply_poisson(s, model, (scan << 32) | z as u64))
        .collect::<txm_core::Result<Vec<_>>>()?)
}

/// PWLS per projection image for stacks, in the (θ, u) plane for a single slice.
pub fn denoise_all(sinos: &[Sinogram], config: &PwlsConfig) -> Result<Vec<Sinogram>> {
    if sinos.len() == 1 {
        return Ok(vec![pwls_denoise(&sinos[0], config)?]);
    }
    Ok(pwls_denoise_projections(sinos, config)?)
}

pub fn reconstruct_all(sinos: &[&Sinogram], geometry: &Geometry) -> Result<Vec<Slice>> {
    Ok(sinos.par_iter().map(|s| fbp::fbp_reconstruct(s, geometry)).collect::<txm_core::Result<Vec<_>>>()?)
}

/// Box-average a phantom slice onto the reconstruction grid.
pub fn to_recon_grid(slice: &Slice, recon_size: usize) -> Result<Slice> {
    if slice.width == recon_size {
        return Ok(slice.clone());
    }
    if slice.width % recon_size != 0 {
        return Err(Error::Config(format!("slice width {} is not a multiple of {recon_size}", slice.width)));
    }
    Ok(slice.downsample(slice.width / recon_size)?)
}

fn rotate(slice: &Slice, quarter_turns: usize) -> Result<Slice> {
    let mut s = slice.clone();
    for _ in 0..quarter_turns {
        s = s.rot90()?;
    }
    Ok(s)
}

fn max_abs<'a>(slices: impl IntoIterator<Item = &'a Slice>) -> f64 {
    slices.into_iter().flat_map(|s| s.data.iter()).fold(0.0f64, |m, v| m.max(v.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Scores {
    /// μm⁻¹, inside the FOV.
    pub rmse: f64,
    pub ssim: f64,
    pub ssim_fov: f64,
}

/// Mean per-slice scores. SSIM uses the dynamic range of the whole
/// reference stack, so background-only slices stay well defined.
pub fn evaluate(recon: &[Slice], reference: &[Slice]) -> Result<Scores> {
    if recon.len() != reference.len() || recon.is_empty() {
        return Err(txm_core::Error::ShapeMismatch(format!(
            "{} reconstructed slices against {} reference slices",
            recon.len(),
            reference.len()
        ))
        .into());
    }
    let hi = reference.iter().map(|s| s.max()).fold(f64::NEG_INFINITY, f64::max);
    let lo = reference.iter().map(|s| s.min()).fold(f64::INFINITY, f64::min);
    let range = hi - lo;
    let mask = FovMask::for_slice(&reference[0]);
    let per: Vec<Scores> = recon
        .par_iter()
        .zip(reference)
        .map(|(x, r)| -> txm_core::Result<Scores> {
            Ok(Scores {
                rmse: metrics::rmse_fov(x, r, &mask)?,
                ssim: metrics::ssim(x, r, range)?,
                ssim_fov: metrics::ssim_fov(x, r, range, &mask)?,
            })
        })
        .collect::<txm_core::Result<Vec<_>>>()?;
    let n = per.len() as f64;
    Ok(Scores {
        rmse: per.iter().map(|s| s.rmse).sum::<f64>() / n,
        ssim: per.iter().map(|s| s.ssim).sum::<f64>() / n,
        ssim_fov: per.iter().map(|s| s.ssim_fov).sum::<f64>() / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Summary {
    pub fbp: Scores,
    pub fbp_pwls: Scores,
    pub unet: Scores,
    pub unet_pwls: Scores,
}

impl Summary {
    pub const HEADER: &'static str = "metric,fbp,fbp_pwls,unet,unet_pwls";

    pub fn to_csv(&self) -> String {
        let cols = [self.fbp, self.fbp_pwls, self.unet, self.unet_pwls];
        let mut s = format!("{}\n", Self::HEADER);
        for (name, get) in [
            ("rmse", (|c: &Scores| c.rmse) as fn(&Scores) -> f64),
            ("ssim", |c| c.ssim),
            ("ssim_fov", |c| c.ssim_fov),
        ] {
            write!(s, "{name}").unwrap();
            for c in &cols {
                write!(s, ",{:.9e}", get(c)).unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Usage(format!("summary csv: {m}"));
        let mut lines = text.lines();
        if lines.next() != Some(Self::HEADER) {
            return Err(bad("unexpected header".into()));
        }
        let mut out = Summary::default();
        for line in lines {
            let mut f = line.split(',');
            let name = f.next().unwrap_or_default().to_string();
            let v: Vec<f64> = f.map(|x| x.parse::<f64>().map_err(|e| bad(e.to_string()))).collect::<Result<_>>()?;
            if v.len() != 4 {
                return Err(bad(format!("row {name} has {} values", v.len())));
            }
            let cols = [&mut out.fbp, &mut out.fbp_pwls, &mut out.unet, &mut out.unet_pwls];
            for (c, x) in cols.into_iter().zip(v) {
                match name.as_str() {
                    "rmse" => c.rmse = x,
                    "ssim" => c.ssim = x,
                    "ssim_fov" => c.ssim_fov = x,
                    _ => return Err(bad(format!("unknown row {name}"))),
                }
            }
        }
        Ok(out)
    }
}

pub fn loss_csv(log: &[LossRecord]) -> String {
    let mut s = String::from("step,lr,loss\n");
    for r in log {
        writeln!(s, "{},{:e},{:e}", r.step, r.lr, r.loss).unwrap();
    }
    s
}

/// One scan's worth of (input, artifact) pairs.
fn scan_pairs(
    cfg: &RunConfig,
    reference: &[Slice],
    scan: u64,
    use_pwls: bool,
    selected: &[usize],
) -> Result<Vec<(Slice, Slice)>> {
    let dose = cfg.noise.doses[scan as usize % cfg.noise.doses.len()];
    let clean = project_all(reference, &cfg.geometry).stage("project")?;
    let mut sinos = noise_all(&clean, &NoiseModel::new(dose, cfg.noise_seed()), scan).stage("noise")?;
    if use_pwls {
        sinos = denoise_all(&sinos, &cfg.pwls).stage("pwls")?;
    }
    let picked: Vec<&Sinogram> = selected.iter().map(|&z| &sinos[z]).collect();
    let recon = reconstruct_all(&picked, &cfg.geometry).stage("fbp")?;
    recon
        .into_iter()
        .zip(selected)
        .map(|(x, &z)| {
            let r = to_recon_grid(&reference[z], cfg.geometry.recon_size)?;
            let data = x.data.iter().zip(&r.data).map(|(a, b)| a - b).collect();
            let t = Slice::new(x.width, x.height, x.pixel_size, data)?;
            Ok((x, t))
        })
        .collect()
}

/// The four rotated scans of a stack of reference slices.
fn rotated_scans(cfg: &RunConfig, slices: &[Slice], first_scan: u64, selected: &[usize]) -> Result<Vec<(Slice, Slice)>> {
    let mut pairs = Vec::new();
    for r in 0..4 {
        let rotated = slices.par_iter().map(|s| rotate(s, r)).collect::<Result<Vec<_>>>().stage("augment")?;
        pairs.extend(scan_pairs(cfg, &rotated, first_scan + r as u64, r >= 2, selected)?);
    }
    Ok(pairs)
}

/// Training pairs from `pipeline.train_phantoms` phantoms plus any ingested images.
pub fn training_set(cfg: &RunConfig) -> Result<Vec<(Slice, Slice)>> {
    let n = cfg.phantom.grid_size;
    let selected: Vec<usize> =
        (0..cfg.pipeline.slices_per_phantom).map(|k| uniform_slice_index(k, cfg.pipeline.slices_per_phantom, n)).collect();
    let mut pairs = Vec::new();
    for p in 0..cfg.pipeline.train_phantoms {
        log::info!("training phantom {}/{}", p + 1, cfg.pipeline.train_phantoms);
        let (vol, _) = generate_phantom(&cfg.phantom_config(p)).stage("phantom")?;
        let slices = (0..vol.nz).map(|z| vol.slice(z)).collect::<txm_core::Result<Vec<_>>>().stage("phantom")?;
        pairs.extend(rotated_scans(cfg, &slices, 4 * p as u64, &selected)?);
    }
    if let Some(dir) = &cfg.pipeline.image_dir {
        let ingest = IngestConfig { size: n, pixel_size: cfg.phantom.voxel_size, range: cfg.pipeline.image_range };
        let images = ingest_images(dir, &ingest).stage("ingest")?;
        log::info!("{} ingested images", images.len());
        let first = 4 * cfg.pipeline.train_phantoms as u64;
        for (i, img) in images.iter().enumerate() {
            pairs.extend(rotated_scans(cfg, std::slice::from_ref(img), first + 4 * i as u64, &[0])?);
        }
    }
    Ok(pairs)
}

/// Reference and both FBP branches of the held-out phantom, every slice.
pub struct HeldOut {
    pub reference: Vec<Slice>,
    pub fbp: Vec<Slice>,
    pub fbp_pwls: Vec<Slice>,
}

pub fn held_out(cfg: &RunConfig) -> Result<HeldOut> {
    let (vol, _) = generate_phantom(&cfg.phantom_config(cfg.pipeline.train_phantoms)).stage("phantom")?;
    let slices = (0..vol.nz).map(|z| vol.slice(z)).collect::<txm_core::Result<Vec<_>>>().stage("phantom")?;
    let clean = project_all(&slices, &cfg.geometry).stage("project")?;
    let model = NoiseModel::new(cfg.noise.eval_dose, cfg.derived_seed(crate::config::streams::NOISE, 1));
    let noisy = noise_all(&clean, &model, 0).stage("noise")?;
    let denoised = denoise_all(&noisy, &cfg.pwls).stage("pwls")?;
    let fbp = reconstruct_all(&noisy.iter().collect::<Vec<_>>(), &cfg.geometry).stage("fbp")?;
    let fbp_pwls = reconstruct_all(&denoised.iter().collect::<Vec<_>>(), &cfg.geometry).stage("fbp")?;
    let reference = slices
        .iter()
        .map(|s| to_recon_grid(s, cfg.geometry.recon_size))
        .collect::<Result<Vec<_>>>()
        .stage("eval")?;
    Ok(HeldOut { reference, fbp, fbp_pwls })
}

/// Apply the network to a stack, normalizing by the stack's own max |value|.
pub fn infer_all(slices: &[Slice], params: &UNetParams) -> Result<(Vec<Slice>, f64)> {
    let scale = max_abs(slices);
    let norm = NormalizationSpec::new(scale)?;
    let out = slices.par_iter().map(|s| infer(s, params, &norm)).collect::<txm_core::Result<Vec<_>>>()?;
    Ok((out, scale))
}

#[derive(Debug, Clone, Serialize)]
pub struct RunMetadata {
    pub config_hash: String,
    pub seed: u64,
    pub training_pairs: usize,
    pub parameter_count: usize,
    pub train_scale: f64,
    pub infer_scale_fbp: f64,
    pub infer_scale_fbp_pwls: f64,
    pub final_loss: Option<f64>,
    pub summary: Summary,
}

pub struct Outcome {
    pub summary: Summary,
    pub losses: Vec<LossRecord>,
    pub metadata: RunMetadata,
    pub dir: PathBuf,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(Error::io(path))
}

/// Run every stage and write the experiment directory.
pub fn run(cfg: &RunConfig, out_dir: &Path) -> Result<Outcome> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(Error::io(out_dir)).stage("write")?;
    let hash = cfg.hash();
    write_text(&out_dir.join("config.toml"), &cfg.to_toml()).stage("write")?;

    let pairs = training_set(cfg)?;
    log::info!("{} training pairs", pairs.len());
    let train_norm = NormalizationSpec::new(max_abs(pairs.iter().map(|(x, _)| x))).stage("train")?;
    let tc = cfg.train_config();
    let params = UNetParams::init(&cfg.unet, tc.seed).stage("train")?;
    let steps_per_epoch = pairs.len().div_ceil(tc.batch_size);
    let (mut params, losses) = train_observed(params, &pairs, &tc, train_norm, |r| {
        if (r.step + 1) % steps_per_epoch == 0 {
            log::info!("epoch {} lr {:.3e} loss {:.4e}", r.epoch, r.lr, r.loss);
        }
    })
    .stage("train")?;
    let n_pairs = pairs.len();
    drop(pairs);
    checkpoint::save(&out_dir.join("model.ckpt"), &mut params, train_norm).stage("write")?;
    write_text(&out_dir.join("loss.csv"), &loss_csv(&losses)).stage("write")?;

    log::info!("evaluating held-out phantom");
    let test = held_out(cfg)?;
    let (unet, s1) = infer_all(&test.fbp, &params).stage("infer")?;
    let (unet_pwls, s2) = infer_all(&test.fbp_pwls, &params).stage("infer")?;
    let summary = Summary {
        fbp: evaluate(&test.fbp, &test.reference).stage("eval")?,
        fbp_pwls: evaluate(&test.fbp_pwls, &test.reference).stage("eval")?,
        unet: evaluate(&unet, &test.reference).stage("eval")?,
        unet_pwls: evaluate(&unet_pwls, &test.reference).stage("eval")?,
    };
    write_text(&out_dir.join("summary.csv"), &summary.to_csv()).stage("write")?;

    let step = |name: &str| Step {
        command: format!("pipeline:{name}"),
        config_hash: hash.clone(),
        seed: Some(cfg.seed),
        inputs: vec![],
    };
    let write_stack = |name: &str, slices: &[Slice]| -> Result<()> {
        let vol = Volume::from_slices(slices)?;
        VolumeFile::from_volume(&vol, step(name), &[]).write(&out_dir.join(format!("{name}.vol")))
    };
    for (name, stack) in [
        ("reference", &test.reference),
        ("fbp", &test.fbp),
        ("fbp_pwls", &test.fbp_pwls),
        ("unet", &unet),
        ("unet_pwls", &unet_pwls),
    ] {
        write_stack(name, stack).stage("write")?;
    }

    let metadata = RunMetadata {
        config_hash: hash,
        seed: cfg.seed,
        training_pairs: n_pairs,
        parameter_count: params.parameter_count(),
        train_scale: train_norm.scale,
        infer_scale_fbp: s1,
        infer_scale_fbp_pwls: s2,
        final_loss: losses.last().map(|r| r.loss),
        summary,
    };
    let json = serde_json::to_string_pretty(&metadata).expect("metadata serializes");
    write_text(&out_dir.join("run.json"), &(json + "\n")).stage("write")?;
    Ok(Outcome { summary, losses, metadata, dir: out_dir.to_path_buf() })
}
