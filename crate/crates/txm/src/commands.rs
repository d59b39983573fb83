//! Command-line interface. Each subcommand is a thin wrapper over one stage.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};
use txm_core::noise::NoiseModel;
use txm_core::phantom::{generate_phantom, uniform_slice_index};
use txm_core::unet::{train_observed, NormalizationSpec, UNetParams};
use txm_core::{Slice, Volume};

use crate::config::RunConfig;
use crate::export::{self, Line};
use crate::images::{ingest_images, IngestConfig};
use crate::io::{Header, Step, VolumeFile};
use crate::pipeline::{self, evaluate, Scores};
use crate::{checkpoint, Error, Result, THREADS_ENV};

#[derive(Debug, Parser)]
#[command(name = "txm", version, about = "Limited-angle TXM tomography: simulation, PWLS, FBP and U-Net artifact reduction")]
pub struct Cli {
    /// Single worker thread and fixed-order reductions everywhere.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a random ellipsoid phantom volume.
    Phantom(PhantomArgs),
    /// Forward-project every slice of a volume.
    Project(StageArgs),
    /// Add Poisson photon-counting noise to a sinogram stack.
    Noise(NoiseArgs),
    /// PWLS-denoise a sinogram stack.
    Pwls(StageArgs),
    /// Filtered back-projection of a sinogram stack.
    Fbp(StageArgs),
    /// Train the artifact network on (reconstruction, reference) volume pairs.
    Train(TrainArgs),
    /// Subtract the predicted artifact from every slice of a volume.
    Infer(InferArgs),
    /// RMSE and SSIM of a volume against a reference.
    Eval(EvalArgs),
    /// Run the full experiment and write a summary table.
    Pipeline(PipelineArgs),
    /// Write one slice as a windowed 16-bit PNG.
    ExportPng(ExportPngArgs),
    /// Write one row or column of a slice as CSV.
    ExportProfile(ExportProfileArgs),
    /// Convert a directory of raster images into a volume of slices.
    Ingest(IngestArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// Run configuration (TOML); desk-scale defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Phantom number; each draws from its own seed.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StageArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct NoiseArgs {
    #[command(flatten)]
    pub stage: StageArgs,
    /// Photons per ray; defaults to `noise.eval_dose`.
    #[arg(long)]
    pub dose: Option<f64>,
    /// Random stream selector, so separate scans get independent noise.
    #[arg(long, default_value_t = 0)]
    pub scan: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Reconstructed volume; repeat to add more.
    #[arg(long, required = true)]
    pub input: Vec<PathBuf>,
    /// Reference volume matching each `--input`.
    #[arg(long, required = true)]
    pub reference: Vec<PathBuf>,
    /// Uniformly spaced slices per volume; all slices when omitted.
    #[arg(long)]
    pub slices: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Loss log; defaults to `<out>.loss.csv`.
    #[arg(long)]
    pub loss: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub reference: PathBuf,
    /// Also write the scores to this CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Experiment directory; overrides `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportPngArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub slice: usize,
    /// Display window `lo,hi` in μm⁻¹.
    #[arg(long, value_delimiter = ',', default_values_t = export::WINDOW_FULL)]
    pub window: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportProfileArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub slice: usize,
    #[arg(long, conflicts_with = "column", required_unless_present = "column")]
    pub row: Option<usize>,
    #[arg(long)]
    pub column: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub dir: PathBuf,
    /// Output side length in pixels.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// nm
    #[arg(long, default_value_t = 175.2)]
    pub pixel_size: f64,
    /// Attenuation range `lo,hi` in μm⁻¹ for black and white.
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.02])]
    pub range: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

fn load_config(arg: &ConfigArg) -> Result<RunConfig> {
    match &arg.config {
        Some(p) => RunConfig::load(p),
        None => {
            let cfg = RunConfig::desk();
            cfg.validate()?;
            Ok(cfg)
        }
    }
}

fn step(command: &str, hash: &str, seed: Option<u64>, inputs: &[&Path]) -> Step {
    Step {
        command: command.into(),
        config_hash: hash.into(),
        seed,
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
    }
}

fn pair(v: &[f64], what: &str) -> Result<[f64; 2]> {
    match v {
        [a, b] => Ok([*a, *b]),
        _ => Err(Error::Usage(format!("{what} needs exactly two values"))),
    }
}

/// Configure the global worker pool.
pub fn init_threads(deterministic: bool) -> Result<()> {
    let threads = if deterministic {
        1
    } else {
        match std::env::var(THREADS_ENV) {
            Ok(v) => v.trim().parse().map_err(|_| Error::Usage(format!("{THREADS_ENV}={v:?} is not a thread count")))?,
            Err(_) => 0,
        }
    };
    // A pool that already exists (e.g. a second call in tests) is kept.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

pub fn cmd_phantom(a: &PhantomArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let pc = cfg.phantom_config(a.index);
    let (vol, specs) = generate_phantom(&pc)?;
    let mut f = VolumeFile::from_volume(&vol, step("phantom", &cfg.hash(), Some(pc.seed), &[]), &[]);
    f.header.extras.insert("ellipsoids".into(), serde_json::to_value(&specs).expect("specs serialize"));
    f.write(&a.out)
}

pub fn cmd_project(a: &StageArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let input = VolumeFile::read(&a.input)?;
    let vol = input.to_volume()?;
    let slices = (0..vol.nz).map(|z| vol.slice(z)).collect::<txm_core::Result<Vec<_>>>()?;
    let sinos = pipeline::project_all(&slices, &cfg.geometry)?;
    VolumeFile::from_sinograms(&sinos, step("project", &cfg.hash(), None, &[&a.input]), &[&input.header])?.write(&a.out)
}

pub fn cmd_noise(a: &NoiseArgs) -> Result<()> {
    let cfg = load_config(&a.stage.config)?;
    let input = VolumeFile::read(&a.stage.input)?;
    let model = NoiseModel::new(a.dose.unwrap_or(cfg.noise.eval_dose), cfg.noise_seed());
    let noisy = pipeline::noise_all(&input.to_sinograms()?, &model, a.scan)?;
    let mut f = VolumeFile::from_sinograms(
        &noisy,
        step("noise", &cfg.hash(), Some(model.seed), &[&a.stage.input]),
        &[&input.header],
    )?;
    f.header.extras.insert("photon_count".into(), model.photon_count.into());
    f.header.extras.insert("scan".into(), a.scan.into());
    f.write(&a.stage.out)
}

pub fn cmd_pwls(a: &StageArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let input = VolumeFile::read(&a.input)?;
    let out = pipeline::denoise_all(&input.to_sinograms()?, &cfg.pwls)?;
    VolumeFile::from_sinograms(&out, step("pwls", &cfg.hash(), None, &[&a.input]), &[&input.header])?.write(&a.out)
}

pub fn cmd_fbp(a: &StageArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let input = VolumeFile::read(&a.input)?;
    let sinos = input.to_sinograms()?;
    let slices = pipeline::reconstruct_all(&sinos.iter().collect::<Vec<_>>(), &cfg.geometry)?;
    let vol = Volume::from_slices(&slices)?;
    VolumeFile::from_volume(&vol, step("fbp", &cfg.hash(), None, &[&a.input]), &[&input.header]).write(&a.out)
}

fn read_slices(f: &VolumeFile) -> Result<Vec<Slice>> {
    (0..f.header.dims[2]).map(|z| f.slice(z)).collect()
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    if a.input.len() != a.reference.len() {
        return Err(Error::Usage(format!("{} --input volumes but {} --reference volumes", a.input.len(), a.reference.len())));
    }
    let mut pairs = Vec::new();
    for (ip, rp) in a.input.iter().zip(&a.reference) {
        let (inp, refv) = (VolumeFile::read(ip)?, VolumeFile::read(rp)?);
        let xs = read_slices(&inp)?;
        let rs = read_slices(&refv)?;
        if xs.len() != rs.len() {
            return Err(Error::Usage(format!("{} and {} differ in slice count", ip.display(), rp.display())));
        }
        let n = a.slices.unwrap_or(xs.len());
        if n == 0 || n > xs.len() {
            return Err(Error::Usage(format!("--slices must lie in 1..={}", xs.len())));
        }
        for k in 0..n {
            let z = uniform_slice_index(k, n, xs.len());
            let r = pipeline::to_recon_grid(&rs[z], xs[z].width)?;
            check_pixel(&xs[z], &r)?;
            let data = xs[z].data.iter().zip(&r.data).map(|(x, r)| x - r).collect();
            let t = Slice::new(xs[z].width, xs[z].height, xs[z].pixel_size, data)?;
            pairs.push((xs[z].clone(), t));
        }
    }
    let scale = pairs.iter().flat_map(|(x, _)| x.data.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
    let norm = NormalizationSpec::new(scale)?;
    let tc = cfg.train_config();
    let params = UNetParams::init(&cfg.unet, tc.seed)?;
    let (mut params, log) = train_observed(params, &pairs, &tc, norm, |r| log::debug!("step {} loss {:e}", r.step, r.loss))?;
    checkpoint::save(&a.out, &mut params, norm)?;
    let loss_path = a.loss.clone().unwrap_or_else(|| a.out.with_extension("loss.csv"));
    std::fs::write(&loss_path, pipeline::loss_csv(&log)).map_err(Error::io(&loss_path))
}

pub fn cmd_infer(a: &InferArgs) -> Result<()> {
    let (params, _) = checkpoint::load(&a.checkpoint)?;
    let input = VolumeFile::read(&a.input)?;
    let (out, scale) = pipeline::infer_all(&read_slices(&input)?, &params)?;
    let ckpt = std::fs::read(&a.checkpoint).map_err(Error::io(&a.checkpoint))?;
    let mut f = VolumeFile::from_volume(
        &Volume::from_slices(&out)?,
        step("infer", &input.header.config_hash, None, &[&a.checkpoint, &a.input]),
        &[&input.header],
    );
    f.header.extras.insert("checkpoint_sha256".into(), hex::encode(Sha256::digest(&ckpt)).into());
    f.header.extras.insert("normalization_scale".into(), scale.into());
    f.write(&a.out)
}

fn check_pixel(a: &Slice, b: &Slice) -> Result<()> {
    if ((a.pixel_size - b.pixel_size) / b.pixel_size).abs() > 1e-6 {
        return Err(Error::Usage(format!("pixel sizes differ: {} nm vs {} nm", a.pixel_size, b.pixel_size)));
    }
    Ok(())
}

pub fn eval_files(input: &Path, reference: &Path) -> Result<Scores> {
    let (x, r) = (VolumeFile::read(input)?, VolumeFile::read(reference)?);
    check_headers(&x.header, &r.header)?;
    evaluate(&read_slices(&x)?, &read_slices(&r)?)
}

fn check_headers(x: &Header, r: &Header) -> Result<()> {
    if ((x.pixel_size_nm - r.pixel_size_nm) / r.pixel_size_nm).abs() > 1e-6 {
        return Err(Error::Usage(format!(
            "refusing to compare volumes with pixel sizes {} nm and {} nm",
            x.pixel_size_nm, r.pixel_size_nm
        )));
    }
    if x.dims != r.dims {
        return Err(Error::Usage(format!("volume dims {:?} and {:?} differ", x.dims, r.dims)));
    }
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let s = eval_files(&a.input, &a.reference)?;
    let csv = format!("rmse,ssim,ssim_fov\n{:.9e},{:.9e},{:.9e}\n", s.rmse, s.ssim, s.ssim_fov);
    print!("{csv}");
    if let Some(out) = &a.out {
        std::fs::write(out, csv).map_err(Error::io(out))?;
    }
    Ok(())
}

pub fn cmd_pipeline(a: &PipelineArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let dir = a.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let outcome = pipeline::run(&cfg, &dir)?;
    print!("{}", outcome.summary.to_csv());
    Ok(())
}

pub fn cmd_export_png(a: &ExportPngArgs) -> Result<()> {
    export::export_png(&a.input, a.slice, pair(&a.window, "--window")?, &a.out)
}

pub fn cmd_export_profile(a: &ExportProfileArgs) -> Result<()> {
    let line = match (a.row, a.column) {
        (Some(r), None) => Line::Row(r),
        (None, Some(c)) => Line::Column(c),
        _ => return Err(Error::Usage("give exactly one of --row or --column".into())),
    };
    export::export_line_profile(&a.input, a.slice, line, &a.out)
}

pub fn cmd_ingest(a: &IngestArgs) -> Result<()> {
    let cfg = IngestConfig { size: a.size, pixel_size: a.pixel_size, range: pair(&a.range, "--range")? };
    let slices = ingest_images(&a.dir, &cfg)?;
    let json = serde_json::json!({ "size": a.size, "pixel_size": a.pixel_size, "range": cfg.range });
    let hash = hex::encode(Sha256::digest(json.to_string().as_bytes()));
    VolumeFile::from_volume(&Volume::from_slices(&slices)?, step("ingest", &hash, None, &[&a.dir]), &[]).write(&a.out)
}

pub fn run(cli: &Cli) -> Result<()> {
    init_threads(cli.deterministic)?;
    match &cli.command {
        Command::Phantom(a) => cmd_phantom(a),
        Command::Project(a) => cmd_project(a),
        Command::Noise(a) => cmd_noise(a),
        Command::Pwls(a) => cmd_pwls(a),
        Command::Fbp(a) => cmd_fbp(a),
        Command::Train(a) => cmd_train(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Pipeline(a) => cmd_pipeline(a),
        Command::ExportPng(a) => cmd_export_png(a),
        Command::ExportProfile(a) => cmd_export_profile(a),
        Command::Ingest(a) => cmd_ingest(a),
    }
}

/// One-line, machine-parsable error report.
pub fn error_line(e: &Error) -> String {
    let msg = e.to_string().replace(['\n', '\r'], " ");
    format!("error kind={} stage={} message={:?}", e.kind(), e.stage().unwrap_or("-"), msg)
}
