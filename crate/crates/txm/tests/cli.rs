use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use txm::config::RunConfig;
use txm::io::{read_header, Step, VolumeFile};
use txm::pipeline::Summary;
use txm_core::projection::{rasterize_ellipses, Ellipse};
use txm_core::Volume;

fn txm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_txm")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = txm(args);
    assert!(out.status.success(), "txm {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Stack of identical slices holding one centered disk.
fn disk_volume(dir: &Path, nz: usize) -> (PathBuf, f64, f64) {
    let (radius, mu) = (3.0, 0.01);
    let s = rasterize_ellipses(&[Ellipse::disk(radius, mu)], 64, 175.2, 8);
    let vol = Volume::from_slices(&vec![s; nz]).unwrap();
    let step = Step { command: "test".into(), config_hash: "-".into(), seed: None, inputs: vec![] };
    let path = dir.join("disk.vol");
    VolumeFile::from_volume(&vol, step, &[]).write(&path).unwrap();
    (path, radius, mu)
}

fn parse_eval(csv: &str) -> Vec<f64> {
    let line = csv.lines().nth(1).unwrap();
    line.split(',').map(|v| v.parse().unwrap()).collect()
}

fn write_config(dir: &Path, cfg: &RunConfig) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    path
}

#[test]
fn eval_of_identical_volumes() {
    let dir = TempDir::new().unwrap();
    let (vol, _, _) = disk_volume(dir.path(), 2);
    let s = parse_eval(&ok(&["eval", "--input", p(&vol), "--reference", p(&vol)]));
    assert_eq!(s, vec![0.0, 1.0, 1.0]);
}

#[test]
fn full_scan_fbp_of_disk_evaluates_below_five_percent() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let (vol, _, mu) = disk_volume(d, 2);
    let mut cfg = RunConfig::desk();
    cfg.geometry = cfg.geometry.with_angles(0.0, 179.0, 1.0);
    let conf = write_config(d, &cfg);
    let (sino, rec) = (d.join("sino.vol"), d.join("rec.vol"));
    ok(&["project", "--config", p(&conf), "--input", p(&vol), "--out", p(&sino)]);
    ok(&["fbp", "--config", p(&conf), "--input", p(&sino), "--out", p(&rec)]);
    let s = parse_eval(&ok(&["eval", "--input", p(&rec), "--reference", p(&vol)]));
    assert!(s[0] < 0.05 * mu, "rmse {}", s[0]);

    let h = read_header(&rec).unwrap();
    let cmds: Vec<&str> = h.provenance.iter().map(|s| s.command.as_str()).collect();
    assert_eq!(cmds, ["test", "project", "fbp"]);
    assert_eq!(h.config_hash, cfg.hash());
}

#[test]
fn stage_chain_writes_sinograms_with_angles() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let (vol, _, _) = disk_volume(d, 1);
    let (sino, noisy, clean) = (d.join("s.vol"), d.join("n.vol"), d.join("p.vol"));
    ok(&["project", "--input", p(&vol), "--out", p(&sino)]);
    ok(&["noise", "--input", p(&sino), "--out", p(&noisy), "--dose", "1e4", "--scan", "3"]);
    ok(&["pwls", "--input", p(&noisy), "--out", p(&clean)]);
    let h = read_header(&clean).unwrap();
    assert_eq!(h.dims, [64, 101, 1]);
    assert_eq!(h.angles.as_ref().unwrap().len(), 101);
    assert_eq!(h.provenance.len(), 4);
    assert!(h.provenance.iter().all(|s| !s.config_hash.is_empty()));
    assert_eq!(read_header(&noisy).unwrap().extras["scan"], 3);
}

#[test]
fn eval_refuses_mismatched_pixel_size() {
    let dir = TempDir::new().unwrap();
    let (vol, _, _) = disk_volume(dir.path(), 1);
    let mut f = VolumeFile::read(&vol).unwrap();
    f.header.pixel_size_nm *= 2.0;
    let other = dir.path().join("other.vol");
    f.write(&other).unwrap();
    let out = txm(&["eval", "--input", p(&other), "--reference", p(&vol)]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    let line = err.lines().find(|l| l.starts_with("error ")).unwrap();
    assert!(line.contains("kind=usage") && line.contains("pixel sizes"), "{line}");
}

#[test]
fn failures_print_one_error_line() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope.vol");
    let out = txm(&["fbp", "--input", p(&missing), "--out", p(&dir.path().join("x.vol"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    let lines: Vec<&str> = err.lines().filter(|l| l.starts_with("error ")).collect();
    assert_eq!(lines.len(), 1);
    assert!(lines[0].starts_with("error kind=io stage=- message="), "{}", lines[0]);

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, RunConfig::desk().to_toml().replace("beta = 0.3", "beta = -1.0")).unwrap();
    let out = txm(&["phantom", "--config", p(&bad), "--out", p(&dir.path().join("ph.vol"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("error kind=invalid-config"));
}

#[test]
fn zero_epochs_leave_unet_columns_equal_to_fbp() {
    let dir = TempDir::new().unwrap();
    let mut cfg = RunConfig::desk();
    cfg.phantom.grid_size = 16;
    cfg.phantom.voxel_size = 700.8;
    cfg.geometry.detector_count = 16;
    cfg.geometry.detector_pixel = 700.8;
    cfg.geometry.recon_size = 16;
    cfg.geometry.recon_pixel = 700.8;
    cfg.unet.depth = 2;
    cfg.unet.base_channels = 4;
    cfg.unet.input_size = 16;
    cfg.training.epochs = 0;
    cfg.pipeline.train_phantoms = 1;
    cfg.pipeline.slices_per_phantom = 2;
    let conf = write_config(dir.path(), &cfg);
    let out = dir.path().join("run");
    let printed = ok(&["--deterministic", "pipeline", "--config", p(&conf), "--out", p(&out)]);
    let written = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(printed, written);
    let s = Summary::from_csv(&written).unwrap();
    assert_eq!(s.unet, s.fbp);
    assert_eq!(s.unet_pwls, s.fbp_pwls);
    for f in ["model.ckpt", "loss.csv", "config.toml", "run.json", "reference.vol", "unet_pwls.vol"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn png_and_profile_export() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let (vol, radius, mu) = disk_volume(d, 1);
    let png = d.join("s.png");
    ok(&["export-png", "--input", p(&vol), "--slice", "0", "--window", "0,0.01", "--out", p(&png)]);
    let img = image::open(&png).unwrap().into_luma16();
    assert_eq!(img.dimensions(), (64, 64));
    assert_eq!(img.get_pixel(32, 32).0[0], u16::MAX);
    assert_eq!(img.get_pixel(0, 0).0[0], 0);

    let csv_path = d.join("row.csv");
    ok(&["export-profile", "--input", p(&vol), "--slice", "0", "--row", "32", "--out", p(&csv_path)]);
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    let values: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(values.len(), 64);
    // First pixel above half the disk value vs the analytic left edge.
    let edge = values.iter().position(|&v| v > mu / 2.0).unwrap() as f64;
    let analytic = 31.5 - radius / 0.1752;
    assert!((edge - analytic).abs() <= 1.0, "edge {edge}, analytic {analytic}");

    let out = txm(&["export-profile", "--input", p(&vol), "--slice", "0", "--column", "64", "--out", p(&csv_path)]);
    assert!(!out.status.success());
    let out = txm(&["export-png", "--input", p(&vol), "--slice", "0", "--window", "0.02,0.01", "--out", p(&png)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ingest_maps_gray_levels_into_range() {
    let dir = TempDir::new().unwrap();
    let imgs = dir.path().join("imgs");
    std::fs::create_dir(&imgs).unwrap();
    image::GrayImage::from_pixel(8, 8, image::Luma([255])).save(imgs.join("a.png")).unwrap();
    image::GrayImage::from_pixel(8, 8, image::Luma([0])).save(imgs.join("b.png")).unwrap();
    std::fs::write(imgs.join("notes.txt"), "not an image").unwrap();
    let out = dir.path().join("ing.vol");
    ok(&["ingest", "--dir", p(&imgs), "--size", "16", "--range", "0,0.02", "--out", p(&out)]);
    let f = VolumeFile::read(&out).unwrap();
    assert_eq!(f.header.dims, [16, 16, 2]);
    assert!(f.slice(0).unwrap().data.iter().all(|&v| (v - 0.02).abs() < 1e-7));
    assert!(f.slice(1).unwrap().data.iter().all(|&v| v == 0.0));
}

#[test]
fn shipped_configs_load() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let desk = RunConfig::load(&root.join("desk.toml")).unwrap();
    let paper = RunConfig::load(&root.join("paper.toml")).unwrap();
    assert_eq!(desk.geometry.recon_size, 64);
    assert_eq!(paper.geometry.detector_count, 512);
    assert_eq!(paper.geometry.recon_size, 256);
}
