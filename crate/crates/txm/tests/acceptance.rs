//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any fails.
//!
//! `ACCEPTANCE_ONLY=1,4,9` restricts the run to the listed criteria.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use txm::config::RunConfig;
use txm::pipeline::{self, Summary};
use txm_core::fbp::{fbp_reconstruct, ramlak_taps};
use txm_core::metrics::{rmse_fov, ssim, FovMask};
use txm_core::noise::{sample_poisson, NoiseModel};
use txm_core::phantom::generate_phantom;
use txm_core::projection::{analytic_ellipse_sinogram, forward_project, rasterize_ellipses, Ellipse, Geometry};
use txm_core::pwls::{self, PwlsConfig};
use txm_core::rng::SplitMix64;
use txm_core::unet::{self, forward_train, ops, NormalizationSpec, Tensor, TrainConfig, UNetConfig, UNetParams};
use txm_core::{phantom, Slice};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn within(elapsed: Duration, limit_s: f64) -> (bool, String) {
    let s = elapsed.as_secs_f64();
    (s < limit_s, format!("{s:.1} s (limit {limit_s} s)"))
}

fn desk() -> Geometry {
    Geometry::desk_scale()
}

fn random_ellipses(rng: &mut SplitMix64, field_um: f64) -> Vec<Ellipse> {
    let n = 3 + rng.below(5);
    (0..n)
        .map(|_| Ellipse {
            center: [rng.uniform(-0.2, 0.2) * field_um, rng.uniform(-0.2, 0.2) * field_um],
            semi_axes: [rng.uniform(0.05, 0.25) * field_um, rng.uniform(0.05, 0.25) * field_um],
            angle: rng.uniform(0.0, 180.0),
            intensity: rng.uniform(0.002, 0.01),
        })
        .collect()
}

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

fn c1_projector_oracle() -> Verdict {
    let t = Instant::now();
    let g = desk();
    let field = g.detector_count as f64 * g.detector_pixel * 1e-3;
    let mut rng = SplitMix64::new(11);
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let ellipses = random_ellipses(&mut rng, field);
        let slice = rasterize_ellipses(&ellipses, g.recon_size, g.recon_pixel, 8);
        let numeric = forward_project(&slice, &g).unwrap();
        let exact = analytic_ellipse_sinogram(&ellipses, &g).unwrap();
        worst = worst.max(rel_l2(&numeric.data, &exact.data));
    }
    let (fast, time) = within(t.elapsed(), 10.0);
    verdict(worst < 0.01 && fast, format!("worst relative L2 error {:.3}% (limit 1%), {time}", worst * 100.0))
}

fn disk_rmse(g: &Geometry, disk: &Ellipse, reference: &Slice) -> f64 {
    let sino = analytic_ellipse_sinogram(std::slice::from_ref(disk), g).unwrap();
    let rec = fbp_reconstruct(&sino, g).unwrap();
    rmse_fov(&rec, reference, &FovMask::for_slice(reference)).unwrap()
}

fn c2_fbp_sanity() -> Verdict {
    let t = Instant::now();
    let full = desk().with_angles(0.0, 179.0, 1.0);
    let limited = desk();
    let field = full.detector_count as f64 * full.detector_pixel * 1e-3;
    let mu = 0.01;
    let disk = Ellipse::disk(0.3 * field, mu);
    let reference = rasterize_ellipses(&[disk], full.recon_size, full.recon_pixel, 8);
    let e_full = disk_rmse(&full, &disk, &reference);
    let e_lim = disk_rmse(&limited, &disk, &reference);
    let (fast, time) = within(t.elapsed(), 10.0);
    verdict(
        e_full < 0.05 * mu && e_lim > e_full && fast,
        format!(
            "180° RMSE {:.2}% of disk intensity (limit 5%), 100° RMSE {:.2}% (must be larger), {time}",
            100.0 * e_full / mu,
            100.0 * e_lim / mu
        ),
    )
}

fn c3_ramlak() -> Verdict {
    let k = ramlak_taps(512, 1.0).unwrap();
    let pi2 = std::f64::consts::PI.powi(2);
    let taps_ok = (k.tap(0) - 0.25).abs() < 1e-12 && (k.tap(1) + 1.0 / pi2).abs() < 1e-12 && k.tap(2).abs() < 1e-12;
    // H(f) = Σ h[n] e^{-2πifn}, sampled on a 4096-point grid; the ideal
    // response is |f| for f in cycles per sample.
    let m = 4096;
    let mut worst: f64 = 0.0;
    for j in 1..=m / 2 {
        let f = j as f64 / m as f64;
        if f < 0.05 {
            continue;
        }
        let (mut re, mut im) = (0.0, 0.0);
        for n in -(k.half_width as isize)..=k.half_width as isize {
            let w = -2.0 * std::f64::consts::PI * f * n as f64;
            re += k.tap(n) * w.cos();
            im += k.tap(n) * w.sin();
        }
        let mag = (re * re + im * im).sqrt();
        worst = worst.max((mag - f).abs() / f);
    }
    verdict(
        taps_ok && worst < 0.02,
        format!(
            "h[0]={}, h[1]={:.15}, h[2]={}; worst |H|-|f| relative error for f >= 0.05 cycles/sample {:.3}% (limit 2%)",
            k.tap(0),
            k.tap(1),
            k.tap(2),
            worst * 100.0
        ),
    )
}

fn c4_poisson() -> Verdict {
    let n0 = 1e4;
    let draws = 100_000;
    let mut lines = Vec::new();
    let mut ok = true;
    for (i, p) in [0.0f64, 1.0, 3.0].into_iter().enumerate() {
        let lambda = n0 * (-p).exp();
        let mut rng = SplitMix64::stream(99, i as u64);
        let xs: Vec<f64> = (0..draws).map(|_| sample_poisson(&mut rng, lambda) as f64).collect();
        let n = draws as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        let se_mean = (lambda / n).sqrt();
        // fourth central moment of Poisson: λ(1 + 3λ)
        let se_var = ((lambda + 2.0 * lambda * lambda) / n).sqrt();
        let zm = (mean - lambda) / se_mean;
        let zv = (var - lambda) / se_var;
        ok &= zm.abs() < 3.0 && zv.abs() < 3.0;
        lines.push(format!("p={p}: mean z={zm:+.2}, var z={zv:+.2}"));
    }
    verdict(ok, format!("{} (limit |z| < 3)", lines.join("; ")))
}

fn c5_pwls() -> Verdict {
    let cfg = RunConfig::desk();
    let mut rng = SplitMix64::new(5);
    let mut sino = txm_core::projection::Sinogram::for_geometry(&cfg.geometry);
    sino.data.iter_mut().for_each(|v| *v = rng.uniform(0.0, 2.0));

    // (a) β = 0 leaves the data untouched
    let zero = PwlsConfig { beta: 0.0, ..PwlsConfig::default() };
    let out = pwls::pwls_denoise(&sino, &zero).unwrap();
    let identity = out.data.iter().zip(&sino.data).all(|(a, b)| (a - b).abs() < 1e-12);

    // (b) objective non-increasing per sweep, frozen weights
    let many = PwlsConfig { iterations: 20, ..PwlsConfig::default() };
    let (_, trace) = pwls::pwls_denoise_traced(&sino, None, &many).unwrap();
    let monotone = trace.windows(2).all(|w| w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0));

    // (c) held-out phantom at N0 = 1e4, PWLS per projection image
    let (vol, _) = generate_phantom(&cfg.phantom_config(cfg.pipeline.train_phantoms)).unwrap();
    let slices: Vec<Slice> = (0..vol.nz).map(|z| vol.slice(z).unwrap()).collect();
    let clean = pipeline::project_all(&slices, &cfg.geometry).unwrap();
    let noisy = pipeline::noise_all(&clean, &NoiseModel::new(1e4, 17), 0).unwrap();
    let denoised = pipeline::denoise_all(&noisy, &cfg.pwls).unwrap();
    let rmse = |s: &[txm_core::projection::Sinogram]| {
        let (mut acc, mut n) = (0.0, 0usize);
        for (a, b) in s.iter().zip(&clean) {
            for (x, y) in a.data.iter().zip(&b.data) {
                acc += (x - y) * (x - y);
                n += 1;
            }
        }
        (acc / n as f64).sqrt()
    };
    let (before, after) = (rmse(&noisy), rmse(&denoised));
    let gain = 1.0 - after / before;
    verdict(
        identity && monotone && gain >= 0.10,
        format!(
            "(a) beta=0 identity {identity}; (b) {} sweeps non-increasing {monotone}; (c) sinogram RMSE {before:.4e} -> {after:.4e}, {:.1}% reduction (limit 10%)",
            trace.len().saturating_sub(1),
            gain * 100.0
        ),
    )
}

fn random_tensor(shape: [usize; 4], rng: &mut SplitMix64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
}

fn c6_gradients() -> Verdict {
    let t = Instant::now();
    let cfg = UNetConfig { depth: 2, base_channels: 4, se_reduction: 8, input_size: 16 };
    let mut p = UNetParams::init(&cfg, 8).unwrap();
    // A zero head would zero every other gradient; give it random weights.
    let mut rng = SplitMix64::new(9);
    p.head.weight.data.iter_mut().for_each(|w| *w = rng.uniform(-0.5, 0.5));
    p.head.bias.data[0] = 0.1;
    let x = random_tensor([2, 1, 16, 16], &mut rng);
    let target = random_tensor([2, 1, 16, 16], &mut rng);

    p.zero_grad();
    let (y, tape) = forward_train(&p, &x).unwrap();
    let dout = ops::l2_loss_grad(&y, &target).unwrap();
    unet::backward(&mut p, &tape, &dout).unwrap();
    let grads: Vec<Vec<f64>> =
        p.params_mut().into_iter().map(|q| q.tensor.grad.clone().unwrap_or_else(|| vec![0.0; q.tensor.len()])).collect();

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut worst_at = String::new();
    let mut checked = 0usize;
    let mut over = 0usize;
    for (k, g) in grads.iter().enumerate() {
        for i in 0..g.len() {
            let mut eval = |delta: f64| {
                p.params_mut()[k].tensor.data[i] += delta;
                let (y, _) = forward_train(&p, &x).unwrap();
                p.params_mut()[k].tensor.data[i] -= delta;
                ops::l2_loss(&y, &target).unwrap()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6);
            over += usize::from(rel >= 1e-5);
            if rel > worst {
                worst = rel;
                worst_at = format!("{}[{i}] (fd {fd:.6e}, analytic {:.6e})", p.params_mut()[k].name, g[i]);
            }
            checked += 1;
        }
    }
    let (fast, time) = within(t.elapsed(), 60.0);
    verdict(
        worst < 1e-5 && fast,
        format!("{checked} parameters, {over} at or above limit, worst relative error {worst:.2e} at {worst_at} (limit 1e-5), {time}"),
    )
}

/// FBP slice of a small phantom and its limited-angle artifact image.
fn overfit_pair(n: usize, seed: u64) -> (Slice, Slice) {
    let voxel = 175.2 * 64.0 / n as f64;
    let cfg = phantom::PhantomConfig { seed, grid_size: n, voxel_size: voxel, ..Default::default() };
    let (vol, _) = generate_phantom(&cfg).unwrap();
    let s = vol.slice(n / 2).unwrap();
    let g = Geometry::new(-50.0, 50.0, 1.0, n, voxel, n);
    let rec = fbp_reconstruct(&forward_project(&s, &g).unwrap(), &g).unwrap();
    let art = rec.data.iter().zip(&s.data).map(|(a, b)| a - b).collect();
    let art = Slice::new(n, n, rec.pixel_size, art).unwrap();
    (rec, art)
}

fn c7_overfit() -> Verdict {
    let t = Instant::now();
    let pair = overfit_pair(16, 10);
    let net = UNetConfig { depth: 3, base_channels: 8, se_reduction: 8, input_size: 16 };
    let tc = TrainConfig {
        epochs: 500,
        batch_size: 1,
        learning_rate: 1e-2,
        flat_fraction: 0.5,
        seed: 0,
        ..TrainConfig::default()
    };
    let norm = NormalizationSpec::from_images([&pair.0]).unwrap();
    let (_, log) = unet::train(&[pair], &net, &tc, norm).unwrap();
    let ratio = log.last().unwrap().loss / log[0].loss;
    let (fast, time) = within(t.elapsed(), 300.0);
    verdict(
        log.len() == 500 && ratio < 1e-4 && fast,
        format!("{} steps, final/initial loss {ratio:.2e} (limit 1e-4), {time}", log.len()),
    )
}

fn run_pipeline(out: &Path) -> (Summary, Duration) {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/desk.toml");
    let t = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_txm"))
        .args(["--deterministic", "pipeline", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "warn")
        .status()
        .expect("txm binary runs");
    assert!(status.success(), "pipeline exited with {status}");
    let csv = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    (Summary::from_csv(&csv).unwrap(), t.elapsed())
}

fn c8_end_to_end(first_run: &Path) -> Verdict {
    let (s, elapsed) = run_pipeline(first_run);
    let gain = 1.0 - s.unet.rmse / s.fbp.rmse;
    let ordering = gain >= 0.20 && s.unet_pwls.rmse <= s.unet.rmse && s.unet.ssim > s.fbp.ssim;
    let (fast, time) = within(elapsed, 1800.0);
    verdict(
        ordering && fast,
        format!(
            "RMSE (1e-3 um^-1) FBP {:.3} | FBP+PWLS {:.3} | U-Net {:.3} | U-Net+PWLS {:.3}; U-Net gain {:.1}% (limit 20%); SSIM FBP {:.3} -> U-Net {:.3}; {time}",
            s.fbp.rmse * 1e3,
            s.fbp_pwls.rmse * 1e3,
            s.unet.rmse * 1e3,
            s.unet_pwls.rmse * 1e3,
            gain * 100.0,
            s.fbp.ssim,
            s.unet.ssim
        ),
    )
}

fn c9_metrics() -> Verdict {
    let mut rng = SplitMix64::new(3);
    let mut random = |n: usize| Slice::new(n, n, 1.0, (0..n * n).map(|_| rng.uniform(0.0, 0.02)).collect()).unwrap();
    let (x, y) = (random(48), random(48));
    let dr = 0.02;
    let self_sim = (ssim(&x, &x, dr).unwrap() - 1.0).abs();
    let sym = (ssim(&x, &y, dr).unwrap() - ssim(&y, &x, dr).unwrap()).abs();
    // pixels outside the mask do not affect the RMSE
    let mask = FovMask::for_slice(&x);
    let mut z = y.clone();
    for r in 0..z.height {
        for c in 0..z.width {
            if !mask.contains(r, c) {
                z.set(r, c, 1e3);
            }
        }
    }
    let inv = (rmse_fov(&x, &y, &mask).unwrap() - rmse_fov(&x, &z, &mask).unwrap()).abs();
    verdict(
        self_sim < 1e-12 && sym < 1e-12 && inv < 1e-12,
        format!("|ssim(x,x)-1| {self_sim:.1e}, |ssim(x,y)-ssim(y,x)| {sym:.1e}, mask invariance {inv:.1e} (limit 1e-12)"),
    )
}

fn c10_determinism(first_run: &Path, second_run: &Path) -> Verdict {
    if !first_run.join("summary.csv").exists() {
        run_pipeline(first_run);
    }
    run_pipeline(second_run);
    let a = std::fs::read(first_run.join("summary.csv")).unwrap();
    let b = std::fs::read(second_run.join("summary.csv")).unwrap();
    verdict(a == b, format!("summary.csv {} bytes, byte-identical across runs: {}", a.len(), a == b))
}

fn main() {
    let only: Option<Vec<usize>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let wanted = |i: usize| only.as_ref().is_none_or(|o| o.contains(&i));
    let tmp = tempfile::tempdir().unwrap();
    let run_a: PathBuf = tmp.path().join("run_a");
    let run_b: PathBuf = tmp.path().join("run_b");

    let criteria: Vec<(usize, &str, Box<dyn Fn() -> Verdict>)> = vec![
        (1, "projector vs analytic ellipse sinograms", Box::new(c1_projector_oracle)),
        (2, "FBP disk sanity and limited-angle ordering", Box::new(c2_fbp_sanity)),
        (3, "Ram-Lak taps and frequency response", Box::new(c3_ramlak)),
        (4, "Poisson count moments", Box::new(c4_poisson)),
        (5, "PWLS identity, monotone objective, denoising gain", Box::new(c5_pwls)),
        (6, "U-Net gradients vs finite differences", Box::new(c6_gradients)),
        (7, "single-pair overfit", Box::new(c7_overfit)),
        (8, "desk-scale end-to-end ordering", Box::new(|| c8_end_to_end(&run_a))),
        (9, "metric identities", Box::new(c9_metrics)),
        (10, "pipeline determinism", Box::new(|| c10_determinism(&run_a, &run_b))),
    ];
    let mut failed = 0;
    for (i, name, f) in criteria {
        if !wanted(i) {
            continue;
        }
        let v = f();
        if !v.pass {
            failed += 1;
        }
        println!("[{}] {i:>2}. {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
