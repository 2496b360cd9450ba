//! Acceptance checks, one line per criterion.
//!
//! Runs as a plain binary (`harness = false`). Failures are reported, not
//! hidden; set `METAMER_ACCEPTANCE_STRICT=1` to turn any FAIL into a nonzero
//! exit status. Checks that need pretrained weights or baseline metamers look
//! for them under `$METAMER_DATA_DIR` and are skipped when absent.

mod common;

use std::time::{Duration, Instant};

use common::*;
use metamer_core::assets::DataDir;
use metamer_core::features::manifest::{relu4_1_decoder_layers, vgg19_relu4_1_layers};
use metamer_core::features::toy::{procedural_image, random_weights};
use metamer_core::features::{FeatureTensor, ImageBuffer, ShapeSpec};
use metamer_core::geometry::{build_many, downsample_masks, MaskWindow, PoolingConfig};
use metamer_core::iqa::{self, Metric};
use metamer_core::optimization::{
    alpha_grid, build_profile, run_gamma_search, score_nf_table, GammaFunction, GammaSearchConfig, ReferencePair,
    ScaleData,
};
use metamer_core::psychometrics::{
    bootstrap_ci, fit_psychometric, pc_abx_from_detectability, simulate_observer, BootstrapConfig, Condition, Design,
    PsychometricParams, LAPSE_MAX,
};
use metamer_core::styletransfer::{adain, compute_region_stats, synthesize_metamer, AlphaField, AlphaSource, Codec, RegionStats};
use metamer_core::ExecPolicy;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

use Outcome::{Fail, Pass, Skip};

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

fn within_budget(outcome: Outcome, elapsed: Duration, budget: Duration) -> Outcome {
    let timing = format!("{:.1}s of {:.0}s budget", elapsed.as_secs_f64(), budget.as_secs_f64());
    match outcome {
        Pass(d) if elapsed <= budget => Pass(format!("{d}; {timing}")),
        Pass(d) | Fail(d) => Fail(format!("{d}; {timing}")),
        Skip(d) => Skip(d),
    }
}

fn pooling_geometry() -> Outcome {
    let targets = [300usize, 186, 125, 102, 90];
    let configs: Vec<PoolingConfig> = SCALES.iter().map(|&s| PoolingConfig::with_scale(s)).collect();
    let masks = match build_many(&configs, ExecPolicy::Parallel) {
        Ok(m) => m,
        Err(e) => return Fail(e.to_string()),
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for ((m, &target), &s) in masks.iter().zip(&targets).zip(&SCALES) {
        let n = m.peripheral_count();
        let rel = (n as f64 - target as f64) / target as f64;
        let image_err = m.partition_error();
        let encoder_err = downsample_masks(m, 8).map(|d| d.partition_error()).unwrap_or(f64::INFINITY);
        ok &= rel.abs() <= 0.05 && image_err <= 1e-6 && encoder_err <= 1e-6;
        parts.push(format!("s={s}: {n}/{target} ({:+.1}%), unity {image_err:.1e}/{encoder_err:.1e}", 100.0 * rel));
    }
    verdict(ok, parts.join(", "))
}

fn synthesis_identity() -> Outcome {
    let (enc, dec) = toy_codec();
    let codec = Codec::new(&enc, &dec);
    let size = 128;
    let masks = small_masks(0.5, size);
    let zero = AlphaField::zeros(masks.len());
    let mut identical = true;
    let mut worst = 0.0f32;
    for (i, (_, img)) in images(5, size).iter().enumerate() {
        let reference = match codec.round_trip(img, ExecPolicy::Parallel) {
            Ok(r) => r,
            Err(e) => return Fail(e.to_string()),
        };
        match synthesize_metamer(img, i as u64, AlphaSource::Field(&zero), &masks, &codec, ExecPolicy::Parallel) {
            Ok(m) => identical &= m.image == reference,
            Err(e) => return Fail(e.to_string()),
        }
        worst = img.data.iter().zip(&reference.data).map(|(a, b)| (a - b).abs()).fold(worst, f32::max);
    }
    verdict(
        identical && worst < 1e-6,
        format!("pixel-identical to D(E(I)): {identical}; max |I - D(E(I))| = {worst:.2e} (limit 1e-6)"),
    )
}

fn adain_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (c, h, w) = (rng.random_range(1..12), rng.random_range(4..24), rng.random_range(4..24));
        let (offset, spread) = (rng.random_range(-2.0..2.0f32), rng.random_range(0.2..3.0f32));
        let data = (0..c * h * w).map(|_| offset + spread * rng.random_range(-1.0..1.0f32)).collect();
        let features = FeatureTensor::from_vec(c, h, w, data).unwrap();
        let (x0, y0) = (rng.random_range(0..w / 2), rng.random_range(0..h / 2));
        let (mw, mh) = (rng.random_range(2..=w - x0), rng.random_range(2..=h - y0));
        let mut dense = vec![0.0f32; w * h];
        for y in y0..y0 + mh {
            for x in x0..x0 + mw {
                dense[y * w + x] = if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.05..1.0) };
            }
        }
        dense[y0 * w + x0] = 1.0;
        dense[(y0 + mh - 1) * w + x0 + mw - 1] = 0.5;
        let mask = MaskWindow::from_dense(&dense, w);
        let target = RegionStats {
            mean: (0..c).map(|_| rng.random_range(-3.0..3.0)).collect(),
            std: (0..c).map(|_| rng.random_range(0.1..3.0)).collect(),
        };
        let out = match adain(&features, &target, &mask).and_then(|o| compute_region_stats(&o, &mask)) {
            Ok(s) => s,
            Err(e) => return Fail(e.to_string()),
        };
        for ch in 0..c {
            worst = worst
                .max((out.mean[ch] - target.mean[ch]).abs())
                .max((out.std[ch] - target.std[ch]).abs());
        }
    }
    verdict(worst <= 1e-4, format!("max stat error {worst:.2e} over 100 fixtures (limit 1e-4)"))
}

/// Direct per-pixel SSIM on luma with the border-cropped Gaussian window.
fn naive_ssim(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    let (x, y) = (a.luma(), b.luma());
    let (w, h) = (a.width as isize, a.height as isize);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    for py in 0..h {
        for px in 0..w {
            let mut taps = Vec::new();
            for dy in -5..=5isize {
                for dx in -5..=5isize {
                    let (qx, qy) = (px + dx, py + dy);
                    if qx >= 0 && qx < w && qy >= 0 && qy < h {
                        let g = (-((dx * dx + dy * dy) as f64) / (2.0 * 1.5 * 1.5)).exp();
                        taps.push((g, (qy * w + qx) as usize));
                    }
                }
            }
            let norm: f64 = taps.iter().map(|t| t.0).sum();
            let mean = |v: &[f64]| taps.iter().map(|&(g, i)| g * v[i]).sum::<f64>() / norm;
            let (mx, my) = (mean(&x), mean(&y));
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for &(g, i) in &taps {
                vx += g * (x[i] - mx).powi(2);
                vy += g * (y[i] - my).powi(2);
                cxy += g * (x[i] - mx) * (y[i] - my);
            }
            let (vx, vy, cxy) = (vx / norm, vy / norm, cxy / norm);
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    total / (w * h) as f64
}

fn ssim_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let mut random = || {
            let data = (0..3 * 16 * 16).map(|_| rng.random_range(0.0..1.0f32)).collect();
            ImageBuffer::from_vec(3, 16, 16, data).unwrap()
        };
        let (a, b) = (random(), random());
        let lib = match iqa::ssim(&a, &b) {
            Ok(v) => v,
            Err(e) => return Fail(e.to_string()),
        };
        worst = worst.max((lib - naive_ssim(&a, &b)).abs());
    }
    let mut props = true;
    let mut parts = vec![format!("max |lib - naive| = {worst:.2e} (limit 1e-6)")];
    for metric in [Metric::Ssim, Metric::MsSsim, Metric::IwSsim] {
        let (mut id_err, mut sym_err) = (0.0f64, 0.0f64);
        for k in 0..3 {
            let a = procedural_image(3, 176, 500 + k);
            let b = procedural_image(3, 176, 600 + k);
            let score = |p: &ImageBuffer, q: &ImageBuffer| iqa::score(metric, p, q).unwrap_or(f64::NAN);
            id_err = id_err.max((score(&a, &a) - 1.0).abs());
            sym_err = sym_err.max((score(&a, &b) - score(&b, &a)).abs());
        }
        props &= id_err <= 1e-12 && sym_err <= 1e-12;
        parts.push(format!("{metric}: identity {id_err:.1e}, symmetry {sym_err:.1e}"));
    }
    verdict(worst <= 1e-6 && props, parts.join(", "))
}

fn gamma_recovery() -> Outcome {
    let size = 128;
    let tables = match score_tables(&images(3, size), size, Metric::Ssim) {
        Ok(t) => t,
        Err(e) => return Fail(e.to_string()),
    };
    let cfg = GammaSearchConfig {
        seed: 5,
        ..Default::default()
    };
    let planted_gamma = GammaFunction::new(0.9);
    let steep = GammaFunction::new(2.0);
    let independent = planted(&tables, |_, z| planted_gamma.alpha(z))
        .and_then(|d| run_gamma_search(&d, &cfg, ExecPolicy::Parallel));
    let dependent = planted(&tables, |i, z| if i == 4 { steep.alpha(z) } else { planted_gamma.alpha(z) })
        .and_then(|d| run_gamma_search(&d, &cfg, ExecPolicy::Parallel));
    let (independent, dependent) = match (independent, dependent) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return Fail(e.to_string()),
    };
    let d = independent.ensemble.slope;
    let min_p = independent.scales.iter().map(|s| s.p_value).fold(1.0, f64::min);
    let perturbed_p = dependent.scales[4].p_value;
    let ok = (d - 0.9).abs() <= 0.02 && independent.scale_independent && min_p >= 0.05 && perturbed_p < 0.01;
    verdict(
        ok,
        format!("planted d=0.9 -> {d:.4}, min p {min_p:.4}, perturbed-scale p {perturbed_p:.4} ({} permutations)", cfg.permutations),
    )
}

fn gamma_reference_slopes(data_dir: &DataDir) -> Outcome {
    if !(data_dir.has_weights() && data_dir.has_baselines(&SCALES)) {
        return Skip(format!("needs weights and baselines under {}", data_dir.root().display()));
    }
    let run = || -> metamer_core::Result<(f64, Vec<f64>)> {
        let (enc, dec) = data_dir.load_weights()?;
        let codec = Codec::new(&enc, &dec);
        let originals = data_dir.images()?;
        let grid = alpha_grid(1.0 / 20.0)?;
        let mut data = Vec::new();
        for &s in &SCALES {
            let size = originals.first().map_or(512, |(_, i)| i.width);
            let masks = metamer_core::geometry::build_pooling_masks(&PoolingConfig {
                image_size: size,
                ..PoolingConfig::with_scale(s)
            })?;
            let baselines = data_dir.baselines(s)?;
            let pairs: Vec<ReferencePair> = originals
                .iter()
                .filter_map(|(id, img)| {
                    baselines.iter().find(|(b, _)| b == id).map(|(_, base)| ReferencePair {
                        id: id.clone(),
                        baseline: base.clone(),
                        original: img.clone(),
                    })
                })
                .collect();
            let profile = build_profile(&pairs, &masks, Metric::Ssim, ExecPolicy::Parallel)?;
            let table = score_nf_table(&originals, &masks, &codec, Metric::Ssim, &grid, 0, ExecPolicy::Parallel)?;
            data.push(ScaleData { profile, table });
        }
        let report = run_gamma_search(&data, &GammaSearchConfig::default(), ExecPolicy::Parallel)?;
        Ok((report.ensemble.slope, report.scales.iter().map(|s| s.fit.slope).collect()))
    };
    match run() {
        Ok((ensemble, slopes)) => {
            let targets = [1.240, 1.196, 1.363, 1.311, 1.355];
            let ok = (ensemble - 1.281).abs() <= 0.02 && slopes.iter().zip(&targets).all(|(d, t)| (d - t).abs() <= 0.02);
            verdict(ok, format!("ensemble {ensemble:.3} (1.281), per scale {slopes:.3?} ({targets:?})"))
        }
        Err(e) => Fail(e.to_string()),
    }
}

fn psychometric_recovery() -> Outcome {
    let design = Design {
        scales: SCALES.to_vec(),
        trials_per_scale: 300,
        images: 10,
    };
    let chance_exact = pc_abx_from_detectability(0.0) == 0.5;
    let mut ok = chance_exact;
    let mut parts = vec![format!("PC(d2=0) == 0.5: {chance_exact}")];
    for (k, truth) in [
        PsychometricParams {
            s0: 0.51,
            beta0: 3.0,
            lapse: 0.02,
        },
        PsychometricParams {
            s0: 0.25,
            beta0: 2.0,
            lapse: 0.01,
        },
    ]
    .into_iter()
    .enumerate()
    {
        let (mut covered, mut max_lapse) = (0, 0.0f64);
        for rep in 0..50u64 {
            let seed = 10_000 * (k as u64 + 1) + rep;
            let run = simulate_observer(&truth, &design, Condition::SynthVsSynth, seed).and_then(|trials| {
                let fit = fit_psychometric(&trials, Condition::SynthVsSynth)?;
                let cfg = BootstrapConfig {
                    samples: 1000,
                    level: 0.68,
                    seed,
                };
                let ci = bootstrap_ci(&trials, &fit, &cfg, ExecPolicy::Parallel)?;
                Ok((fit, ci))
            });
            match run {
                Ok((fit, ci)) => {
                    covered += ci.s0.contains(truth.s0) as usize;
                    max_lapse = max_lapse.max(ci.max_lapse).max(fit.params.lapse);
                }
                Err(e) => return Fail(format!("s0={}: {e}", truth.s0)),
            }
        }
        ok &= covered >= 45 && max_lapse <= LAPSE_MAX;
        parts.push(format!("s0={}: {covered}/50 covered (need 45), max lapse {max_lapse:.3}", truth.s0));
    }
    verdict(ok, parts.join(", "))
}

fn synthesis_speed(data_dir: &DataDir) -> Outcome {
    let (weights, source) = if data_dir.has_weights() {
        (data_dir.load_weights(), "pretrained weights")
    } else {
        let enc = random_weights("vgg19-relu4_1", ShapeSpec::channels(3), ShapeSpec::channels(512), vgg19_relu4_1_layers(), 1);
        let dec = random_weights("relu4_1-decoder", ShapeSpec::channels(512), ShapeSpec::channels(3), relu4_1_decoder_layers(), 2);
        (enc.and_then(|e| dec.map(|d| (e, d))), "random weights, pretrained architecture")
    };
    let (enc, dec) = match weights {
        Ok(w) => w,
        Err(e) => return Fail(e.to_string()),
    };
    let codec = Codec::new(&enc, &dec);
    let image = procedural_image(3, 512, 1);
    let masks = match metamer_core::geometry::build_pooling_masks(&PoolingConfig::with_scale(0.5)) {
        Ok(m) => m,
        Err(e) => return Fail(e.to_string()),
    };
    let gamma = GammaFunction::new(1.281);
    let start = Instant::now();
    let result = synthesize_metamer(&image, 1, AlphaSource::Gamma(&gamma), &masks, &codec, ExecPolicy::Parallel);
    let elapsed = start.elapsed();
    match result {
        Ok(_) => verdict(
            elapsed <= Duration::from_secs(10),
            format!("512x512 in {:.2}s (limit 10s), {source}, {} cpus", elapsed.as_secs_f64(), cpu_count()),
        ),
        Err(e) => Fail(e.to_string()),
    }
}

fn cpu_count() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn round_trip_quality(data_dir: &DataDir) -> Outcome {
    if !data_dir.has_weights() || !data_dir.images_dir().is_dir() {
        return Skip(format!("needs weights and images under {}", data_dir.root().display()));
    }
    let run = || -> metamer_core::Result<f64> {
        let (enc, dec) = data_dir.load_weights()?;
        let codec = Codec::new(&enc, &dec);
        let originals = data_dir.images()?;
        let mut total = 0.0;
        for (_, img) in &originals {
            total += iqa::ms_ssim(img, &codec.round_trip(img, ExecPolicy::Parallel)?)?.value;
        }
        Ok(total / originals.len().max(1) as f64)
    };
    match run() {
        Ok(mean) => verdict((mean - 0.86).abs() <= 0.08, format!("mean MS-SSIM(I, I') = {mean:.4} (0.86 +/- 0.08)")),
        Err(e) => Fail(e.to_string()),
    }
}

fn main() {
    // `cargo test` passes harness flags such as `--quiet`; a name filter
    // that matches nothing here skips the suite.
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !filters.is_empty() && !filters.iter().any(|f| "acceptance".contains(f.as_str())) {
        return;
    }
    let data_dir = DataDir::from_env();
    type Check<'a> = (usize, &'a str, u64, Box<dyn Fn() -> Outcome + 'a>);
    let checks: Vec<Check> = vec![
        (1, "pooling geometry", 10, Box::new(pooling_geometry)),
        (2, "synthesis endpoint identity", 30, Box::new(synthesis_identity)),
        (3, "AdaIN contract", 10, Box::new(adain_contract)),
        (4, "SSIM oracle", 30, Box::new(ssim_oracle)),
        (5, "gamma recovery", 300, Box::new(gamma_recovery)),
        (5, "gamma reference slopes", 3600, Box::new(|| gamma_reference_slopes(&data_dir))),
        (6, "psychometric recovery", 600, Box::new(psychometric_recovery)),
        (7, "synthesis performance", 10, Box::new(|| synthesis_speed(&data_dir))),
        (8, "round-trip quality", 600, Box::new(|| round_trip_quality(&data_dir))),
    ];
    let mut failed = 0;
    for (id, name, budget, check) in checks {
        let start = Instant::now();
        let outcome = within_budget(check(), start.elapsed(), Duration::from_secs(budget));
        let (tag, detail) = match outcome {
            Pass(d) => ("PASS", d),
            Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Skip(d) => ("SKIP", d),
        };
        println!("criterion {id} {tag} {name}: {detail}");
    }
    println!("acceptance: {failed} failing");
    if failed > 0 && std::env::var("METAMER_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
