use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use metamer_core::features::encode;
use metamer_core::features::manifest::vgg19_relu4_1_layers;
use metamer_core::features::toy::{orthonormal_codec, procedural_image, random_weights};
use metamer_core::features::ShapeSpec;
use metamer_core::geometry::{build_many, build_pooling_masks, PoolingConfig};
use metamer_core::optimization::permutation_test;
use metamer_core::psychometrics::{
    bootstrap_ci, fit_psychometric, simulate_observer, BootstrapConfig, Condition, Design, PsychometricParams,
};
use metamer_core::styletransfer::{synthesize_metamer, AlphaField, AlphaSource, Codec};
use metamer_core::ExecPolicy;

const POLICIES: [(&str, ExecPolicy); 2] = [("sequential", ExecPolicy::Sequential), ("parallel", ExecPolicy::Parallel)];

fn masks(c: &mut Criterion) {
    let configs: Vec<PoolingConfig> = [0.3, 0.4, 0.5, 0.6, 0.7]
        .iter()
        .map(|&s| PoolingConfig {
            image_size: 256,
            ..PoolingConfig::with_scale(s)
        })
        .collect();
    let mut g = c.benchmark_group("masks");
    g.sample_size(10);
    for (name, p) in POLICIES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| build_many(&configs, p).unwrap()));
    }
    g.finish();
}

fn encoder(c: &mut Criterion) {
    let enc = random_weights("e", ShapeSpec::channels(3), ShapeSpec::channels(512), vgg19_relu4_1_layers(), 1).unwrap();
    let img = procedural_image(3, 128, 1);
    let mut g = c.benchmark_group("encode_128");
    g.sample_size(10);
    for (name, p) in POLICIES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| encode(&img, &enc, p).unwrap()));
    }
    g.finish();
}

fn synthesis(c: &mut Criterion) {
    let (enc, dec) = orthonormal_codec(3, 16, 1).unwrap();
    let codec = Codec::new(&enc, &dec);
    let masks = build_pooling_masks(&PoolingConfig {
        image_size: 256,
        ..PoolingConfig::with_scale(0.4)
    })
    .unwrap();
    let field = AlphaField::uniform(&masks, 0.5).unwrap();
    let img = procedural_image(3, 256, 2);
    let mut g = c.benchmark_group("synthesis_256");
    g.sample_size(10);
    for (name, p) in POLICIES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| synthesize_metamer(&img, 1, AlphaSource::Field(&field), &masks, &codec, p).unwrap())
        });
    }
    g.finish();
}

fn bootstrap(c: &mut Criterion) {
    let design = Design {
        scales: vec![0.3, 0.4, 0.5, 0.6, 0.7],
        trials_per_scale: 200,
        images: 10,
    };
    let params = PsychometricParams { s0: 0.5, beta0: 3.0, lapse: 0.02 };
    let trials = simulate_observer(&params, &design, Condition::SynthVsSynth, 3).unwrap();
    let fit = fit_psychometric(&trials, Condition::SynthVsSynth).unwrap();
    let cfg = BootstrapConfig { samples: 200, level: 0.68, seed: 4 };
    let mut g = c.benchmark_group("bootstrap_200");
    g.sample_size(10);
    for (name, p) in POLICIES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| bootstrap_ci(&trials, &fit, &cfg, p).unwrap()));
    }
    g.finish();
}

fn permutation(c: &mut Criterion) {
    let per_scale: Vec<(f64, Vec<(f64, f64)>)> = [0.3, 0.4, 0.5, 0.6, 0.7]
        .iter()
        .map(|&s| (s, (1..12).map(|k| (k as f64 * s, 0.9 * (1.0 - (-(k as f64) * s).exp()))).collect()))
        .collect();
    let mut g = c.benchmark_group("permutation_1000");
    g.sample_size(10);
    for (name, p) in POLICIES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| permutation_test(&per_scale, 1000, 5, p).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, masks, encoder, synthesis, bootstrap, permutation);
criterion_main!(benches);
