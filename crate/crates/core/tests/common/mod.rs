#![allow(dead_code)]

use metamer_core::features::toy::{orthonormal_codec, procedural_image};
use metamer_core::features::{ImageBuffer, WeightManifest};
use metamer_core::geometry::{build_pooling_masks, PoolingConfig, PoolingMasks};
use metamer_core::iqa::Metric;
use metamer_core::optimization::{alpha_grid, planted_profile, score_nf_table, NfScoreTable, ScaleData};
use metamer_core::styletransfer::Codec;
use metamer_core::{ExecPolicy, Result};

pub const SCALES: [f64; 5] = [0.3, 0.4, 0.5, 0.6, 0.7];

pub fn toy_codec() -> (WeightManifest, WeightManifest) {
    orthonormal_codec(3, 8, 11).unwrap()
}

pub fn images(n: usize, size: usize) -> Vec<(String, ImageBuffer)> {
    (0..n)
        .map(|i| (format!("img{i:02}"), procedural_image(3, size, 100 + i as u64)))
        .collect()
}

pub fn small_masks(scale: f64, size: usize) -> PoolingMasks {
    let config = PoolingConfig {
        image_size: size,
        min_region_area: 4.0,
        ..PoolingConfig::with_scale(scale)
    };
    build_pooling_masks(&config).unwrap()
}

/// Score tables of our metamers at every scale, on a 1/20 α grid.
pub fn score_tables(images: &[(String, ImageBuffer)], size: usize, metric: Metric) -> Result<Vec<NfScoreTable>> {
    let (enc, dec) = toy_codec();
    let codec = Codec::new(&enc, &dec);
    let grid = alpha_grid(1.0 / 20.0)?;
    SCALES
        .iter()
        .map(|&s| score_nf_table(images, &small_masks(s, size), &codec, metric, &grid, 7, ExecPolicy::Parallel))
        .collect()
}

/// Search inputs whose reference profile at scale index `i` is the table
/// read at `α = ring_alpha(i, z)`.
pub fn planted(tables: &[NfScoreTable], ring_alpha: impl Fn(usize, f64) -> f64) -> Result<Vec<ScaleData>> {
    tables
        .iter()
        .enumerate()
        .map(|(i, t)| {
            Ok(ScaleData {
                profile: planted_profile(t, |_, z| ring_alpha(i, z))?,
                table: t.clone(),
            })
        })
        .collect()
}
