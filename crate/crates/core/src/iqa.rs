//! SSIM, MS-SSIM and IW-SSIM on luma, globally or pooled per region.
//!
//! Every map has the same size as its input: the Gaussian window is cropped
//! at the image border and renormalized, so maps stay aligned with pooling
//! masks at each pyramid level.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::ImageBuffer;
use crate::geometry::{downsample_masks, PoolingMasks};

/// Per-level exponents shared by MS-SSIM and IW-SSIM.
pub const SCALE_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Ssim,
    MsSsim,
    IwSsim,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Ssim => "ssim",
            Metric::MsSsim => "ms-ssim",
            Metric::IwSsim => "iw-ssim",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "ssim" => Ok(Metric::Ssim),
            "ms-ssim" | "msssim" => Ok(Metric::MsSsim),
            "iw-ssim" | "iwssim" => Ok(Metric::IwSsim),
            other => Err(Error::InvalidConfig(format!("unknown metric {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimConfig {
    /// Side of the square Gaussian window, pixels (odd).
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range `R` of the inputs.
    pub dynamic_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimConfig {
    fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    fn kernel(&self) -> Vec<f64> {
        let r = (self.window / 2) as isize;
        let g: Vec<f64> = (-r..=r)
            .map(|d| (-((d * d) as f64) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let s: f64 = g.iter().sum();
        g.into_iter().map(|v| v / s).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!("SSIM window must be odd, got {}", self.window)));
        }
        if !(self.sigma > 0.0 && self.dynamic_range > 0.0) {
            return Err(Error::InvalidConfig("SSIM sigma and dynamic range must be > 0".into()));
        }
        Ok(())
    }
}

/// Per-pixel similarity values, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl SimilarityMap {
    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len().max(1) as f64
    }
}

/// A single-channel plane in row-major order.
#[derive(Debug, Clone, PartialEq)]
struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    fn map2(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }
}

/// Separable filter with the kernel cropped at the border and renormalized.
fn filter_same(p: &Plane, kernel: &[f64]) -> Plane {
    let r = (kernel.len() / 2) as isize;
    let (w, h) = (p.width as isize, p.height as isize);
    let pass = |src: &[f64], len: isize, stride: isize, lines: isize, line_stride: isize| -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        for l in 0..lines {
            for i in 0..len {
                let (mut acc, mut norm) = (0.0, 0.0);
                for (k, &g) in kernel.iter().enumerate() {
                    let j = i + k as isize - r;
                    if j >= 0 && j < len {
                        acc += g * src[(l * line_stride + j * stride) as usize];
                        norm += g;
                    }
                }
                out[(l * line_stride + i * stride) as usize] = acc / norm;
            }
        }
        out
    };
    let rows = pass(&p.data, w, 1, h, w);
    let cols = pass(&rows, h, w, w, 1);
    Plane {
        width: p.width,
        height: p.height,
        data: cols,
    }
}

struct SsimParts {
    luminance: Plane,
    contrast_structure: Plane,
}

fn ssim_parts(x: &Plane, y: &Plane, cfg: &SsimConfig) -> SsimParts {
    let k = cfg.kernel();
    let mx = filter_same(x, &k);
    let my = filter_same(y, &k);
    let sxx = filter_same(&x.map2(x, |a, b| a * b), &k);
    let syy = filter_same(&y.map2(y, |a, b| a * b), &k);
    let sxy = filter_same(&x.map2(y, |a, b| a * b), &k);
    let (c1, c2) = (cfg.c1(), cfg.c2());
    let n = x.data.len();
    let mut lum = vec![0.0; n];
    let mut cs = vec![0.0; n];
    for i in 0..n {
        let (ux, uy) = (mx.data[i], my.data[i]);
        let vx = sxx.data[i] - ux * ux;
        let vy = syy.data[i] - uy * uy;
        let cxy = sxy.data[i] - ux * uy;
        lum[i] = (2.0 * ux * uy + c1) / (ux * ux + uy * uy + c1);
        cs[i] = (2.0 * cxy + c2) / (vx + vy + c2);
    }
    let wrap = |data| Plane {
        width: x.width,
        height: x.height,
        data,
    };
    SsimParts {
        luminance: wrap(lum),
        contrast_structure: wrap(cs),
    }
}

fn luma_planes(a: &ImageBuffer, b: &ImageBuffer) -> Result<(Plane, Plane)> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("{:?}", a.shape()), format!("{:?}", b.shape())));
    }
    let mk = |img: &ImageBuffer| Plane {
        width: img.width,
        height: img.height,
        data: img.luma(),
    };
    Ok((mk(a), mk(b)))
}

pub fn ssim_map(a: &ImageBuffer, b: &ImageBuffer) -> Result<SimilarityMap> {
    ssim_map_with(a, b, &SsimConfig::default())
}

pub fn ssim_map_with(a: &ImageBuffer, b: &ImageBuffer, cfg: &SsimConfig) -> Result<SimilarityMap> {
    cfg.validate()?;
    let (x, y) = luma_planes(a, b)?;
    let parts = ssim_parts(&x, &y, cfg);
    Ok(SimilarityMap {
        width: x.width,
        height: x.height,
        data: parts
            .luminance
            .data
            .iter()
            .zip(&parts.contrast_structure.data)
            .map(|(l, c)| l * c)
            .collect(),
    })
}

/// Mean SSIM over the whole image.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    Ok(ssim_map(a, b)?.mean())
}

/// Scores of one metric per pooling region, and averaged per ring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionScores {
    pub metric: Metric,
    /// Aligned with the masks; `None` where a region has no support.
    pub regions: Vec<Option<f64>>,
    /// Mean of the present region scores on each eccentricity ring.
    pub rings: BTreeMap<usize, f64>,
}

impl RegionScores {
    fn from_regions(metric: Metric, regions: Vec<Option<f64>>, masks: &PoolingMasks) -> Self {
        let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for (info, score) in masks.regions.iter().zip(&regions) {
            if let (Some(ring), Some(v)) = (info.ring, score) {
                let e = acc.entry(ring).or_insert((0.0, 0));
                e.0 += v;
                e.1 += 1;
            }
        }
        RegionScores {
            metric,
            regions,
            rings: acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect(),
        }
    }
}

/// Mask-weighted mean of a map within each region, plus ring averages.
pub fn pooled_score(map: &SimilarityMap, masks: &PoolingMasks) -> Result<RegionScores> {
    let plane = Plane {
        width: map.width,
        height: map.height,
        data: map.data.clone(),
    };
    Ok(RegionScores::from_regions(Metric::Ssim, pool_plane(&plane, None, masks)?, masks))
}

/// `Σ w·m·v / Σ w·m` per region (`m` = optional extra weights).
fn pool_plane(values: &Plane, weights: Option<&Plane>, masks: &PoolingMasks) -> Result<Vec<Option<f64>>> {
    if values.width != masks.size || values.height != masks.size {
        return Err(Error::shape(
            format!("{0}x{0}", masks.size),
            format!("{}x{}", values.height, values.width),
        ));
    }
    Ok(masks
        .masks
        .iter()
        .map(|m| {
            let (mut num, mut den) = (0.0, 0.0);
            for (x, y, w) in m.iter() {
                if w <= 0.0 {
                    continue;
                }
                let i = y * values.width + x;
                let ww = w as f64 * weights.map_or(1.0, |p| p.data[i]);
                num += ww * values.data[i];
                den += ww;
            }
            (den > 0.0).then(|| num / den)
        })
        .collect())
}

/// Tab-separated `region, ring, z, score` rows; absent scores are `NA`.
pub fn write_region_tsv(scores: &RegionScores, masks: &PoolingMasks, mut out: impl Write) -> Result<()> {
    let io = |e| Error::io("region table", e);
    writeln!(out, "region\tring\tz\t{}", scores.metric).map_err(io)?;
    for (info, s) in masks.regions.iter().zip(&scores.regions) {
        let ring = info.ring.map_or("fovea".to_string(), |r| r.to_string());
        let score = s.map_or("NA".to_string(), |v| format!("{v:.6}"));
        writeln!(out, "{}\t{}\t{:.6}\t{}", info.id, ring, info.radial_extent, score).map_err(io)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityScore {
    pub metric: Metric,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regions: Option<RegionScores>,
}

fn check_levels(p: &Plane, cfg: &SsimConfig, levels: usize) -> Result<()> {
    let min = cfg.window << (levels - 1);
    if p.width < min || p.height < min {
        return Err(Error::ImageTooSmall {
            width: p.width,
            height: p.height,
            levels,
            min,
        });
    }
    Ok(())
}

fn average_down(p: &Plane) -> Plane {
    let (w, h) = (p.width / 2, p.height / 2);
    let mut data = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = 2 * y * p.width + 2 * x;
            data[y * w + x] = 0.25 * (p.data[i] + p.data[i + 1] + p.data[i + p.width] + p.data[i + p.width + 1]);
        }
    }
    Plane { width: w, height: h, data }
}

/// Masks brought to each pyramid level (level 0 = input resolution).
fn level_masks(masks: &PoolingMasks, levels: usize) -> Result<Vec<PoolingMasks>> {
    (0..levels).map(|l| downsample_masks(masks, 1 << l)).collect()
}

/// Combine per-level scores: `∏ max(v_l, 0)^{w_l}`.
fn combine(levels: &[f64]) -> f64 {
    levels
        .iter()
        .zip(SCALE_WEIGHTS)
        .map(|(&v, w)| v.max(0.0).powf(w))
        .product()
}

fn ms_ssim_impl(a: &ImageBuffer, b: &ImageBuffer, masks: Option<&PoolingMasks>) -> Result<QualityScore> {
    let cfg = SsimConfig::default();
    let levels = SCALE_WEIGHTS.len();
    let (mut x, mut y) = luma_planes(a, b)?;
    check_levels(&x, &cfg, levels)?;
    let pyramid_masks = masks.map(|m| level_masks(m, levels)).transpose()?;
    let mut global = Vec::with_capacity(levels);
    let mut per_region: Vec<Vec<Option<f64>>> = Vec::new();
    for l in 0..levels {
        let parts = ssim_parts(&x, &y, &cfg);
        let map = if l + 1 == levels {
            parts.luminance.map2(&parts.contrast_structure, |a, b| a * b)
        } else {
            parts.contrast_structure
        };
        global.push(map.data.iter().sum::<f64>() / map.data.len() as f64);
        if let Some(pm) = &pyramid_masks {
            per_region.push(pool_plane(&map, None, &pm[l])?);
        }
        if l + 1 < levels {
            x = average_down(&x);
            y = average_down(&y);
        }
    }
    let regions = masks.map(|m| regions_from_levels(Metric::MsSsim, &per_region, m));
    Ok(QualityScore {
        metric: Metric::MsSsim,
        value: combine(&global),
        regions,
    })
}

fn regions_from_levels(metric: Metric, per_level: &[Vec<Option<f64>>], masks: &PoolingMasks) -> RegionScores {
    let scores = (0..masks.len())
        .map(|i| {
            let vals: Option<Vec<f64>> = per_level.iter().map(|lvl| lvl[i]).collect();
            vals.map(|v| combine(&v))
        })
        .collect();
    RegionScores::from_regions(metric, scores, masks)
}

pub fn ms_ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<QualityScore> {
    ms_ssim_impl(a, b, None)
}

/// MS-SSIM with per-region pooling at every level.
pub fn ms_ssim_regions(a: &ImageBuffer, b: &ImageBuffer, masks: &PoolingMasks) -> Result<QualityScore> {
    ms_ssim_impl(a, b, Some(masks))
}

/// Settings of the information-content weighting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IwConfig {
    /// Variance of the visual noise, on a 0–255 intensity scale.
    pub noise_variance: f64,
    /// Side of the local neighbourhood used by the mixture model.
    pub block: usize,
    /// Include the co-located coefficient from the next coarser band.
    pub parent: bool,
}

impl Default for IwConfig {
    fn default() -> Self {
        IwConfig {
            noise_variance: 0.4,
            block: 3,
            parent: true,
        }
    }
}

const BINOM5: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Mirror index without repeating the edge sample.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut j = i.rem_euclid(period);
    if j >= n {
        j = period - j;
    }
    j as usize
}

fn blur_binom(p: &Plane) -> Plane {
    let (w, h) = (p.width, p.height);
    let mut rows = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            rows[y * w + x] = BINOM5
                .iter()
                .enumerate()
                .map(|(k, g)| g * p.data[y * w + reflect(x as isize + k as isize - 2, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = BINOM5
                .iter()
                .enumerate()
                .map(|(k, g)| g * rows[reflect(y as isize + k as isize - 2, h) * w + x])
                .sum();
        }
    }
    Plane { width: w, height: h, data: out }
}

fn reduce(p: &Plane) -> Plane {
    let b = blur_binom(p);
    let (w, h) = (p.width.div_ceil(2), p.height.div_ceil(2));
    let mut data = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            data[y * w + x] = b.data[2 * y * p.width + 2 * x];
        }
    }
    Plane { width: w, height: h, data }
}

/// Zero-insertion upsampling to `width × height` followed by a ×4 binomial blur.
fn expand(p: &Plane, width: usize, height: usize) -> Plane {
    let mut up = Plane {
        width,
        height,
        data: vec![0.0; width * height],
    };
    for y in 0..p.height {
        for x in 0..p.width {
            if 2 * y < height && 2 * x < width {
                up.data[2 * y * width + 2 * x] = 4.0 * p.data[y * p.width + x];
            }
        }
    }
    blur_binom(&up)
}

/// Laplacian pyramid: `levels − 1` band-pass planes then the low-pass residual.
fn laplacian_pyramid(p: &Plane, levels: usize) -> Vec<Plane> {
    let mut out = Vec::with_capacity(levels);
    let mut cur = p.clone();
    for _ in 0..levels - 1 {
        let low = reduce(&cur);
        let back = expand(&low, cur.width, cur.height);
        out.push(cur.map2(&back, |a, b| a - b));
        cur = low;
    }
    out.push(cur);
    out
}

fn box_mean(p: &Plane, r: usize) -> Plane {
    let (w, h) = (p.width, p.height);
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (mut s, mut n) = (0.0, 0usize);
            for yy in y.saturating_sub(r)..(y + r + 1).min(h) {
                for xx in x.saturating_sub(r)..(x + r + 1).min(w) {
                    s += p.data[yy * w + xx];
                    n += 1;
                }
            }
            out[y * w + x] = s / n as f64;
        }
    }
    Plane { width: w, height: h, data: out }
}

/// Bilinear enlargement of a coarser band to `width × height`.
fn enlarge(p: &Plane, width: usize, height: usize) -> Plane {
    let mut data = vec![0.0; width * height];
    for y in 0..height {
        let fy = ((y as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (p.height - 1) as f64);
        let (y0, ty) = (fy.floor() as usize, fy - fy.floor());
        let y1 = (y0 + 1).min(p.height - 1);
        for x in 0..width {
            let fx = ((x as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (p.width - 1) as f64);
            let (x0, tx) = (fx.floor() as usize, fx - fx.floor());
            let x1 = (x0 + 1).min(p.width - 1);
            let v = |yy: usize, xx: usize| p.data[yy * p.width + xx];
            data[y * width + x] = (1.0 - ty) * ((1.0 - tx) * v(y0, x0) + tx * v(y0, x1))
                + ty * ((1.0 - tx) * v(y1, x0) + tx * v(y1, x1));
        }
    }
    Plane { width, height, data }
}

/// Information content weights of one band from a Gaussian scale mixture
/// prior on the reference coefficients and a gain-plus-noise distortion model.
/// Border pixels (without a full neighbourhood) get weight 0. The model is
/// directional; callers average both directions to keep the metric symmetric.
fn information_weights(reference: &Plane, distorted: &Plane, parent: Option<&Plane>, cfg: &IwConfig) -> Plane {
    const TOL: f64 = 1e-15;
    let (w, h) = (reference.width, reference.height);
    let r = cfg.block / 2;
    let mx = box_mean(reference, r);
    let my = box_mean(distorted, r);
    let mxy = box_mean(&reference.map2(distorted, |a, b| a * b), r);
    let mxx = box_mean(&reference.map2(reference, |a, b| a * b), r);
    let myy = box_mean(&distorted.map2(distorted, |a, b| a * b), r);

    let n = w * h;
    let mut gain = vec![0.0; n];
    let mut noise = vec![0.0; n];
    for i in 0..n {
        let cov = mxy.data[i] - mx.data[i] * my.data[i];
        let sx = (mxx.data[i] - mx.data[i] * mx.data[i]).max(0.0);
        let sy = (myy.data[i] - my.data[i] * my.data[i]).max(0.0);
        let mut g = cov / (sx + TOL);
        let mut v = sy - g * cov;
        if sx < TOL {
            g = 0.0;
            v = sy;
        }
        if sy < TOL {
            g = 0.0;
            v = 0.0;
        }
        if g < 0.0 {
            v = sy;
            g = 0.0;
        }
        gain[i] = g;
        noise[i] = v.max(TOL);
    }

    let parent = parent.map(|p| enlarge(p, w, h));
    let dim = cfg.block * cfg.block + usize::from(parent.is_some());
    let mut zero = Plane {
        width: w,
        height: h,
        data: vec![0.0; n],
    };
    if w <= 2 * r || h <= 2 * r {
        return zero;
    }
    let vector_at = |x: usize, y: usize, out: &mut DVector<f64>| {
        let mut k = 0;
        for yy in y - r..=y + r {
            for xx in x - r..=x + r {
                out[k] = reference.data[yy * w + xx];
                k += 1;
            }
        }
        if let Some(p) = &parent {
            out[k] = p.data[y * w + x];
        }
    };
    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    let mut v = DVector::<f64>::zeros(dim);
    let mut count = 0usize;
    for y in r..h - r {
        for x in r..w - r {
            vector_at(x, y, &mut v);
            cov += &v * v.transpose();
            count += 1;
        }
    }
    cov /= count as f64;
    let eig = SymmetricEigen::new(cov);
    let eigenvalues: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    let top = eigenvalues.iter().cloned().fold(0.0, f64::max);
    let inv_diag = DVector::from_iterator(
        dim,
        eigenvalues.iter().map(|&l| if l > top * 1e-12 && l > 0.0 { 1.0 / l } else { 0.0 }),
    );
    let inv = &eig.eigenvectors * DMatrix::from_diagonal(&inv_diag) * eig.eigenvectors.transpose();

    let s2 = cfg.noise_variance;
    for y in r..h - r {
        for x in r..w - r {
            vector_at(x, y, &mut v);
            let mixer = (v.transpose() * &inv * &v)[(0, 0)] / dim as f64;
            let i = y * w + x;
            let (g, vv) = (gain[i], noise[i]);
            let info: f64 = eigenvalues
                .iter()
                .map(|&l| (1.0 + ((vv + (1.0 + g * g) * s2) * mixer * l + s2 * vv) / (s2 * s2)).log2())
                .sum();
            zero.data[i] = if info < TOL { 0.0 } else { info };
        }
    }
    zero
}

fn iw_ssim_impl(a: &ImageBuffer, b: &ImageBuffer, masks: Option<&PoolingMasks>) -> Result<QualityScore> {
    let levels = SCALE_WEIGHTS.len();
    let cfg = SsimConfig {
        dynamic_range: 255.0,
        ..Default::default()
    };
    let iw_cfg = IwConfig::default();
    let (x, y) = luma_planes(a, b)?;
    check_levels(&x, &cfg, levels)?;
    let scale = |p: Plane| Plane {
        data: p.data.iter().map(|v| v * 255.0).collect(),
        ..p
    };
    let px = laplacian_pyramid(&scale(x), levels);
    let py = laplacian_pyramid(&scale(y), levels);
    let pyramid_masks = masks.map(|m| level_masks(m, levels)).transpose()?;

    let mut global = Vec::with_capacity(levels);
    let mut per_region = Vec::new();
    for l in 0..levels {
        let parts = ssim_parts(&px[l], &py[l], &cfg);
        if l + 1 == levels {
            let map = parts.luminance.map2(&parts.contrast_structure, |a, b| a * b);
            global.push(map.data.iter().sum::<f64>() / map.data.len() as f64);
            if let Some(pm) = &pyramid_masks {
                per_region.push(pool_plane(&map, None, &pm[l])?);
            }
        } else {
            let forward = information_weights(&px[l], &py[l], iw_cfg.parent.then(|| &px[l + 1]), &iw_cfg);
            let backward = information_weights(&py[l], &px[l], iw_cfg.parent.then(|| &py[l + 1]), &iw_cfg);
            let iw = forward.map2(&backward, |a, b| 0.5 * (a + b));
            let cs = &parts.contrast_structure;
            let den: f64 = iw.data.iter().sum();
            let num: f64 = iw.data.iter().zip(&cs.data).map(|(w, c)| w * c).sum();
            global.push(if den > 0.0 { num / den } else { cs.data.iter().sum::<f64>() / cs.data.len() as f64 });
            if let Some(pm) = &pyramid_masks {
                let weighted = pool_plane(cs, Some(&iw), &pm[l])?;
                let plain = pool_plane(cs, None, &pm[l])?;
                per_region.push(weighted.into_iter().zip(plain).map(|(w, p)| w.or(p)).collect());
            }
        }
    }
    let regions = masks.map(|m| regions_from_levels(Metric::IwSsim, &per_region, m));
    Ok(QualityScore {
        metric: Metric::IwSsim,
        value: combine(&global),
        regions,
    })
}

pub fn iw_ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<QualityScore> {
    iw_ssim_impl(a, b, None)
}

/// IW-SSIM with per-region pooling; regions whose information weight is zero
/// at some level fall back to the plain mean at that level.
pub fn iw_ssim_regions(a: &ImageBuffer, b: &ImageBuffer, masks: &PoolingMasks) -> Result<QualityScore> {
    iw_ssim_impl(a, b, Some(masks))
}

/// Global score of any metric.
pub fn score(metric: Metric, a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    match metric {
        Metric::Ssim => ssim(a, b),
        Metric::MsSsim => Ok(ms_ssim(a, b)?.value),
        Metric::IwSsim => Ok(iw_ssim(a, b)?.value),
    }
}

/// Per-region scores of any metric.
pub fn region_scores(metric: Metric, a: &ImageBuffer, b: &ImageBuffer, masks: &PoolingMasks) -> Result<RegionScores> {
    match metric {
        Metric::Ssim => pooled_score(&ssim_map(a, b)?, masks),
        Metric::MsSsim => Ok(ms_ssim_regions(a, b, masks)?.regions.expect("regions requested")),
        Metric::IwSsim => Ok(iw_ssim_regions(a, b, masks)?.regions.expect("regions requested")),
    }
}
