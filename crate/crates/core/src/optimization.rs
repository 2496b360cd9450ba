//! Calibration of the distortion strength α against reference profiles.
//!
//! For every scale and ring, α* is the grid value whose metamer scores (vs.
//! the decoded reference `I′`) best match a baseline model's scores (vs. the
//! original). A sigmoid `γ(z) = −1 + 2 / (1 + e^{−d z})` of the ring's radial
//! extent `z` is then fitted to the `(z, α*)` points, and a permutation test
//! decides between one shared `γ` and a slope that varies linearly with scale.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{derive_seed, ExecPolicy};
use crate::features::ImageBuffer;
use crate::geometry::PoolingMasks;
use crate::iqa::{region_scores, Metric};
use crate::styletransfer::{AlphaField, Codec, PreparedMetamer};

/// Largest α strictly below one.
pub const ALPHA_MAX: f64 = 1.0 - f64::EPSILON / 2.0;

/// Upper end of the slope search, per degree.
const SLOPE_MAX: f64 = 100.0;

/// The constrained sigmoid: `a = −1`, `b = 2`, `c = 1`; only the slope is free.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaFunction {
    /// Slope `d`, per degree of radial extent.
    pub slope: f64,
    pub offset: f64,
    pub gain: f64,
    pub rate: f64,
    /// Root-mean-square residual of the fit (0 when set by hand).
    #[serde(default)]
    pub residual: f64,
    /// Number of points the fit used.
    #[serde(default)]
    pub points: usize,
    #[serde(default)]
    pub provenance: String,
}

impl GammaFunction {
    pub fn new(slope: f64) -> Self {
        GammaFunction {
            slope,
            offset: -1.0,
            gain: 2.0,
            rate: 1.0,
            residual: 0.0,
            points: 0,
            provenance: "manual".into(),
        }
    }

    /// `γ(z)`, clamped to `[0, 1)`.
    pub fn alpha(&self, z: f64) -> f64 {
        if !(z > 0.0) {
            return 0.0;
        }
        let v = self.offset + self.gain / (self.rate + (-self.slope * z).exp());
        v.clamp(0.0, ALPHA_MAX)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

/// Outcome of the search: one γ for all scales, or a slope linear in scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GammaModel {
    ScaleIndependent {
        gamma: GammaFunction,
    },
    ScaleDependent {
        /// `d(s) = intercept + per_scale · s`.
        intercept: f64,
        per_scale: f64,
    },
}

impl GammaModel {
    pub fn for_scale(&self, scale: f64) -> GammaFunction {
        match self {
            GammaModel::ScaleIndependent { gamma } => gamma.clone(),
            GammaModel::ScaleDependent { intercept, per_scale } => {
                let mut g = GammaFunction::new((intercept + per_scale * scale).max(0.0));
                g.provenance = format!("linear in scale, evaluated at {scale}");
                g
            }
        }
    }
}

fn sse(points: &[(f64, f64)], d: f64) -> f64 {
    points
        .iter()
        .map(|&(z, a)| {
            let r = a - (0.5 * d * z).tanh();
            r * r
        })
        .sum()
}

/// Least-squares slope of `γ` through `(z, α)` points.
pub fn fit_gamma(points: &[(f64, f64)]) -> Result<GammaFunction> {
    if points.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 (z, alpha) points, got {}",
            points.len()
        )));
    }
    for &(z, a) in points {
        if !(z.is_finite() && z >= 0.0) {
            return Err(Error::InvalidConfig(format!("radial extent {z} must be finite and >= 0")));
        }
        if !(0.0..1.0).contains(&a) {
            return Err(Error::InvalidConfig(format!("alpha {a} outside [0, 1)")));
        }
    }
    if points.iter().all(|&(z, _)| z == 0.0) {
        return Err(Error::Degenerate("every point has z = 0; the slope is unidentifiable".into()));
    }

    // coarse log grid, then golden section on the bracketing cell
    let mut grid = vec![0.0];
    let n = 240;
    grid.extend((0..n).map(|k| 1e-4 * (SLOPE_MAX / 1e-4f64).powf(k as f64 / (n - 1) as f64)));
    let values: Vec<f64> = grid.iter().map(|&d| sse(points, d)).collect();
    let best = values
        .iter()
        .enumerate()
        .fold(0, |b, (i, &v)| if v < values[b] { i } else { b });
    let (mut lo, mut hi) = (grid[best.saturating_sub(1)], grid[(best + 1).min(grid.len() - 1)]);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let (mut f1, mut f2) = (sse(points, x1), sse(points, x2));
    for _ in 0..200 {
        if hi - lo <= 1e-14 * hi.max(1e-300) {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = sse(points, x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = sse(points, x2);
        }
    }
    let mut d = if f1 <= f2 { x1 } else { x2 };
    let mut f = sse(points, d);
    if values[best] < f {
        d = grid[best];
        f = values[best];
    }
    // Gauss-Newton polish
    for _ in 0..20 {
        let (mut num, mut den) = (0.0, 0.0);
        for &(z, a) in points {
            let t = (0.5 * d * z).tanh();
            let jac = 0.5 * z * (1.0 - t * t);
            num += (t - a) * jac;
            den += jac * jac;
        }
        if !(den > 0.0) {
            break;
        }
        let next = (d - num / den).clamp(0.0, SLOPE_MAX);
        let fn_ = sse(points, next);
        if fn_ < f {
            d = next;
            f = fn_;
        } else {
            break;
        }
    }
    if !d.is_finite() {
        return Err(Error::NonConvergence(format!("slope fit diverged on {} points", points.len())));
    }
    Ok(GammaFunction {
        residual: (f / points.len() as f64).sqrt(),
        points: points.len(),
        provenance: "least squares".into(),
        ..GammaFunction::new(d)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileSource {
    BaselineImages,
    SuppliedCurve,
}

/// Per-ring scores of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageProfile {
    pub id: String,
    pub rings: BTreeMap<usize, f64>,
}

/// Reference scores of a baseline model against the originals, per ring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionProfile {
    pub scale: f64,
    pub metric: Metric,
    pub source: ProfileSource,
    /// Mean over images.
    pub rings: BTreeMap<usize, f64>,
    /// Per-image scores; empty for supplied curves.
    #[serde(default)]
    pub images: Vec<ImageProfile>,
}

fn check_score(v: f64) -> Result<()> {
    if !(-1.0..=1.0).contains(&v) {
        return Err(Error::InvalidConfig(format!("profile score {v} outside [-1, 1]")));
    }
    Ok(())
}

impl DistortionProfile {
    /// A curve given directly, used for every image.
    pub fn supplied(scale: f64, metric: Metric, rings: BTreeMap<usize, f64>) -> Result<Self> {
        rings.values().try_for_each(|&v| check_score(v))?;
        Ok(DistortionProfile {
            scale,
            metric,
            source: ProfileSource::SuppliedCurve,
            rings,
            images: Vec::new(),
        })
    }

    /// Assemble from per-image scores.
    pub fn from_images(scale: f64, metric: Metric, images: Vec<ImageProfile>) -> Result<Self> {
        let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for img in &images {
            for (&k, &v) in &img.rings {
                check_score(v)?;
                let e = acc.entry(k).or_insert((0.0, 0));
                e.0 += v;
                e.1 += 1;
            }
        }
        Ok(DistortionProfile {
            scale,
            metric,
            source: ProfileSource::BaselineImages,
            rings: acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect(),
            images,
        })
    }

    /// Score for image `id` on `ring`: its own when known, else the curve.
    pub fn score(&self, id: &str, ring: usize) -> Option<f64> {
        if self.images.is_empty() {
            return self.rings.get(&ring).copied();
        }
        self.images
            .iter()
            .find(|p| p.id == id)
            .and_then(|p| p.rings.get(&ring).copied())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

/// A baseline metamer and the original it was made from.
#[derive(Debug, Clone)]
pub struct ReferencePair {
    pub id: String,
    pub baseline: ImageBuffer,
    pub original: ImageBuffer,
}

/// Per-ring scores of baseline metamers against their originals, averaged over images.
pub fn build_profile(pairs: &[ReferencePair], masks: &PoolingMasks, metric: Metric, policy: ExecPolicy) -> Result<DistortionProfile> {
    if pairs.is_empty() {
        return Err(Error::InsufficientData("no reference pairs".into()));
    }
    let images = policy.try_map(pairs.len(), |i| {
        let p = &pairs[i];
        if p.baseline.shape() != p.original.shape() || p.original.width != masks.size || p.original.height != masks.size {
            return Err(Error::Annotated {
                image: p.id.clone(),
                scale: masks.config.scale,
                ring: None,
                source: Box::new(Error::shape(
                    format!("{0}x{0} pair", masks.size),
                    format!("{:?} vs {:?}", p.baseline.shape(), p.original.shape()),
                )),
            });
        }
        let scores = region_scores(metric, &p.baseline, &p.original, masks)?;
        Ok(ImageProfile {
            id: p.id.clone(),
            rings: scores.rings,
        })
    })?;
    DistortionProfile::from_images(masks.config.scale, metric, images)
}

fn gaussian_blur(img: &ImageBuffer, sigma: f64) -> ImageBuffer {
    if !(sigma > 0.0) {
        return img.clone();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = k.iter().sum();
    let (w, h) = (img.width as isize, img.height as isize);
    let clampi = |i: isize, n: isize| i.clamp(0, n - 1) as usize;
    let mut out = img.clone();
    for c in 0..img.channels {
        let src = img.channel(c);
        let mut tmp = vec![0.0f64; src.len()];
        for y in 0..h {
            for x in 0..w {
                tmp[(y * w + x) as usize] = k
                    .iter()
                    .enumerate()
                    .map(|(i, g)| g * src[(y * w) as usize + clampi(x + i as isize - r, w)] as f64)
                    .sum::<f64>()
                    / norm;
            }
        }
        let plane = img.plane();
        for y in 0..h {
            for x in 0..w {
                let v = k
                    .iter()
                    .enumerate()
                    .map(|(i, g)| g * tmp[clampi(y + i as isize - r, h) * w as usize + x as usize])
                    .sum::<f64>()
                    / norm;
                out.data[c * plane + (y * w + x) as usize] = v as f32;
            }
        }
    }
    out
}

/// Stand-in for a baseline metamer: each region blurred by a ring-dependent
/// Gaussian (σ in pixels), blended with the pooling weights.
pub fn ring_blurred_reference(image: &ImageBuffer, masks: &PoolingMasks, sigma_for_ring: impl Fn(usize) -> f64) -> Result<ImageBuffer> {
    if image.width != masks.size || image.height != masks.size {
        return Err(Error::shape(masks.size, image.width));
    }
    let mut cache: BTreeMap<u64, ImageBuffer> = BTreeMap::new();
    let mut out = ImageBuffer::new(image.channels, image.height, image.width);
    let plane = image.plane();
    for (info, m) in masks.regions.iter().zip(&masks.masks) {
        let sigma = info.ring.map_or(0.0, &sigma_for_ring);
        let blurred = cache.entry(sigma.to_bits()).or_insert_with(|| gaussian_blur(image, sigma));
        for (x, y, w) in m.iter() {
            if w <= 0.0 {
                continue;
            }
            let i = y * image.width + x;
            for c in 0..image.channels {
                out.data[c * plane + i] += w * blurred.data[c * plane + i];
            }
        }
    }
    out.clamp_unit();
    Ok(out)
}

/// `n` evenly spaced values `k / n`, `k = 0..n`, for `step = 1 / n`.
pub fn alpha_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::InvalidConfig(format!("grid step {step} must lie in (0, 1]")));
    }
    let n = (1.0 / step).round().max(1.0) as usize;
    Ok((0..n).map(|k| k as f64 / n as f64).collect())
}

/// Our metamers' per-ring scores against `I′`, for every image and grid α.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NfScoreTable {
    pub scale: f64,
    pub metric: Metric,
    pub alphas: Vec<f64>,
    pub image_ids: Vec<String>,
    /// `scores[image][alpha]` maps ring → score.
    pub scores: Vec<Vec<BTreeMap<usize, f64>>>,
    /// Radial extent of each ring, degrees.
    pub extents: BTreeMap<usize, f64>,
}

impl NfScoreTable {
    fn alpha_index(&self, alpha: f64) -> Result<usize> {
        self.alphas
            .iter()
            .position(|&a| (a - alpha).abs() <= 1e-12)
            .ok_or_else(|| Error::InvalidConfig(format!("alpha {alpha} is not on the evaluated grid")))
    }

    pub fn rings(&self) -> Vec<usize> {
        self.extents.keys().copied().collect()
    }
}

/// Render every image at every grid α (applied to all peripheral regions)
/// and score each ring against the decoded reference.
pub fn score_nf_table(
    images: &[(String, ImageBuffer)],
    masks: &PoolingMasks,
    codec: &Codec,
    metric: Metric,
    alphas: &[f64],
    seed: u64,
    policy: ExecPolicy,
) -> Result<NfScoreTable> {
    let scale = masks.config.scale;
    let scores = policy.try_map(images.len(), |j| {
        let (id, img) = &images[j];
        let annotate = |e: Error| Error::Annotated {
            image: id.clone(),
            scale,
            ring: None,
            source: Box::new(e),
        };
        let prepared = PreparedMetamer::new(img, derive_seed(seed, j as u64), masks, codec, ExecPolicy::Sequential)
            .map_err(annotate)?;
        let reference = codec.round_trip(img, ExecPolicy::Sequential).map_err(annotate)?;
        alphas
            .iter()
            .map(|&a| {
                let field = AlphaField::uniform(masks, a)?;
                let out = prepared.render(&field, codec, ExecPolicy::Sequential)?;
                Ok(region_scores(metric, &out, &reference, masks)?.rings)
            })
            .collect::<Result<Vec<_>>>()
            .map_err(annotate)
    })?;
    let extents = masks
        .rings()
        .into_iter()
        .filter_map(|k| masks.ring_extent(k).map(|z| (k, z)))
        .collect();
    Ok(NfScoreTable {
        scale,
        metric,
        alphas: alphas.to_vec(),
        image_ids: images.iter().map(|(id, _)| id.clone()).collect(),
        scores,
        extents,
    })
}

fn loss_at(index: usize, ring: usize, profile: &DistortionProfile, table: &NfScoreTable) -> Result<f64> {
    let mut total = 0.0;
    for (j, id) in table.image_ids.iter().enumerate() {
        let annotate = |e: Error| Error::Annotated {
            image: id.clone(),
            scale: table.scale,
            ring: Some(ring),
            source: Box::new(e),
        };
        let fs = profile
            .score(id, ring)
            .ok_or_else(|| annotate(Error::MissingProfileEntry { ring }))?;
        let nf = table.scores[j][index]
            .get(&ring)
            .copied()
            .ok_or_else(|| annotate(Error::MissingProfileEntry { ring }))?;
        total += (fs - nf).powi(2);
    }
    Ok(total / table.image_ids.len().max(1) as f64)
}

/// Mean over images of the squared gap between the reference score and our
/// score on `ring` at `alpha` (which must be on the table's grid).
pub fn surrogate_loss(alpha: f64, ring: usize, profile: &DistortionProfile, table: &NfScoreTable) -> Result<f64> {
    loss_at(table.alpha_index(alpha)?, ring, profile, table)
}

/// Loss at every grid α.
pub fn loss_curve(ring: usize, profile: &DistortionProfile, table: &NfScoreTable) -> Result<Vec<f64>> {
    (0..table.alphas.len()).map(|i| loss_at(i, ring, profile, table)).collect()
}

/// Grid argmin, ignoring NaN; ties go to the smaller α.
pub fn find_alpha_star(alphas: &[f64], losses: &[f64]) -> Result<(f64, f64)> {
    if alphas.len() != losses.len() {
        return Err(Error::shape(alphas.len(), losses.len()));
    }
    let mut order: Vec<usize> = (0..alphas.len()).collect();
    order.sort_by(|&a, &b| alphas[a].total_cmp(&alphas[b]));
    let mut best: Option<usize> = None;
    for i in order {
        if losses[i].is_nan() {
            continue;
        }
        if best.is_none_or(|b| losses[i] < losses[b]) {
            best = Some(i);
        }
    }
    best.map(|b| (alphas[b], losses[b])).ok_or(Error::AllNan)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalePermutation {
    pub scale: f64,
    pub fit: GammaFunction,
    /// `|d_s − d_ensemble|`.
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationReport {
    pub ensemble: GammaFunction,
    pub samples: usize,
    pub scales: Vec<ScalePermutation>,
}

/// Permutation test of scale independence: scale labels are shuffled across
/// all points, each group refitted, and p_s = #{T′_s ≥ T_s} / n.
pub fn permutation_test(per_scale: &[(f64, Vec<(f64, f64)>)], samples: usize, seed: u64, policy: ExecPolicy) -> Result<PermutationReport> {
    if per_scale.len() < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 scales, got {}", per_scale.len())));
    }
    if samples == 0 {
        return Err(Error::InvalidConfig("permutation count must be > 0".into()));
    }
    for (s, pts) in per_scale {
        if pts.len() < 2 {
            return Err(Error::InsufficientData(format!("scale {s} has {} points, need 2", pts.len())));
        }
    }
    let all: Vec<(f64, f64)> = per_scale.iter().flat_map(|(_, p)| p.iter().copied()).collect();
    let ensemble = fit_gamma(&all)?;
    let fits = per_scale.iter().map(|(_, p)| fit_gamma(p)).collect::<Result<Vec<_>>>()?;
    let observed: Vec<f64> = fits.iter().map(|f| (f.slope - ensemble.slope).abs()).collect();
    let sizes: Vec<usize> = per_scale.iter().map(|(_, p)| p.len()).collect();

    let exceed = policy.try_map(samples, |r| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, r as u64));
        let mut shuffled = all.clone();
        shuffled.shuffle(&mut rng);
        let mut start = 0;
        sizes
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                let group = &shuffled[start..start + n];
                start += n;
                let d = fit_gamma(group)?.slope;
                Ok((d - ensemble.slope).abs() >= observed[i])
            })
            .collect::<Result<Vec<bool>>>()
    })?;
    let scales = per_scale
        .iter()
        .zip(fits)
        .enumerate()
        .map(|(i, ((s, _), fit))| ScalePermutation {
            scale: *s,
            fit,
            statistic: observed[i],
            p_value: exceed.iter().filter(|e| e[i]).count() as f64 / samples as f64,
        })
        .collect();
    Ok(PermutationReport {
        ensemble,
        samples,
        scales,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaSearchConfig {
    pub grid_step: f64,
    pub permutations: usize,
    pub significance: f64,
    pub seed: u64,
}

impl Default for GammaSearchConfig {
    fn default() -> Self {
        GammaSearchConfig {
            grid_step: 1.0 / 20.0,
            permutations: 10_000,
            significance: 0.05,
            seed: 0,
        }
    }
}

/// Inputs of the search for one scale.
#[derive(Debug, Clone)]
pub struct ScaleData {
    pub profile: DistortionProfile,
    pub table: NfScoreTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RingAlpha {
    pub ring: usize,
    pub z: f64,
    pub alpha: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleReport {
    pub scale: f64,
    pub rings: Vec<RingAlpha>,
    pub fit: GammaFunction,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaSearchReport {
    pub metric: Metric,
    pub scales: Vec<ScaleReport>,
    pub ensemble: GammaFunction,
    pub scale_independent: bool,
    pub model: GammaModel,
}

impl GammaSearchReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Per-ring α* for one scale.
pub fn ring_alphas(data: &ScaleData) -> Result<Vec<RingAlpha>> {
    data.table
        .extents
        .iter()
        .map(|(&ring, &z)| {
            let losses = loss_curve(ring, &data.profile, &data.table)?;
            let (alpha, loss) = find_alpha_star(&data.table.alphas, &losses).map_err(|e| Error::Annotated {
                image: "*".into(),
                scale: data.table.scale,
                ring: Some(ring),
                source: Box::new(e),
            })?;
            Ok(RingAlpha { ring, z, alpha, loss })
        })
        .collect()
}

/// Least-squares line `y = a + b x`.
fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Degenerate("regression needs at least two distinct scales".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let b = sxy / sxx;
    Ok((my - b * mx, b))
}

/// α* per ring and scale, γ fits, the permutation test and the final model.
pub fn run_gamma_search(data: &[ScaleData], config: &GammaSearchConfig, policy: ExecPolicy) -> Result<GammaSearchReport> {
    if data.is_empty() {
        return Err(Error::InsufficientData("empty scale list".into()));
    }
    let metric = data[0].table.metric;
    let per_ring = policy.try_map(data.len(), |i| ring_alphas(&data[i]))?;
    let points: Vec<(f64, Vec<(f64, f64)>)> = data
        .iter()
        .zip(&per_ring)
        .map(|(d, rings)| (d.table.scale, rings.iter().map(|r| (r.z, r.alpha)).collect()))
        .collect();

    let (ensemble, fits, p_values) = if data.len() >= 2 {
        let perm = permutation_test(&points, config.permutations, config.seed, policy)?;
        let p = perm.scales.iter().map(|s| s.p_value).collect();
        let fits = perm.scales.into_iter().map(|s| s.fit).collect();
        (perm.ensemble, fits, p)
    } else {
        let fit = fit_gamma(&points[0].1)?;
        (fit.clone(), vec![fit], vec![1.0])
    };
    let scale_independent = p_values.iter().all(|&p: &f64| p >= config.significance);
    let model = if scale_independent {
        GammaModel::ScaleIndependent { gamma: ensemble.clone() }
    } else {
        let xs: Vec<f64> = points.iter().map(|(s, _)| *s).collect();
        let ys: Vec<f64> = fits.iter().map(|f: &GammaFunction| f.slope).collect();
        let (intercept, per_scale) = linear_fit(&xs, &ys)?;
        GammaModel::ScaleDependent { intercept, per_scale }
    };
    let scales = data
        .iter()
        .zip(per_ring)
        .zip(fits.into_iter().zip(p_values))
        .map(|((d, rings), (fit, p_value))| ScaleReport {
            scale: d.table.scale,
            rings,
            fit,
            p_value,
        })
        .collect();
    Ok(GammaSearchReport {
        metric,
        scales,
        ensemble,
        scale_independent,
        model,
    })
}

/// Profile whose score on each ring is the table's own score curve read at
/// `α = ring_alpha(ring, z)` (linear between grid points, clamped at the
/// ends); a closed-loop fixture with a known answer.
pub fn planted_profile(table: &NfScoreTable, ring_alpha: impl Fn(usize, f64) -> f64) -> Result<DistortionProfile> {
    let na = table.alphas.len();
    if na == 0 {
        return Err(Error::InsufficientData("empty alpha grid".into()));
    }
    let images = table
        .image_ids
        .iter()
        .enumerate()
        .map(|(j, id)| {
            let rings = table
                .extents
                .iter()
                .map(|(&ring, &z)| {
                    let a = ring_alpha(ring, z);
                    let at = |i: usize| {
                        table.scores[j][i]
                            .get(&ring)
                            .copied()
                            .ok_or(Error::MissingProfileEntry { ring })
                    };
                    let hi = table.alphas.iter().position(|&g| g >= a).unwrap_or(na);
                    let v = if hi == 0 {
                        at(0)?
                    } else if hi == na {
                        at(na - 1)?
                    } else {
                        let (a0, a1) = (table.alphas[hi - 1], table.alphas[hi]);
                        let t = (a - a0) / (a1 - a0);
                        (1.0 - t) * at(hi - 1)? + t * at(hi)?
                    };
                    Ok((ring, v.clamp(-1.0, 1.0)))
                })
                .collect::<Result<BTreeMap<_, _>>>()?;
            Ok(ImageProfile { id: id.clone(), rings })
        })
        .collect::<Result<Vec<_>>>()?;
    DistortionProfile::from_images(table.scale, table.metric, images)
}
