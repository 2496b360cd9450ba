//! Log-polar pooling regions tiling the visual field.
//!
//! Each peripheral window is the product of an angular profile `h_n(θ)` and a
//! log-eccentricity profile `g_n(e)`, both built from the raised-cosine step
//! [`smooth_step`]. Adjacent windows overlap so that the weights sum to one
//! everywhere; a single foveal mask takes up whatever the peripheral windows
//! leave, plus every window too small to pool over.
//!
//! Ring and wedge counts follow from the scale `s`:
//!
//! * `N_θ = round(4π / s)`: the angular half-height width of a wedge is half
//!   the radial one (2:1 radial-to-angular aspect), so `w_θ ≈ s / 2`.
//! * `N_e = round(ln(e_r / e_0) / w)` with `w = 2 asinh(s / 2)`: the ring's
//!   full width at half height in degrees, divided by the eccentricity of its
//!   centre, equals `s`.

use std::f64::consts::PI;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::exec::ExecPolicy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolingConfig {
    /// Rate of receptive-field growth with eccentricity.
    pub scale: f64,
    /// Outer eccentricity of the tiled field, degrees.
    pub visual_radius: f64,
    /// Inner eccentricity `e_0`, degrees.
    pub inner_eccentricity: f64,
    /// Width of the cosine transition between neighbouring windows, in `(0, 1]`.
    pub transition: f64,
    /// Side of the square image, pixels.
    pub image_size: usize,
    /// Degrees of visual angle spanned by the full image width.
    pub degrees_per_image: f64,
    /// Radius of the foveal disk, degrees. Windows whose support lies entirely
    /// inside it are merged into the fovea.
    pub fovea_radius: f64,
    /// Windows whose total weight (in pixels) falls below this join the fovea.
    pub min_region_area: f64,
}

impl Default for PoolingConfig {
    fn default() -> Self {
        PoolingConfig {
            scale: 0.5,
            visual_radius: 26.0,
            inner_eccentricity: 0.25,
            transition: 0.5,
            image_size: 512,
            degrees_per_image: 26.0,
            fovea_radius: 0.0,
            min_region_area: 100.0,
        }
    }
}

impl PoolingConfig {
    pub fn with_scale(scale: f64) -> Self {
        PoolingConfig {
            scale,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.scale,
            self.visual_radius,
            self.inner_eccentricity,
            self.transition,
            self.degrees_per_image,
            self.fovea_radius,
            self.min_region_area,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("pooling config"));
        }
        if self.scale <= 0.0 {
            return Err(Error::InvalidConfig(format!("scale must be > 0, got {}", self.scale)));
        }
        if !(self.inner_eccentricity > 0.0 && self.inner_eccentricity < self.visual_radius) {
            return Err(Error::InvalidConfig(format!(
                "need 0 < inner_eccentricity < visual_radius, got {} and {}",
                self.inner_eccentricity, self.visual_radius
            )));
        }
        if !(self.transition > 0.0 && self.transition <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "transition must lie in (0, 1], got {}",
                self.transition
            )));
        }
        if self.image_size == 0 {
            return Err(Error::InvalidConfig("image_size must be > 0".into()));
        }
        if self.degrees_per_image <= 0.0 {
            return Err(Error::InvalidConfig("degrees_per_image must be > 0".into()));
        }
        if self.fovea_radius < 0.0 {
            return Err(Error::InvalidConfig("fovea_radius must be >= 0".into()));
        }
        if self.min_region_area < 0.0 {
            return Err(Error::InvalidConfig("min_region_area must be >= 0".into()));
        }
        Ok(())
    }

    fn log_span(&self) -> f64 {
        (self.visual_radius / self.inner_eccentricity).ln()
    }

    /// Number of eccentricity rings `N_e`.
    pub fn ring_count(&self) -> Result<usize> {
        let width = 2.0 * (self.scale / 2.0).asinh();
        let n = (self.log_span() / width).round();
        if !(n >= 1.0) {
            return Err(Error::DerivedCount {
                name: "N_e",
                value: if n.is_finite() { n as i64 } else { 0 },
            });
        }
        Ok(n as usize)
    }

    /// Number of angular wedges `N_θ`.
    pub fn angle_count(&self) -> Result<usize> {
        let n = (4.0 * PI / self.scale).round();
        if !(n >= 1.0) {
            return Err(Error::DerivedCount {
                name: "N_theta",
                value: if n.is_finite() { n as i64 } else { 0 },
            });
        }
        Ok(n as usize)
    }

    /// Log-eccentricity width `w_e` of one ring.
    pub fn ring_width(&self) -> Result<f64> {
        Ok(self.log_span() / self.ring_count()? as f64)
    }

    /// Angular width `w_θ` of one wedge, radians.
    pub fn angle_width(&self) -> Result<f64> {
        Ok(2.0 * PI / self.angle_count()? as f64)
    }

    /// Eccentricity (degrees) at the centre of ring `n`.
    pub fn ring_center(&self, n: usize) -> Result<f64> {
        Ok(self.inner_eccentricity * (self.ring_width()? * (n as f64 + 1.0)).exp())
    }

    /// Half of the ring's full width at half height, degrees.
    pub fn radial_extent(&self, n: usize) -> Result<f64> {
        let w = self.ring_width()?;
        Ok(self.ring_center(n)? * (w / 2.0).sinh())
    }

    /// Content hash used as the mask-cache key.
    pub fn cache_key(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        hex::encode(&digest[..12])
    }
}

/// Raised-cosine step: rises over `(-(1+t)/2, (t-1)/2]`, is flat on
/// `((t-1)/2, (1-t)/2]`, falls over `((1-t)/2, (1+t)/2]`, zero elsewhere.
pub fn smooth_step(x: f64, transition: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::NonFinite("smooth_step input"));
    }
    if !(transition > 0.0 && transition <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "transition must lie in (0, 1], got {transition}"
        )));
    }
    Ok(step_unchecked(x, transition))
}

#[inline]
fn step_unchecked(x: f64, t: f64) -> f64 {
    let outer = (1.0 + t) / 2.0;
    let inner = (1.0 - t) / 2.0;
    if x <= -outer || x > outer {
        0.0
    } else if x <= -inner {
        (PI / 2.0 * (x + inner) / t).cos().powi(2)
    } else if x <= inner {
        1.0
    } else {
        1.0 - (PI / 2.0 * (x - outer) / t).cos().powi(2)
    }
}

/// Dense weights over an axis-aligned bounding box; zero outside it.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskWindow {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
    pub weights: Vec<f32>,
}

impl MaskWindow {
    pub fn empty() -> Self {
        MaskWindow {
            x0: 0,
            y0: 0,
            width: 0,
            height: 0,
            weights: Vec::new(),
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        if x < self.x0 || y < self.y0 || x >= self.x0 + self.width || y >= self.y0 + self.height {
            return 0.0;
        }
        self.weights[(y - self.y0) * self.width + (x - self.x0)]
    }

    /// Iterate `(x, y, w)` over the bounding box (including zero entries).
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f32)> + '_ {
        self.weights.iter().enumerate().map(move |(i, &w)| {
            (self.x0 + i % self.width.max(1), self.y0 + i / self.width.max(1), w)
        })
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().map(|&w| w as f64).sum()
    }

    pub fn support_area(&self) -> usize {
        self.weights.iter().filter(|&&w| w > 0.0).count()
    }

    pub fn to_dense(&self, size: usize) -> Vec<f32> {
        let mut out = vec![0.0; size * size];
        for (x, y, w) in self.iter() {
            out[y * size + x] = w;
        }
        out
    }

    /// Window from a dense row-major map of the given width, cropped to the
    /// bounding box of its nonzero entries.
    pub fn from_dense(weights: &[f32], width: usize) -> Self {
        let entries: Vec<(usize, usize, f32)> = weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w != 0.0)
            .map(|(i, &w)| (i % width, i / width, w))
            .collect();
        Self::from_xy(&entries)
    }

    fn from_entries(entries: &[(usize, f32)], size: usize) -> Self {
        let xy: Vec<(usize, usize, f32)> = entries.iter().map(|&(p, w)| (p % size, p / size, w)).collect();
        Self::from_xy(&xy)
    }

    fn from_xy(entries: &[(usize, usize, f32)]) -> Self {
        if entries.is_empty() {
            return MaskWindow::empty();
        }
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for &(x, y, _) in entries {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        let (width, height) = (x1 - x0 + 1, y1 - y0 + 1);
        let mut weights = vec![0.0; width * height];
        for &(x, y, w) in entries {
            weights[(y - y0) * width + (x - x0)] += w;
        }
        MaskWindow {
            x0,
            y0,
            width,
            height,
            weights,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionInfo {
    pub id: usize,
    /// Eccentricity ring `n_e`; `None` for the fovea.
    pub ring: Option<usize>,
    /// Angular index `n_θ`; `None` for the fovea.
    pub angle: Option<usize>,
    pub is_fovea: bool,
    /// Radial extent `z` in degrees (0 for the fovea).
    pub radial_extent: f64,
    /// Eccentricity of the ring centre in degrees (0 for the fovea).
    pub center_eccentricity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Resolution {
    Image,
    Encoder { factor: usize },
}

/// The `k` spatial-control windows covering one square image.
///
/// Index 0 is always the fovea. Masks are immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolingMasks {
    pub config: PoolingConfig,
    pub size: usize,
    pub resolution: Resolution,
    pub masks: Vec<MaskWindow>,
    pub regions: Vec<RegionInfo>,
}

impl PoolingMasks {
    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn fovea_index(&self) -> usize {
        0
    }

    pub fn peripheral_count(&self) -> usize {
        self.regions.iter().filter(|r| !r.is_fovea).count()
    }

    /// Distinct ring indices present among peripheral masks, ascending.
    pub fn rings(&self) -> Vec<usize> {
        let mut rings: Vec<usize> = self.regions.iter().filter_map(|r| r.ring).collect();
        rings.sort_unstable();
        rings.dedup();
        rings
    }

    pub fn ring_extent(&self, ring: usize) -> Option<f64> {
        self.regions
            .iter()
            .find(|r| r.ring == Some(ring))
            .map(|r| r.radial_extent)
    }

    pub fn sum_at(&self, x: usize, y: usize) -> f64 {
        self.masks.iter().map(|m| m.get(x, y) as f64).sum()
    }

    /// Largest deviation of the per-pixel weight sum from one.
    pub fn partition_error(&self) -> f64 {
        let mut sums = vec![0.0f64; self.size * self.size];
        for m in &self.masks {
            for (x, y, w) in m.iter() {
                sums[y * self.size + x] += w as f64;
            }
        }
        sums.iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max)
    }

    /// Single mask covering the whole grid, for global pooling.
    pub fn uniform(size: usize) -> Self {
        PoolingMasks {
            config: PoolingConfig {
                image_size: size,
                ..Default::default()
            },
            size,
            resolution: Resolution::Image,
            masks: vec![MaskWindow {
                x0: 0,
                y0: 0,
                width: size,
                height: size,
                weights: vec![1.0; size * size],
            }],
            regions: vec![RegionInfo {
                id: 0,
                ring: None,
                angle: None,
                is_fovea: true,
                radial_extent: 0.0,
                center_eccentricity: 0.0,
            }],
        }
    }
}

/// Build the fovea plus the log-polar windows for one configuration.
pub fn build_pooling_masks(config: &PoolingConfig) -> Result<PoolingMasks> {
    config.validate()?;
    let n_rings = config.ring_count()?;
    let n_angles = config.angle_count()?;
    let w_e = config.ring_width()?;
    let w_t = config.angle_width()?;
    let t0 = config.transition;
    let half = (1.0 + t0) / 2.0;
    let size = config.image_size;
    let deg_per_px = config.degrees_per_image / size as f64;
    let log_e0 = config.inner_eccentricity.ln();

    // (ring, angle) -> sparse (pixel, weight) entries
    let mut entries: Vec<Vec<(usize, f32)>> = vec![Vec::new(); n_rings * n_angles];
    for py in 0..size {
        let y = -((py as f64 + 0.5) - size as f64 / 2.0) * deg_per_px;
        for px in 0..size {
            let x = ((px as f64 + 0.5) - size as f64 / 2.0) * deg_per_px;
            let ecc = x.hypot(y).min(config.visual_radius);
            if ecc <= 0.0 {
                continue;
            }
            let u = (ecc.ln() - log_e0) / w_e - 1.0;
            let mut theta = y.atan2(x);
            if theta < 0.0 {
                theta += 2.0 * PI;
            }
            let v = theta / w_t - (1.0 - t0) / 2.0;
            let n_lo = (u - half).ceil().max(0.0) as i64;
            let n_hi = ((u + half).floor() as i64).min(n_rings as i64 - 1);
            for n in n_lo..=n_hi {
                let g = step_unchecked(u - n as f64, t0);
                if g <= 0.0 {
                    continue;
                }
                let m_lo = (v - half).ceil() as i64;
                let m_hi = (v + half).floor() as i64;
                for m in m_lo..=m_hi {
                    let h = step_unchecked(v - m as f64, t0);
                    if h <= 0.0 {
                        continue;
                    }
                    let m_wrapped = m.rem_euclid(n_angles as i64) as usize;
                    let w = (g * h) as f32;
                    if w > 0.0 {
                        entries[n as usize * n_angles + m_wrapped].push((py * size + px, w));
                    }
                }
            }
        }
    }

    let mut masks = vec![MaskWindow::empty()];
    let mut regions = vec![RegionInfo {
        id: 0,
        ring: None,
        angle: None,
        is_fovea: true,
        radial_extent: 0.0,
        center_eccentricity: 0.0,
    }];
    let mut peripheral_sum = vec![0.0f64; size * size];
    for n in 0..n_rings {
        let center = config.ring_center(n)?;
        let outer_edge = center * (half * w_e).exp();
        let z = config.radial_extent(n)?;
        for m in 0..n_angles {
            let list = &entries[n * n_angles + m];
            let mass: f64 = list.iter().map(|&(_, w)| w as f64).sum();
            if mass < config.min_region_area.max(f64::MIN_POSITIVE)
                || outer_edge <= config.fovea_radius
            {
                continue;
            }
            for &(p, w) in list {
                peripheral_sum[p] += w as f64;
            }
            regions.push(RegionInfo {
                id: regions.len(),
                ring: Some(n),
                angle: Some(m),
                is_fovea: false,
                radial_extent: z,
                center_eccentricity: center,
            });
            masks.push(MaskWindow::from_entries(list, size));
        }
    }

    let fovea: Vec<(usize, f32)> = peripheral_sum
        .iter()
        .enumerate()
        .filter_map(|(p, &s)| {
            let w = (1.0 - s).max(0.0);
            (w > 0.0).then_some((p, w as f32))
        })
        .collect();
    masks[0] = MaskWindow::from_entries(&fovea, size);

    Ok(PoolingMasks {
        config: config.clone(),
        size,
        resolution: Resolution::Image,
        masks,
        regions,
    })
}

/// Build masks for several configurations, one per worker.
pub fn build_many(configs: &[PoolingConfig], policy: ExecPolicy) -> Result<Vec<PoolingMasks>> {
    policy.try_map(configs.len(), |i| build_pooling_masks(&configs[i]))
}

/// Block-mean downsampling by an integer factor.
pub fn downsample_masks(masks: &PoolingMasks, factor: usize) -> Result<PoolingMasks> {
    if factor == 0 || !masks.size.is_multiple_of(factor) {
        return Err(Error::NonDivisibleFactor {
            size: masks.size,
            factor,
        });
    }
    if factor == 1 {
        return Ok(masks.clone());
    }
    let out_size = masks.size / factor;
    let norm = 1.0 / (factor * factor) as f64;
    let windows = masks
        .masks
        .iter()
        .map(|m| {
            if m.weights.is_empty() {
                return MaskWindow::empty();
            }
            let bx0 = m.x0 / factor;
            let by0 = m.y0 / factor;
            let bx1 = (m.x0 + m.width - 1) / factor;
            let by1 = (m.y0 + m.height - 1) / factor;
            let (width, height) = (bx1 - bx0 + 1, by1 - by0 + 1);
            let mut acc = vec![0.0f64; width * height];
            for (x, y, w) in m.iter() {
                acc[(y / factor - by0) * width + (x / factor - bx0)] += w as f64;
            }
            MaskWindow {
                x0: bx0,
                y0: by0,
                width,
                height,
                weights: acc.into_iter().map(|a| (a * norm) as f32).collect(),
            }
        })
        .collect();
    let factor_total = match masks.resolution {
        Resolution::Image => factor,
        Resolution::Encoder { factor: f } => f * factor,
    };
    Ok(PoolingMasks {
        config: masks.config.clone(),
        size: out_size,
        resolution: Resolution::Encoder {
            factor: factor_total,
        },
        masks: windows,
        regions: masks.regions.clone(),
    })
}

const CACHE_MAGIC: &[u8; 8] = b"FVMASK01";

#[derive(Serialize, Deserialize)]
struct CacheHeader {
    config: PoolingConfig,
    size: usize,
    resolution: Resolution,
    regions: Vec<RegionInfo>,
    /// (x0, y0, width, height) per mask, in region order.
    windows: Vec<[usize; 4]>,
}

/// Serialize masks: magic, u64 LE header length, JSON header, then each
/// window's weights as row-major little-endian f32.
pub fn write_mask_file(masks: &PoolingMasks, path: &Path) -> Result<()> {
    let header = CacheHeader {
        config: masks.config.clone(),
        size: masks.size,
        resolution: masks.resolution,
        regions: masks.regions.clone(),
        windows: masks
            .masks
            .iter()
            .map(|m| [m.x0, m.y0, m.width, m.height])
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(16 + json.len());
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for m in &masks.masks {
        for w in &m.weights {
            buf.extend_from_slice(&w.to_le_bytes());
        }
    }
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&buf).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_mask_file(path: &Path) -> Result<PoolingMasks> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..8] != CACHE_MAGIC {
        return Err(Error::Format(format!("{}: not a mask file", path.display())));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if body.len() < len {
        return Err(Error::Format("mask file header truncated".into()));
    }
    let header: CacheHeader = serde_json::from_slice(&body[..len])?;
    let mut rest = &body[len..];
    let mut masks = Vec::with_capacity(header.windows.len());
    for [x0, y0, width, height] in header.windows {
        let n = width * height;
        if rest.len() < n * 4 {
            return Err(Error::Format("mask file weights truncated".into()));
        }
        let weights = rest[..n * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        rest = &rest[n * 4..];
        masks.push(MaskWindow {
            x0,
            y0,
            width,
            height,
            weights,
        });
    }
    if !rest.is_empty() {
        return Err(Error::Format("trailing bytes after mask weights".into()));
    }
    Ok(PoolingMasks {
        config: header.config,
        size: header.size,
        resolution: header.resolution,
        masks,
        regions: header.regions,
    })
}

/// Directory of mask files keyed by [`PoolingConfig::cache_key`].
#[derive(Debug, Clone)]
pub struct MaskCache {
    dir: PathBuf,
}

impl MaskCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        MaskCache { dir: dir.into() }
    }

    pub fn path_for(&self, config: &PoolingConfig) -> PathBuf {
        self.dir.join(format!("{}.fvmask", config.cache_key()))
    }

    pub fn load_or_build(&self, config: &PoolingConfig) -> Result<PoolingMasks> {
        let path = self.path_for(config);
        if path.exists() {
            let masks = read_mask_file(&path)?;
            if &masks.config == config {
                return Ok(masks);
            }
        }
        let masks = build_pooling_masks(config)?;
        fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        write_mask_file(&masks, &path)?;
        Ok(masks)
    }
}
