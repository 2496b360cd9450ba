//! Noise colouring, masked AdaIN and the foveated metamer transform.
//!
//! The target feature volume is
//! `T = Σ_i w_i [(1 − α_i) C + α_i S_i]`, where `C` encodes the image and
//! `S_i` is the encoded noise renormalized to the content's statistics under
//! window `w_i`. Because the windows sum to one, this equals
//! `C + Σ_i w_i α_i (S_i − C)`, which is how it is accumulated: regions with
//! `α_i = 0` contribute nothing and an all-zero field reproduces `C` exactly.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::exec::ExecPolicy;
use crate::features::{decode_with, encode, FeatureTensor, ImageBuffer, Refiner, WeightManifest};
use crate::geometry::{downsample_masks, MaskWindow, PoolingMasks};
use crate::optimization::GammaFunction;

/// Variances at or below this are treated as zero.
const VARIANCE_FLOOR: f64 = 1e-12;

/// Per-channel weighted mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// One distortion strength per pooling region; the fovea (index 0) is 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaField {
    values: Vec<f64>,
}

impl AlphaField {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidConfig("alpha field needs at least the fovea".into()));
        }
        if values[0] != 0.0 {
            return Err(Error::InvalidConfig(format!("foveal alpha must be 0, got {}", values[0])));
        }
        if let Some((i, a)) = values.iter().enumerate().find(|(_, a)| !(**a >= 0.0 && **a < 1.0)) {
            return Err(Error::InvalidConfig(format!("alpha[{i}] = {a} is outside [0, 1)")));
        }
        Ok(AlphaField { values })
    }

    pub fn zeros(regions: usize) -> Self {
        AlphaField {
            values: vec![0.0; regions.max(1)],
        }
    }

    /// The same α in every peripheral region.
    pub fn uniform(masks: &PoolingMasks, alpha: f64) -> Result<Self> {
        Self::new(
            masks
                .regions
                .iter()
                .map(|r| if r.is_fovea { 0.0 } else { alpha })
                .collect(),
        )
    }

    /// `α_i = γ(z_i)` from each region's radial extent.
    pub fn from_gamma(masks: &PoolingMasks, gamma: &GammaFunction) -> Result<Self> {
        Self::new(
            masks
                .regions
                .iter()
                .map(|r| if r.is_fovea { 0.0 } else { gamma.alpha(r.radial_extent) })
                .collect(),
        )
    }

    /// Per-ring α (indexed by ring number), applied to every region of the ring.
    pub fn from_rings(masks: &PoolingMasks, ring_alpha: impl Fn(usize) -> f64) -> Result<Self> {
        Self::new(
            masks
                .regions
                .iter()
                .map(|r| r.ring.map_or(0.0, &ring_alpha))
                .collect(),
        )
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Where the per-region α values come from.
#[derive(Debug, Clone, Copy)]
pub enum AlphaSource<'a> {
    Field(&'a AlphaField),
    Gamma(&'a GammaFunction),
}

/// Noise recoloured to the content's colour statistics.
#[derive(Debug, Clone)]
pub struct ColoredNoise {
    pub image: ImageBuffer,
    /// Values before clamping to `[0, 1]`, channel-major.
    pub unclamped: Vec<f64>,
    /// Channels that fell back to the content mean (zero variance).
    pub mean_only_channels: Vec<usize>,
}

fn channel_moments(data: &[f32], channels: usize, plane: usize) -> (Vec<f64>, DMatrix<f64>) {
    let mean: Vec<f64> = (0..channels)
        .map(|c| data[c * plane..(c + 1) * plane].iter().map(|&v| v as f64).sum::<f64>() / plane as f64)
        .collect();
    let mut cov = DMatrix::zeros(channels, channels);
    for a in 0..channels {
        for b in a..channels {
            let xa = &data[a * plane..(a + 1) * plane];
            let xb = &data[b * plane..(b + 1) * plane];
            let s: f64 = xa
                .iter()
                .zip(xb)
                .map(|(&u, &v)| (u as f64 - mean[a]) * (v as f64 - mean[b]))
                .sum();
            cov[(a, b)] = s / plane as f64;
            cov[(b, a)] = cov[(a, b)];
        }
    }
    (mean, cov)
}

/// Symmetric matrix power `M^p` via eigendecomposition, eigenvalues floored at 0.
fn sym_power(m: &DMatrix<f64>, p: f64) -> DMatrix<f64> {
    if m.is_empty() {
        return m.clone();
    }
    let eig = SymmetricEigen::new(m.clone());
    let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let floor = top * 1e-12;
    let d = eig.eigenvalues.map(|l| if l > floor { l.powf(p) } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// ZCA whitening of `noise` followed by recolouring with the content covariance.
pub fn color_noise(noise: &ImageBuffer, content: &ImageBuffer) -> Result<ColoredNoise> {
    if noise.shape() != content.shape() {
        return Err(Error::shape(format!("{:?}", content.shape()), format!("{:?}", noise.shape())));
    }
    let (channels, plane) = (content.channels, content.plane());
    if plane == 0 {
        return Err(Error::EmptyMask);
    }
    let (mu_c, cov_c) = channel_moments(&content.data, channels, plane);
    let (mu_n, cov_n) = channel_moments(&noise.data, channels, plane);

    let (active, mean_only): (Vec<usize>, Vec<usize>) =
        (0..channels).partition(|&c| cov_c[(c, c)] > VARIANCE_FLOOR && cov_n[(c, c)] > VARIANCE_FLOOR);
    let k = active.len();
    let sub = |m: &DMatrix<f64>| DMatrix::from_fn(k, k, |i, j| m[(active[i], active[j])]);
    let transform = sym_power(&sub(&cov_c), 0.5) * sym_power(&sub(&cov_n), -0.5);

    let mut unclamped = vec![0.0f64; channels * plane];
    for &c in &mean_only {
        unclamped[c * plane..(c + 1) * plane].fill(mu_c[c]);
    }
    let mut centred = vec![0.0f64; k];
    for p in 0..plane {
        for (i, &c) in active.iter().enumerate() {
            centred[i] = noise.data[c * plane + p] as f64 - mu_n[c];
        }
        for (i, &c) in active.iter().enumerate() {
            let v: f64 = (0..k).map(|j| transform[(i, j)] * centred[j]).sum();
            unclamped[c * plane + p] = v + mu_c[c];
        }
    }
    let mut image = ImageBuffer {
        channels,
        height: content.height,
        width: content.width,
        data: unclamped.iter().map(|&v| v as f32).collect(),
    };
    image.clamp_unit();
    Ok(ColoredNoise {
        image,
        unclamped,
        mean_only_channels: mean_only,
    })
}

fn check_window(features: &FeatureTensor, mask: &MaskWindow) -> Result<()> {
    if mask.x0 + mask.width > features.width || mask.y0 + mask.height > features.height {
        return Err(Error::shape(
            format!("mask inside {}x{}", features.height, features.width),
            format!("box at ({}, {}) of {}x{}", mask.x0, mask.y0, mask.width, mask.height),
        ));
    }
    if !(mask.mass() > 0.0) {
        return Err(Error::EmptyMask);
    }
    Ok(())
}

/// Weighted per-channel moments of `features` under `mask`.
pub fn compute_region_stats(features: &FeatureTensor, mask: &MaskWindow) -> Result<RegionStats> {
    check_window(features, mask)?;
    let total = mask.mass();
    let w = features.width;
    let mut mean = Vec::with_capacity(features.channels);
    let mut std = Vec::with_capacity(features.channels);
    for c in 0..features.channels {
        let plane = features.channel(c);
        let mut s = 0.0f64;
        for (x, y, m) in mask.iter() {
            s += m as f64 * plane[y * w + x] as f64;
        }
        let mu = s / total;
        let mut v = 0.0f64;
        for (x, y, m) in mask.iter() {
            let d = plane[y * w + x] as f64 - mu;
            v += m as f64 * d * d;
        }
        mean.push(mu);
        std.push((v / total).max(0.0).sqrt());
    }
    Ok(RegionStats { mean, std })
}

/// Renormalize `input` inside the window's bounding box; returns the box
/// values channel-major (`channels × height × width`). Entries outside the
/// support keep their input value.
fn adain_window(input: &FeatureTensor, target: &RegionStats, mask: &MaskWindow) -> Result<Vec<f32>> {
    let own = compute_region_stats(input, mask)?;
    if target.mean.len() != input.channels || target.std.len() != input.channels {
        return Err(Error::shape(input.channels, target.mean.len()));
    }
    let area = mask.width * mask.height;
    let mut out = vec![0.0f32; input.channels * area];
    for c in 0..input.channels {
        let plane = input.channel(c);
        let (mu, sigma) = (own.mean[c], own.std[c]);
        let constant = sigma * sigma <= VARIANCE_FLOOR;
        let gain = if constant { 0.0 } else { target.std[c] / sigma };
        let dst = &mut out[c * area..(c + 1) * area];
        for (i, (x, y, m)) in mask.iter().enumerate() {
            let v = plane[y * input.width + x];
            dst[i] = if m <= 0.0 {
                v
            } else if constant {
                target.mean[c] as f32
            } else {
                ((v as f64 - mu) * gain + target.mean[c]) as f32
            };
        }
    }
    Ok(out)
}

/// Masked adaptive instance normalization: inside the support of `mask`
/// each channel is mapped affinely so its weighted mean and σ equal
/// `target`; outside the support the input passes through.
pub fn adain(input: &FeatureTensor, target: &RegionStats, mask: &MaskWindow) -> Result<FeatureTensor> {
    let boxed = adain_window(input, target, mask)?;
    let mut out = input.clone();
    let area = mask.width * mask.height;
    for c in 0..input.channels {
        let plane = out.channel_mut(c);
        for row in 0..mask.height {
            let src = &boxed[c * area + row * mask.width..c * area + (row + 1) * mask.width];
            let start = (mask.y0 + row) * input.width + mask.x0;
            plane[start..start + mask.width].copy_from_slice(src);
        }
    }
    Ok(out)
}

/// `(1 − α)·content + α·stylized`, elementwise.
pub fn interpolate_target(content: &FeatureTensor, stylized: &FeatureTensor, alpha: f64) -> Result<FeatureTensor> {
    content.check_same_shape(stylized)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidConfig(format!("alpha {alpha} outside [0, 1]")));
    }
    let data = content
        .data
        .iter()
        .zip(&stylized.data)
        .map(|(&c, &s)| ((1.0 - alpha) * c as f64 + alpha * s as f64) as f32)
        .collect();
    Ok(FeatureTensor { data, ..content.clone() })
}

/// Encoder/decoder pair plus an optional refinement stage.
#[derive(Clone, Copy)]
pub struct Codec<'a> {
    pub encoder: &'a WeightManifest,
    pub decoder: &'a WeightManifest,
    pub refiner: Option<&'a dyn Refiner>,
}

impl<'a> Codec<'a> {
    pub fn new(encoder: &'a WeightManifest, decoder: &'a WeightManifest) -> Self {
        Codec {
            encoder,
            decoder,
            refiner: None,
        }
    }

    /// `I′ = D(E(I))`.
    pub fn round_trip(&self, image: &ImageBuffer, policy: ExecPolicy) -> Result<ImageBuffer> {
        let c = encode(image, self.encoder, policy)?;
        decode_with(&c, self.decoder, self.refiner, policy)
    }
}

/// Seeded standard-normal noise image of the given shape.
pub fn gaussian_noise(channels: usize, height: usize, width: usize, seed: u64) -> ImageBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..channels * height * width)
        .map(|_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v as f32
        })
        .collect();
    ImageBuffer {
        channels,
        height,
        width,
        data,
    }
}

/// Bring masks to the encoder's spatial resolution.
pub fn masks_for_features(masks: &PoolingMasks, features: &FeatureTensor) -> Result<PoolingMasks> {
    if features.height != features.width {
        return Err(Error::shape(
            "square feature map",
            format!("{}x{}", features.height, features.width),
        ));
    }
    if masks.size == features.width {
        return Ok(masks.clone());
    }
    if features.width == 0 || !masks.size.is_multiple_of(features.width) {
        return Err(Error::NonDivisibleFactor {
            size: masks.size,
            factor: masks.size.checked_div(features.width).unwrap_or(0),
        });
    }
    let down = downsample_masks(masks, masks.size / features.width)?;
    if down.size != features.width {
        return Err(Error::shape(features.width, down.size));
    }
    Ok(down)
}

/// Everything about one (image, seed, masks) triple that does not depend on α.
/// Rendering several α fields from the same preparation reuses the encodings.
pub struct PreparedMetamer {
    content: FeatureTensor,
    masks: PoolingMasks,
    /// Per region: `S_i − C` over the region's bounding box, channel-major.
    deltas: Vec<Vec<f32>>,
    pub mean_only_channels: Vec<usize>,
    pub seed: u64,
}

impl PreparedMetamer {
    pub fn new(image: &ImageBuffer, seed: u64, masks: &PoolingMasks, codec: &Codec, policy: ExecPolicy) -> Result<Self> {
        if masks.size != image.width || image.width != image.height {
            return Err(Error::shape(
                format!("{0}x{0} image for the masks", masks.size),
                format!("{}x{}", image.height, image.width),
            ));
        }
        let content = encode(image, codec.encoder, policy)?;
        let noise = gaussian_noise(image.channels, image.height, image.width, seed);
        let colored = color_noise(&noise, image)?;
        let noise_features = encode(&colored.image, codec.encoder, policy)?;
        let masks = masks_for_features(masks, &content)?;

        let deltas = policy.try_map::<_, Error, _>(masks.len(), |i| {
            let window = &masks.masks[i];
            if masks.regions[i].is_fovea || window.weights.is_empty() || !(window.mass() > 0.0) {
                return Ok(Vec::new());
            }
            let target = compute_region_stats(&content, window)?;
            let mut boxed = adain_window(&noise_features, &target, window)?;
            let area = window.width * window.height;
            for c in 0..content.channels {
                let plane = content.channel(c);
                for (i, (x, y, _)) in window.iter().enumerate() {
                    boxed[c * area + i] -= plane[y * content.width + x];
                }
            }
            Ok(boxed)
        })?;
        Ok(PreparedMetamer {
            content,
            masks,
            deltas,
            mean_only_channels: colored.mean_only_channels,
            seed,
        })
    }

    /// Masks at encoder resolution.
    pub fn masks(&self) -> &PoolingMasks {
        &self.masks
    }

    /// Target features `T` for the given α field.
    pub fn target(&self, alphas: &AlphaField) -> Result<FeatureTensor> {
        if alphas.len() != self.masks.len() {
            return Err(Error::shape(self.masks.len(), alphas.len()));
        }
        let mut t = self.content.clone();
        let (ch, w) = (t.channels, t.width);
        for (i, window) in self.masks.masks.iter().enumerate() {
            let a = alphas.values()[i];
            let delta = &self.deltas[i];
            if a == 0.0 || delta.is_empty() {
                continue;
            }
            let area = window.width * window.height;
            for c in 0..ch {
                let plane = t.channel_mut(c);
                for (k, (x, y, m)) in window.iter().enumerate() {
                    if m > 0.0 {
                        plane[y * w + x] += (m as f64 * a) as f32 * delta[c * area + k];
                    }
                }
            }
        }
        Ok(t)
    }

    pub fn render(&self, alphas: &AlphaField, codec: &Codec, policy: ExecPolicy) -> Result<ImageBuffer> {
        let t = self.target(alphas)?;
        decode_with(&t, codec.decoder, codec.refiner, policy)
    }
}

/// Provenance record written next to each metamer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetamerMetadata {
    pub seed: u64,
    pub scale: f64,
    pub image_size: usize,
    pub regions: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<GammaFunction>,
    pub max_alpha: f64,
    pub encoder: String,
    pub encoder_checksum: String,
    pub decoder: String,
    pub decoder_checksum: String,
    pub mean_only_channels: Vec<usize>,
    /// SHA-256 of the output pixels as little-endian f32.
    pub output_checksum: String,
}

#[derive(Debug, Clone)]
pub struct Metamer {
    pub image: ImageBuffer,
    pub metadata: MetamerMetadata,
}

pub fn image_checksum(image: &ImageBuffer) -> String {
    let mut h = Sha256::new();
    for v in &image.data {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Full transform: encode, stylize every region toward its own content
/// statistics, interpolate by α, decode once.
pub fn synthesize_metamer(
    image: &ImageBuffer,
    seed: u64,
    alphas: AlphaSource,
    masks: &PoolingMasks,
    codec: &Codec,
    policy: ExecPolicy,
) -> Result<Metamer> {
    let (field, gamma) = match alphas {
        AlphaSource::Field(f) => (f.clone(), None),
        AlphaSource::Gamma(g) => (AlphaField::from_gamma(masks, g)?, Some(g.clone())),
    };
    let prepared = PreparedMetamer::new(image, seed, masks, codec, policy)?;
    let out = prepared.render(&field, codec, policy)?;
    let metadata = MetamerMetadata {
        seed,
        scale: masks.config.scale,
        image_size: masks.size,
        regions: masks.len(),
        gamma,
        max_alpha: field.values().iter().cloned().fold(0.0, f64::max),
        encoder: codec.encoder.name.clone(),
        encoder_checksum: codec.encoder.checksum.clone(),
        decoder: codec.decoder.name.clone(),
        decoder_checksum: codec.decoder.checksum.clone(),
        mean_only_channels: prepared.mean_only_channels.clone(),
        output_checksum: image_checksum(&out),
    };
    Ok(Metamer { image: out, metadata })
}
