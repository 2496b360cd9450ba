//! Small networks for weight-free runs and tests.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::manifest::{Activation, ConvParams, LayerKind, LayerSpec, ShapeSpec, WeightManifest};
use super::ImageBuffer;
use crate::error::Result;

fn conv(name: &str, c_in: usize, c_out: usize, k: usize, stride: usize, padding: usize, bias: bool) -> LayerSpec {
    LayerSpec::new(
        name,
        LayerKind::Conv {
            in_channels: c_in,
            out_channels: c_out,
            kernel: [k, k],
            stride,
            padding,
            weights: format!("{name}.w"),
            bias: bias.then(|| format!("{name}.b")),
            activation: None,
        },
    )
}

/// Random 3×3 convolution (`filters` outputs, zero padded) followed by ReLU.
pub fn random_conv_encoder(filters: usize, zero_bias: bool, seed: u64) -> Result<WeightManifest> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = (2.0 / 27.0f32).sqrt();
    let weights = (0..filters * 27).map(|_| rng.random_range(-scale..scale)).collect();
    let bias = if zero_bias {
        vec![0.0; filters]
    } else {
        (0..filters).map(|_| rng.random_range(-0.1..0.1)).collect()
    };
    WeightManifest::from_parts(
        "toy-conv",
        ShapeSpec::channels(3),
        ShapeSpec::channels(filters),
        vec![
            conv("conv1", 3, filters, 3, 1, 1, true),
            LayerSpec::new(
                "relu1",
                LayerKind::Activation {
                    function: Activation::Relu,
                },
            ),
        ],
        vec![
            Some(ConvParams {
                weights,
                bias: Some(bias),
            }),
            None,
        ],
    )
}

/// Linear 1×1 encoder with orthonormal columns and its transpose as decoder,
/// so decoding inverts encoding exactly (up to rounding and clamping).
pub fn orthonormal_codec(in_channels: usize, feature_channels: usize, seed: u64) -> Result<(WeightManifest, WeightManifest)> {
    assert!(feature_channels >= in_channels, "need at least as many features as inputs");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::<f64>::from_fn(feature_channels, in_channels, |_, _| rng.random_range(-1.0..1.0));
    let q = a.qr().q();
    // q is feature_channels × in_channels with orthonormal columns
    let enc_w: Vec<f32> = (0..feature_channels)
        .flat_map(|r| (0..in_channels).map(move |c| (r, c)))
        .map(|(r, c)| q[(r, c)] as f32)
        .collect();
    let dec_w: Vec<f32> = (0..in_channels)
        .flat_map(|r| (0..feature_channels).map(move |c| (r, c)))
        .map(|(r, c)| q[(c, r)] as f32)
        .collect();
    let enc = WeightManifest::from_parts(
        "toy-orthonormal-encoder",
        ShapeSpec::channels(in_channels),
        ShapeSpec::channels(feature_channels),
        vec![conv("enc", in_channels, feature_channels, 1, 1, 0, false)],
        vec![Some(ConvParams {
            weights: enc_w,
            bias: None,
        })],
    )?;
    let dec = WeightManifest::from_parts(
        "toy-orthonormal-decoder",
        ShapeSpec::channels(feature_channels),
        ShapeSpec::channels(in_channels),
        vec![conv("dec", feature_channels, in_channels, 1, 1, 0, false)],
        vec![Some(ConvParams {
            weights: dec_w,
            bias: None,
        })],
    )?;
    Ok((enc, dec))
}

/// Block-average encoder (stride `factor`) and nearest-upsampling decoder.
/// Exercises encoder-resolution pooling without any learned weights.
pub fn block_codec(channels: usize, factor: usize) -> Result<(WeightManifest, WeightManifest)> {
    let taps = factor * factor;
    let mut enc_w = vec![0.0f32; channels * channels * taps];
    let mut dec_w = vec![0.0f32; channels * channels];
    for c in 0..channels {
        for t in 0..taps {
            enc_w[(c * channels + c) * taps + t] = 1.0 / taps as f32;
        }
        dec_w[c * channels + c] = 1.0;
    }
    let enc = WeightManifest::from_parts(
        "toy-block-encoder",
        ShapeSpec::channels(channels),
        ShapeSpec::channels(channels),
        vec![conv("pool", channels, channels, factor, factor, 0, false)],
        vec![Some(ConvParams {
            weights: enc_w,
            bias: None,
        })],
    )?;
    let dec = WeightManifest::from_parts(
        "toy-block-decoder",
        ShapeSpec::channels(channels),
        ShapeSpec::channels(channels),
        vec![
            LayerSpec::new("up", LayerKind::Upsample { factor }),
            conv("mix", channels, channels, 1, 1, 0, false),
        ],
        vec![
            None,
            Some(ConvParams {
                weights: dec_w,
                bias: None,
            }),
        ],
    )?;
    Ok((enc, dec))
}

/// He-initialized weights (zero bias) for every convolution in `layers`.
pub fn random_weights(
    name: &str,
    input: ShapeSpec,
    output: ShapeSpec,
    layers: Vec<LayerSpec>,
    seed: u64,
) -> Result<WeightManifest> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = layers
        .iter()
        .map(|l| match &l.kind {
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel,
                bias,
                ..
            } => {
                let fan_in = in_channels * kernel[0] * kernel[1];
                let bound = (6.0 / fan_in as f32).sqrt();
                Some(ConvParams {
                    weights: (0..fan_in * out_channels).map(|_| rng.random_range(-bound..bound)).collect(),
                    bias: bias.as_ref().map(|_| vec![0.0; *out_channels]),
                })
            }
            _ => None,
        })
        .collect();
    WeightManifest::from_parts(name, input, output, layers, params)
}

/// Seeded texture: a sum of oriented sinusoids with `1/f` amplitudes, shared
/// across channels with per-channel gains, rescaled into `[0, 1]`.
pub fn procedural_image(channels: usize, size: usize, seed: u64) -> ImageBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<(f32, f32, f32, f32, Vec<f32>)> = (0..48)
        .map(|_| {
            let freq = 2f32.powf(rng.random_range(0.0..6.0f32)) / size as f32;
            let theta = rng.random_range(0.0..std::f32::consts::TAU);
            let phase = rng.random_range(0.0..std::f32::consts::TAU);
            let gains = (0..channels).map(|_| rng.random_range(0.3..1.0f32)).collect();
            (freq * theta.cos(), freq * theta.sin(), phase, 1.0 / (freq * size as f32).sqrt(), gains)
        })
        .collect();
    let mut img = ImageBuffer::from_fn(channels, size, size, |c, y, x| {
        waves
            .iter()
            .map(|(fx, fy, ph, amp, gains)| {
                amp * gains[c] * (std::f32::consts::TAU * (fx * x as f32 + fy * y as f32) + ph).sin()
            })
            .sum()
    });
    let (lo, hi) = img
        .data
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let range = (hi - lo).max(1e-6);
    img.data.iter_mut().for_each(|v| *v = 0.05 + 0.9 * (*v - lo) / range);
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::ExecPolicy;
    use crate::features::{decode, encode, FeatureTensor, ImageBuffer};

    fn test_image(h: usize, w: usize) -> ImageBuffer {
        ImageBuffer::from_fn(3, h, w, |c, y, x| ((c * 31 + y * 7 + x * 13) % 97) as f32 / 96.0)
    }

    #[test]
    fn random_conv_keeps_spatial_size() {
        let net = random_conv_encoder(16, false, 3).unwrap();
        let f = encode(&test_image(12, 10), &net, ExecPolicy::Parallel).unwrap();
        assert_eq!(f.shape(), (16, 12, 10));
    }

    #[test]
    fn zero_image_zero_features() {
        let net = random_conv_encoder(16, true, 3).unwrap();
        let f = encode(&ImageBuffer::new(3, 8, 8), &net, ExecPolicy::Parallel).unwrap();
        assert!(f.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encoding_is_deterministic() {
        let net = random_conv_encoder(16, false, 9).unwrap();
        let img = test_image(9, 9);
        let a = encode(&img, &net, ExecPolicy::Parallel).unwrap();
        let b = encode(&img, &net, ExecPolicy::Sequential).unwrap();
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn orthonormal_round_trip() {
        let (enc, dec) = orthonormal_codec(3, 8, 1).unwrap();
        let img = test_image(16, 16);
        let back = decode(&encode(&img, &enc, ExecPolicy::Parallel).unwrap(), &dec, ExecPolicy::Parallel).unwrap();
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a - b).abs() <= 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_features_decode_to_zero() {
        let (_, dec) = orthonormal_codec(3, 8, 1).unwrap();
        let img = decode(&FeatureTensor::zeros(8, 4, 4), &dec, ExecPolicy::Parallel).unwrap();
        assert!(img.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn procedural_images_are_seeded_and_in_range() {
        let a = procedural_image(3, 32, 4);
        assert_eq!(a, procedural_image(3, 32, 4));
        assert_ne!(a, procedural_image(3, 32, 5));
        assert!(a.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn block_codec_downsamples_by_factor() {
        let (enc, dec) = block_codec(3, 8).unwrap();
        let f = encode(&test_image(64, 64), &enc, ExecPolicy::Parallel).unwrap();
        assert_eq!(f.shape(), (3, 8, 8));
        assert_eq!(decode(&f, &dec, ExecPolicy::Parallel).unwrap().shape(), (3, 64, 64));
    }
}
