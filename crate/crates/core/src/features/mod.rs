//! Fully convolutional encoder/decoder forward passes.
//!
//! Networks are described by a [`WeightManifest`]: an ordered layer list plus
//! one raw little-endian `f32` blob per convolution weight and bias. Any
//! architecture expressible with convolutions, pointwise nonlinearities, max
//! pooling, nearest upsampling and reflection padding can be ingested; nothing
//! about VGG is hardcoded beyond the [`manifest::vgg19_relu4_1_layers`]
//! layout helper.

pub mod image_io;
pub mod manifest;
mod network;
pub mod toy;

pub use manifest::{Activation, LayerKind, LayerSpec, ShapeSpec, WeightManifest, load_weights};
pub use network::{conv2d, decode, decode_with, encode, forward, Refiner};

use crate::error::{Error, Result};

/// Channel-major activation volume `C′×H′×W′`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl FeatureTensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        FeatureTensor {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::shape(
                format!("{channels}x{height}x{width} = {}", channels * height * width),
                data.len(),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature tensor"));
        }
        Ok(FeatureTensor {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let p = self.plane();
        &self.data[c * p..(c + 1) * p]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let p = self.plane();
        &mut self.data[c * p..(c + 1) * p]
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub(crate) fn check_same_shape(&self, other: &FeatureTensor) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        Ok(())
    }
}

/// Image with channel-major layout and values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl ImageBuffer {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        ImageBuffer {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::shape(
                format!("{channels}x{height}x{width} = {}", channels * height * width),
                data.len(),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image"));
        }
        Ok(ImageBuffer {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        f: impl Fn(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        ImageBuffer {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let p = self.plane();
        &self.data[c * p..(c + 1) * p]
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn as_features(&self) -> FeatureTensor {
        FeatureTensor {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.clone(),
        }
    }

    /// Take a feature volume as an image, clamping to `[0, 1]`.
    pub fn from_features(t: FeatureTensor) -> Self {
        let mut img = ImageBuffer {
            channels: t.channels,
            height: t.height,
            width: t.width,
            data: t.data,
        };
        img.clamp_unit();
        img
    }

    /// Rec. 601 luma for 3-channel images; the single channel otherwise.
    pub fn luma(&self) -> Vec<f64> {
        let p = self.plane();
        match self.channels {
            3 => (0..p)
                .map(|i| {
                    0.299 * self.data[i] as f64
                        + 0.587 * self.data[p + i] as f64
                        + 0.114 * self.data[2 * p + i] as f64
                })
                .collect(),
            _ => self.data[..p].iter().map(|&v| v as f64).collect(),
        }
    }
}
