//! On-disk network description.
//!
//! A weight directory holds `manifest.json` and one raw blob per convolution
//! weight/bias. Kernels are stored `(out, in, ky, kx)` row-major as
//! little-endian `f32`. The manifest `checksum` is the SHA-256 of all blobs
//! concatenated in layer order (weights before bias).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub channels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
}

impl ShapeSpec {
    pub fn channels(channels: usize) -> Self {
        ShapeSpec {
            channels,
            height: None,
            width: None,
        }
    }

    pub fn fixed(channels: usize, height: usize, width: usize) -> Self {
        ShapeSpec {
            channels,
            height: Some(height),
            width: Some(width),
        }
    }

    /// Whether a concrete `(c, h, w)` satisfies this (possibly partial) spec.
    pub fn accepts(&self, (c, h, w): (usize, usize, usize)) -> bool {
        c == self.channels && self.height.is_none_or(|x| x == h) && self.width.is_none_or(|x| x == w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f32) -> f32 {
        match self {
            Activation::Identity => v,
            Activation::Relu => v.max(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 2],
        #[serde(default = "one")]
        stride: usize,
        /// Zero padding on every side.
        #[serde(default)]
        padding: usize,
        weights: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bias: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        activation: Option<Activation>,
    },
    Activation {
        function: Activation,
    },
    MaxPool {
        size: usize,
        stride: usize,
    },
    Upsample {
        factor: usize,
    },
    ReflectionPad {
        pad: usize,
    },
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
    /// Declared output shape; checked against the computed one when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<ShapeSpec>,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        LayerSpec {
            name: name.into(),
            kind,
            output: None,
        }
    }

    /// Output `(c, h, w)` for a given input, or a description of what is wrong.
    pub fn output_shape(&self, (c, h, w): (usize, usize, usize)) -> std::result::Result<(usize, usize, usize), String> {
        match &self.kind {
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                ..
            } => {
                if c != *in_channels {
                    return Err(format!("expects {in_channels} input channels, receives {c}"));
                }
                if *stride == 0 {
                    return Err("stride must be > 0".into());
                }
                let (hp, wp) = (h + 2 * padding, w + 2 * padding);
                if hp < kernel[0] || wp < kernel[1] {
                    return Err(format!("kernel {kernel:?} larger than padded input {hp}x{wp}"));
                }
                Ok((*out_channels, (hp - kernel[0]) / stride + 1, (wp - kernel[1]) / stride + 1))
            }
            LayerKind::Activation { .. } => Ok((c, h, w)),
            LayerKind::MaxPool { size, stride } => {
                if *size == 0 || *stride == 0 || h < *size || w < *size {
                    return Err(format!("pool {size}/{stride} does not fit {h}x{w}"));
                }
                Ok((c, (h - size) / stride + 1, (w - size) / stride + 1))
            }
            LayerKind::Upsample { factor } => {
                if *factor == 0 {
                    return Err("upsample factor must be > 0".into());
                }
                Ok((c, h * factor, w * factor))
            }
            LayerKind::ReflectionPad { pad } => {
                if *pad >= h || *pad >= w {
                    return Err(format!("reflection pad {pad} needs input larger than {h}x{w}"));
                }
                Ok((c, h + 2 * pad, w + 2 * pad))
            }
        }
    }
}

/// Resident convolution parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub weights: Vec<f32>,
    pub bias: Option<Vec<f32>>,
}

/// A validated network with every blob loaded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightManifest {
    pub name: String,
    pub input: ShapeSpec,
    pub output: ShapeSpec,
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub checksum: String,
    /// One entry per layer; `Some` for convolutions.
    #[serde(skip)]
    pub(crate) params: Vec<Option<ConvParams>>,
}

impl WeightManifest {
    /// Assemble an in-memory network; computes the checksum and validates it.
    pub fn from_parts(
        name: impl Into<String>,
        input: ShapeSpec,
        output: ShapeSpec,
        layers: Vec<LayerSpec>,
        params: Vec<Option<ConvParams>>,
    ) -> Result<Self> {
        let mut m = WeightManifest {
            name: name.into(),
            input,
            output,
            layers,
            checksum: String::new(),
            params,
        };
        m.check_shape_chain()?;
        m.check_blob_sizes()?;
        m.checksum = m.compute_checksum();
        Ok(m)
    }

    pub fn params(&self, layer: usize) -> Option<&ConvParams> {
        self.params.get(layer).and_then(|p| p.as_ref())
    }

    /// Walk the layer list from a concrete input shape.
    pub fn infer_shapes(&self, input: (usize, usize, usize)) -> Result<Vec<(usize, usize, usize)>> {
        let mut shape = input;
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            shape = layer.output_shape(shape).map_err(|detail| Error::ShapeChain {
                layer: layer.name.clone(),
                detail,
            })?;
            if let Some(declared) = &layer.output {
                if !declared.accepts(shape) {
                    return Err(Error::ShapeChain {
                        layer: layer.name.clone(),
                        detail: format!("declared {declared:?}, computed {shape:?}"),
                    });
                }
            }
            out.push(shape);
        }
        Ok(out)
    }

    pub fn output_shape(&self, input: (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        Ok(self.infer_shapes(input)?.last().copied().unwrap_or(input))
    }

    /// Check declared shapes chain consistently. Channel counts are always
    /// checked; spatial sizes only when the input declares them.
    pub fn check_shape_chain(&self) -> Result<()> {
        let (h, w) = match (self.input.height, self.input.width) {
            (Some(h), Some(w)) => (h, w),
            _ => (64, 64),
        };
        let last = self.output_shape((self.input.channels, h, w))?;
        let fully_declared = self.input.height.is_some() && self.input.width.is_some();
        let ok = if fully_declared {
            self.output.accepts(last)
        } else {
            last.0 == self.output.channels
        };
        if !ok {
            return Err(Error::ShapeChain {
                layer: self.layers.last().map(|l| l.name.clone()).unwrap_or_default(),
                detail: format!("network output {last:?} does not match declared {:?}", self.output),
            });
        }
        Ok(())
    }

    fn check_blob_sizes(&self) -> Result<()> {
        if self.params.len() != self.layers.len() {
            return Err(Error::Format(format!(
                "{} parameter slots for {} layers",
                self.params.len(),
                self.layers.len()
            )));
        }
        for (layer, params) in self.layers.iter().zip(&self.params) {
            if let LayerKind::Conv {
                in_channels,
                out_channels,
                kernel,
                weights,
                bias,
                ..
            } = &layer.kind
            {
                let p = params.as_ref().ok_or_else(|| Error::BlobSize {
                    layer: layer.name.clone(),
                    blob: weights.clone(),
                    expected: out_channels * in_channels * kernel[0] * kernel[1],
                    actual: 0,
                })?;
                let expected = out_channels * in_channels * kernel[0] * kernel[1];
                if p.weights.len() != expected {
                    return Err(Error::BlobSize {
                        layer: layer.name.clone(),
                        blob: weights.clone(),
                        expected,
                        actual: p.weights.len(),
                    });
                }
                match (bias, &p.bias) {
                    (Some(name), Some(b)) if b.len() != *out_channels => {
                        return Err(Error::BlobSize {
                            layer: layer.name.clone(),
                            blob: name.clone(),
                            expected: *out_channels,
                            actual: b.len(),
                        })
                    }
                    (Some(name), None) => {
                        return Err(Error::BlobSize {
                            layer: layer.name.clone(),
                            blob: name.clone(),
                            expected: *out_channels,
                            actual: 0,
                        })
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    pub fn compute_checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for p in self.params.iter().flatten() {
            for v in &p.weights {
                hasher.update(v.to_le_bytes());
            }
            if let Some(b) = &p.bias {
                for v in b {
                    hasher.update(v.to_le_bytes());
                }
            }
        }
        hex::encode(hasher.finalize())
    }

    /// Write `manifest.json` and blobs into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (layer, params) in self.layers.iter().zip(&self.params) {
            if let (LayerKind::Conv { weights, bias, .. }, Some(p)) = (&layer.kind, params) {
                write_blob(&dir.join(weights), &p.weights)?;
                if let (Some(name), Some(b)) = (bias, &p.bias) {
                    write_blob(&dir.join(name), b)?;
                }
            }
        }
        let path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_vec_pretty(self)?;
        fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }
}

fn write_blob(path: &Path, data: &[f32]) -> Result<()> {
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_blob(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    // a trailing partial float is reported as a size mismatch by the caller
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Load and validate a weight directory (or a path to its manifest file).
pub fn load_weights(location: &Path) -> Result<WeightManifest> {
    let (dir, manifest_path) = if location.is_dir() {
        (location.to_path_buf(), location.join(MANIFEST_FILE))
    } else {
        (
            location.parent().map(Path::to_path_buf).unwrap_or_default(),
            location.to_path_buf(),
        )
    };
    let text = fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut manifest: WeightManifest = serde_json::from_slice(&text)?;
    manifest.check_shape_chain()?;

    let mut params = Vec::with_capacity(manifest.layers.len());
    for layer in &manifest.layers {
        if let LayerKind::Conv { weights, bias, .. } = &layer.kind {
            let w = read_blob(&dir.join(weights))?;
            let b = bias.as_ref().map(|b| read_blob(&dir.join(b))).transpose()?;
            params.push(Some(ConvParams { weights: w, bias: b }));
        } else {
            params.push(None);
        }
    }
    manifest.params = params;
    manifest.check_blob_sizes()?;
    let actual = manifest.compute_checksum();
    if !manifest.checksum.eq_ignore_ascii_case(&actual) {
        return Err(Error::Checksum {
            expected: manifest.checksum.clone(),
            actual,
        });
    }
    Ok(manifest)
}

/// The VGG-19 stack through `relu4_1` (with the 1×1 colour-normalising
/// convolution used by the AdaIN encoder), reflection padded.
pub fn vgg19_relu4_1_layers() -> Vec<LayerSpec> {
    let mut layers = vec![LayerSpec::new(
        "conv0",
        LayerKind::Conv {
            in_channels: 3,
            out_channels: 3,
            kernel: [1, 1],
            stride: 1,
            padding: 0,
            weights: "conv0.w".into(),
            bias: Some("conv0.b".into()),
            activation: None,
        },
    )];
    let blocks: [(&str, &[usize]); 4] = [
        ("1", &[64, 64]),
        ("2", &[128, 128]),
        ("3", &[256, 256, 256, 256]),
        ("4", &[512]),
    ];
    let mut c_in = 3;
    for (bi, (block, widths)) in blocks.iter().enumerate() {
        if bi > 0 {
            layers.push(LayerSpec::new(
                format!("pool{bi}"),
                LayerKind::MaxPool { size: 2, stride: 2 },
            ));
        }
        for (i, &c_out) in widths.iter().enumerate() {
            let name = format!("conv{block}_{}", i + 1);
            layers.push(LayerSpec::new(format!("pad{block}_{}", i + 1), LayerKind::ReflectionPad { pad: 1 }));
            layers.push(LayerSpec::new(
                name.clone(),
                LayerKind::Conv {
                    in_channels: c_in,
                    out_channels: c_out,
                    kernel: [3, 3],
                    stride: 1,
                    padding: 0,
                    weights: format!("{name}.w"),
                    bias: Some(format!("{name}.b")),
                    activation: Some(Activation::Relu),
                },
            ));
            c_in = c_out;
        }
    }
    layers
}

/// Mirror of [`vgg19_relu4_1_layers`]: relu4_1 features back to RGB with
/// nearest upsampling in place of pooling and no activation on the last layer.
pub fn relu4_1_decoder_layers() -> Vec<LayerSpec> {
    let plan: [(&str, usize, usize, bool); 9] = [
        ("4_1", 512, 256, true),
        ("3_4", 256, 256, false),
        ("3_3", 256, 256, false),
        ("3_2", 256, 256, false),
        ("3_1", 256, 128, true),
        ("2_2", 128, 128, false),
        ("2_1", 128, 64, true),
        ("1_2", 64, 64, false),
        ("1_1", 64, 3, false),
    ];
    let mut layers = Vec::new();
    for (i, &(tag, c_in, c_out, upsample_after)) in plan.iter().enumerate() {
        let name = format!("dec{tag}");
        layers.push(LayerSpec::new(format!("pad{tag}"), LayerKind::ReflectionPad { pad: 1 }));
        layers.push(LayerSpec::new(
            name.clone(),
            LayerKind::Conv {
                in_channels: c_in,
                out_channels: c_out,
                kernel: [3, 3],
                stride: 1,
                padding: 0,
                weights: format!("{name}.w"),
                bias: Some(format!("{name}.b")),
                activation: (i + 1 < plan.len()).then_some(Activation::Relu),
            },
        ));
        if upsample_after {
            layers.push(LayerSpec::new(format!("up{tag}"), LayerKind::Upsample { factor: 2 }));
        }
    }
    layers
}
