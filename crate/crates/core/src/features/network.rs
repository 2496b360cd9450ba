use crate::error::{Error, Result};
use crate::exec::ExecPolicy;

use super::manifest::{ConvParams, LayerKind, WeightManifest};
use super::{FeatureTensor, ImageBuffer};

/// Upper bound on im2col scratch per band, in floats.
/// Scratch budget per Winograd chunk, in floats.
const WINOGRAD_FLOATS: usize = 1 << 20;
const BAND_FLOATS: usize = 1 << 22;

/// Post-processing stage applied to decoder output (e.g. a refinement net).
pub trait Refiner: Sync {
    fn refine(&self, image: ImageBuffer) -> ImageBuffer;
}

/// 2-D convolution with zero padding: Winograd for stride-1 3×3 kernels,
/// banded im2col + sgemm otherwise.
///
/// `weights` is `(out, in, kh, kw)` row-major. Output bands are computed
/// independently and stitched in order, so every policy gives the same bits.
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    input: &FeatureTensor,
    params: &ConvParams,
    out_channels: usize,
    kernel: [usize; 2],
    stride: usize,
    padding: usize,
    policy: ExecPolicy,
) -> Result<FeatureTensor> {
    let (c_in, h, w) = input.shape();
    let [kh, kw] = kernel;
    let rows = c_in * kh * kw;
    if params.weights.len() != out_channels * rows {
        return Err(Error::shape(out_channels * rows, params.weights.len()));
    }
    let hp = h + 2 * padding;
    let wp = w + 2 * padding;
    if hp < kh || wp < kw || stride == 0 {
        return Err(Error::shape(format!("input >= kernel {kh}x{kw}"), format!("{h}x{w}")));
    }
    if kernel == [3, 3] && stride == 1 {
        let mut result = winograd_3x3(input, &params.weights, out_channels, padding, policy);
        add_bias(&mut result, params.bias.as_deref());
        return Ok(result);
    }
    let oh = (hp - kh) / stride + 1;
    let ow = (wp - kw) / stride + 1;
    let band_rows = (BAND_FLOATS / (rows * ow).max(1)).clamp(1, oh);
    let n_bands = oh.div_ceil(band_rows);

    let bands: Vec<Vec<f32>> = policy.map(n_bands, |b| {
        let y0 = b * band_rows;
        let y1 = (y0 + band_rows).min(oh);
        let cols = (y1 - y0) * ow;
        let mut col = vec![0.0f32; rows * cols];
        for ci in 0..c_in {
            let plane = input.channel(ci);
            for ky in 0..kh {
                for kx in 0..kw {
                    let r = (ci * kh + ky) * kw + kx;
                    let dst = &mut col[r * cols..(r + 1) * cols];
                    for oy in y0..y1 {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        let row = &mut dst[(oy - y0) * ow..(oy - y0 + 1) * ow];
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, d) in row.iter_mut().enumerate() {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix >= 0 && ix < w as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        let mut out = vec![0.0f32; out_channels * cols];
        sgemm(out_channels, rows, cols, &params.weights, &col, &mut out);
        out
    });

    let mut result = FeatureTensor::zeros(out_channels, oh, ow);
    let plane = oh * ow;
    for (b, band) in bands.iter().enumerate() {
        let y0 = b * band_rows;
        let cols = band.len() / out_channels.max(1);
        for co in 0..out_channels {
            let dst = &mut result.data[co * plane + y0 * ow..co * plane + y0 * ow + cols];
            dst.copy_from_slice(&band[co * cols..(co + 1) * cols]);
        }
    }
    add_bias(&mut result, params.bias.as_deref());
    Ok(result)
}

fn add_bias(result: &mut FeatureTensor, bias: Option<&[f32]>) {
    if let Some(bias) = bias {
        for (co, b) in bias.iter().enumerate() {
            for v in result.channel_mut(co) {
                *v += b;
            }
        }
    }
}

/// `c = a · b` for dense row-major `a: m×k`, `b: k×n`.
fn sgemm(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the slices cover the dimensions passed in and use dense
    // row-major strides.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Stride-1 3×3 convolution by Winograd F(2×2, 3×3): 16 products per 2×2
/// output tile instead of 36. Bands of tile rows run independently.
fn winograd_3x3(input: &FeatureTensor, weights: &[f32], out_channels: usize, padding: usize, policy: ExecPolicy) -> FeatureTensor {
    let (c_in, h, w) = input.shape();
    let oh = h + 2 * padding - 2;
    let ow = w + 2 * padding - 2;
    let (tiles_y, tiles_x) = (oh.div_ceil(2), ow.div_ceil(2));

    // filter transform G g Gᵀ, stored as 16 matrices of out_channels × c_in
    let pairs = out_channels * c_in;
    let mut u = vec![0.0f32; 16 * pairs];
    for (pair, g) in weights.chunks_exact(9).enumerate() {
        let mut gg = [[0.0f32; 3]; 4];
        for col in 0..3 {
            let (g0, g1, g2) = (g[col], g[3 + col], g[6 + col]);
            gg[0][col] = g0;
            gg[1][col] = 0.5 * (g0 + g1 + g2);
            gg[2][col] = 0.5 * (g0 - g1 + g2);
            gg[3][col] = g2;
        }
        for (r, row) in gg.iter().enumerate() {
            let t = [row[0], 0.5 * (row[0] + row[1] + row[2]), 0.5 * (row[0] - row[1] + row[2]), row[2]];
            for (c, v) in t.into_iter().enumerate() {
                u[(r * 4 + c) * pairs + pair] = v;
            }
        }
    }

    let rows_per_chunk = (WINOGRAD_FLOATS / (16 * c_in.max(out_channels) * tiles_x).max(1)).clamp(1, tiles_y.max(1));
    let n_chunks = tiles_y.div_ceil(rows_per_chunk);
    let span = 2 * tiles_x + 2;
    let chunks: Vec<Vec<f32>> = policy.map(n_chunks, |k| {
        let ty0 = k * rows_per_chunk;
        let ty1 = (ty0 + rows_per_chunk).min(tiles_y);
        let nt = (ty1 - ty0) * tiles_x;
        let mut v = vec![0.0f32; 16 * c_in * nt];
        let mut rows = vec![0.0f32; 4 * span];
        let mut cols = vec![0.0f32; 4 * span];
        for ci in 0..c_in {
            let plane = input.channel(ci);
            for ty in ty0..ty1 {
                // padded input rows 2ty..2ty+4, columns -padding..span-padding
                for r in 0..4 {
                    let dst = &mut rows[r * span..(r + 1) * span];
                    dst.fill(0.0);
                    let y = (2 * ty + r) as isize - padding as isize;
                    if y >= 0 && (y as usize) < h {
                        let src = &plane[y as usize * w..(y as usize + 1) * w];
                        let n = w.min(span - padding);
                        dst[padding..padding + n].copy_from_slice(&src[..n]);
                    }
                }
                // Bᵀ over rows, shared by neighbouring tiles
                let (r0, rest) = rows.split_at(span);
                let (r1, rest) = rest.split_at(span);
                let (r2, r3) = rest.split_at(span);
                for x in 0..span {
                    cols[x] = r0[x] - r2[x];
                    cols[span + x] = r1[x] + r2[x];
                    cols[2 * span + x] = r2[x] - r1[x];
                    cols[3 * span + x] = r1[x] - r3[x];
                }
                let row_base = (ty - ty0) * tiles_x;
                for r in 0..4 {
                    let c = &cols[r * span..(r + 1) * span];
                    let lanes: [usize; 4] = std::array::from_fn(|q| ((r * 4 + q) * c_in + ci) * nt + row_base);
                    for tx in 0..tiles_x {
                        let b = 2 * tx;
                        v[lanes[0] + tx] = c[b] - c[b + 2];
                        v[lanes[1] + tx] = c[b + 1] + c[b + 2];
                        v[lanes[2] + tx] = c[b + 2] - c[b + 1];
                        v[lanes[3] + tx] = c[b + 1] - c[b + 3];
                    }
                }
            }
        }
        let mut m = vec![0.0f32; 16 * out_channels * nt];
        for xi in 0..16 {
            sgemm(
                out_channels,
                c_in,
                nt,
                &u[xi * pairs..(xi + 1) * pairs],
                &v[xi * c_in * nt..(xi + 1) * c_in * nt],
                &mut m[xi * out_channels * nt..(xi + 1) * out_channels * nt],
            );
        }
        // Aᵀ m A, cropped to the output rows of this chunk
        let out_rows = (2 * (ty1 - ty0)).min(oh - 2 * ty0);
        let mut out = vec![0.0f32; out_channels * out_rows * ow];
        let stride = out_channels * nt;
        let mut a = vec![0.0f32; 8 * tiles_x];
        for co in 0..out_channels {
            for ty in 0..ty1 - ty0 {
                let base = co * nt + ty * tiles_x;
                let e = |xi: usize, tx: usize| m[xi * stride + base + tx];
                // Aᵀ over rows: a[2·col + r] for col 0..4, r 0..2
                for tx in 0..tiles_x {
                    for col in 0..4 {
                        let (e0, e1, e2, e3) = (e(col, tx), e(4 + col, tx), e(8 + col, tx), e(12 + col, tx));
                        a[tx * 8 + col * 2] = e0 + e1 + e2;
                        a[tx * 8 + col * 2 + 1] = e1 - e2 - e3;
                    }
                }
                for r in 0..2 {
                    let y = 2 * ty + r;
                    if y >= out_rows {
                        continue;
                    }
                    let dst = &mut out[(co * out_rows + y) * ow..(co * out_rows + y + 1) * ow];
                    for tx in 0..tiles_x {
                        let t = &a[tx * 8..tx * 8 + 8];
                        let (g0, g1, g2, g3) = (t[r], t[2 + r], t[4 + r], t[6 + r]);
                        dst[2 * tx] = g0 + g1 + g2;
                        if 2 * tx + 1 < ow {
                            dst[2 * tx + 1] = g1 - g2 - g3;
                        }
                    }
                }
            }
        }
        out
    });

    let mut result = FeatureTensor::zeros(out_channels, oh, ow);
    let plane = oh * ow;
    for (k, data) in chunks.iter().enumerate() {
        let y0 = 2 * k * rows_per_chunk;
        let rows = data.len() / (out_channels * ow).max(1);
        for co in 0..out_channels {
            result.data[co * plane + y0 * ow..co * plane + (y0 + rows) * ow]
                .copy_from_slice(&data[co * rows * ow..(co + 1) * rows * ow]);
        }
    }
    result
}

/// Naive quadruple loop; oracle for [`conv2d`].
#[cfg(test)]
fn conv2d_reference(
    input: &FeatureTensor,
    params: &ConvParams,
    out_channels: usize,
    kernel: [usize; 2],
    stride: usize,
    padding: usize,
) -> FeatureTensor {
    let (c_in, h, w) = input.shape();
    let [kh, kw] = kernel;
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (w + 2 * padding - kw) / stride + 1;
    let mut out = FeatureTensor::zeros(out_channels, oh, ow);
    for co in 0..out_channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0f64;
                for ci in 0..c_in {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            let wv = params.weights[((co * c_in + ci) * kh + ky) * kw + kx];
                            acc += wv as f64 * input.at(ci, iy as usize, ix as usize) as f64;
                        }
                    }
                }
                if let Some(b) = &params.bias {
                    acc += b[co] as f64;
                }
                out.data[(co * oh + oy) * ow + ox] = acc as f32;
            }
        }
    }
    out
}

fn reflection_pad(input: &FeatureTensor, pad: usize) -> FeatureTensor {
    let (c, h, w) = input.shape();
    let (oh, ow) = (h + 2 * pad, w + 2 * pad);
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let mut i = i;
        if i < 0 {
            i = -i;
        }
        if i >= n {
            i = 2 * (n - 1) - i;
        }
        i as usize
    };
    let mut out = FeatureTensor::zeros(c, oh, ow);
    for ch in 0..c {
        for y in 0..oh {
            let sy = reflect(y as isize - pad as isize, h);
            for x in 0..ow {
                let sx = reflect(x as isize - pad as isize, w);
                out.data[(ch * oh + y) * ow + x] = input.at(ch, sy, sx);
            }
        }
    }
    out
}

fn max_pool(input: &FeatureTensor, size: usize, stride: usize) -> FeatureTensor {
    let (c, h, w) = input.shape();
    let oh = (h - size) / stride + 1;
    let ow = (w - size) / stride + 1;
    let mut out = FeatureTensor::zeros(c, oh, ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut m = f32::NEG_INFINITY;
                for ky in 0..size {
                    for kx in 0..size {
                        m = m.max(input.at(ch, oy * stride + ky, ox * stride + kx));
                    }
                }
                out.data[(ch * oh + oy) * ow + ox] = m;
            }
        }
    }
    out
}

fn upsample_nearest(input: &FeatureTensor, factor: usize) -> FeatureTensor {
    let (c, h, w) = input.shape();
    let (oh, ow) = (h * factor, w * factor);
    let mut out = FeatureTensor::zeros(c, oh, ow);
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                out.data[(ch * oh + y) * ow + x] = input.at(ch, y / factor, x / factor);
            }
        }
    }
    out
}

/// Run every layer of `net` on `input`.
pub fn forward(input: &FeatureTensor, net: &WeightManifest, policy: ExecPolicy) -> Result<FeatureTensor> {
    if !net.input.accepts(input.shape()) {
        return Err(Error::shape(format!("{:?}", net.input), format!("{:?}", input.shape())));
    }
    let mut x = input.clone();
    for (i, layer) in net.layers.iter().enumerate() {
        x = match &layer.kind {
            LayerKind::Conv {
                out_channels,
                kernel,
                stride,
                padding,
                activation,
                ..
            } => {
                let params = net.params(i).ok_or_else(|| Error::BlobSize {
                    layer: layer.name.clone(),
                    blob: "weights".into(),
                    expected: 1,
                    actual: 0,
                })?;
                let mut y = conv2d(&x, params, *out_channels, *kernel, *stride, *padding, policy)?;
                if let Some(act) = activation {
                    y.data.iter_mut().for_each(|v| *v = act.apply(*v));
                }
                y
            }
            LayerKind::Activation { function } => {
                x.data.iter_mut().for_each(|v| *v = function.apply(*v));
                x
            }
            LayerKind::MaxPool { size, stride } => {
                layer.output_shape(x.shape()).map_err(|detail| Error::ShapeChain {
                    layer: layer.name.clone(),
                    detail,
                })?;
                max_pool(&x, *size, *stride)
            }
            LayerKind::Upsample { factor } => upsample_nearest(&x, *factor),
            LayerKind::ReflectionPad { pad } => {
                layer.output_shape(x.shape()).map_err(|detail| Error::ShapeChain {
                    layer: layer.name.clone(),
                    detail,
                })?;
                reflection_pad(&x, *pad)
            }
        };
    }
    if !net.output.accepts(x.shape()) {
        return Err(Error::shape(format!("{:?}", net.output), format!("{:?}", x.shape())));
    }
    if x.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("network output"));
    }
    Ok(x)
}

pub fn encode(image: &ImageBuffer, encoder: &WeightManifest, policy: ExecPolicy) -> Result<FeatureTensor> {
    forward(&image.as_features(), encoder, policy)
}

pub fn decode(features: &FeatureTensor, decoder: &WeightManifest, policy: ExecPolicy) -> Result<ImageBuffer> {
    decode_with(features, decoder, None, policy)
}

/// Decode, then hand the clamped image to an optional refinement stage.
pub fn decode_with(
    features: &FeatureTensor,
    decoder: &WeightManifest,
    refiner: Option<&dyn Refiner>,
    policy: ExecPolicy,
) -> Result<ImageBuffer> {
    let out = forward(features, decoder, policy)?;
    let img = ImageBuffer::from_features(out);
    Ok(match refiner {
        Some(r) => {
            let mut refined = r.refine(img);
            refined.clamp_unit();
            refined
        }
        None => img,
    })
}
