//! 8-bit PNG I/O, mapped to and from `[0, 1]`.

use std::path::Path;

use image::{ColorType, DynamicImage, GrayImage, RgbImage};

use super::ImageBuffer;
use crate::error::{Error, Result};

/// Read a PNG as RGB, or single-channel for grayscale sources. Alpha is dropped.
pub fn read_image(path: &Path) -> Result<ImageBuffer> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image(other),
    })?;
    Ok(from_dynamic(&img))
}

pub fn from_dynamic(img: &DynamicImage) -> ImageBuffer {
    let gray = matches!(img.color(), ColorType::L8 | ColorType::La8 | ColorType::L16 | ColorType::La16);
    if gray {
        let g = img.to_luma8();
        let (w, h) = g.dimensions();
        let data = g.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
        ImageBuffer {
            channels: 1,
            height: h as usize,
            width: w as usize,
            data,
        }
    } else {
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        let (w, h) = (w as usize, h as usize);
        let raw = rgb.as_raw();
        ImageBuffer::from_fn(3, h, w, |c, y, x| raw[(y * w + x) * 3 + c] as f32 / 255.0)
    }
}

/// Quantize to 8 bits per channel (round to nearest).
pub fn to_dynamic(img: &ImageBuffer) -> Result<DynamicImage> {
    let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let (w, h) = (img.width as u32, img.height as u32);
    match img.channels {
        1 => {
            let buf = img.data.iter().map(|&v| q(v)).collect();
            Ok(DynamicImage::ImageLuma8(
                GrayImage::from_raw(w, h, buf).expect("buffer sized to image"),
            ))
        }
        3 => {
            let p = img.plane();
            let mut buf = Vec::with_capacity(3 * p);
            for i in 0..p {
                for c in 0..3 {
                    buf.push(q(img.data[c * p + i]));
                }
            }
            Ok(DynamicImage::ImageRgb8(
                RgbImage::from_raw(w, h, buf).expect("buffer sized to image"),
            ))
        }
        c => Err(Error::Format(format!("cannot write a {c}-channel image"))),
    }
}

pub fn write_image(path: &Path, img: &ImageBuffer) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    to_dynamic(img)?
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(Error::Image)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_exact_on_8bit_values() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageBuffer::from_fn(3, 5, 7, |c, y, x| ((c * 40 + y * 7 + x * 3) % 256) as f32 / 255.0);
        let path = dir.path().join("a.png");
        write_image(&path, &img).unwrap();
        let back = read_image(&path).unwrap();
        assert_eq!(back.shape(), img.shape());
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn grayscale_stays_single_channel() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageBuffer::from_fn(1, 4, 4, |_, y, x| (y * 4 + x) as f32 / 15.0);
        let path = dir.path().join("g.png");
        write_image(&path, &img).unwrap();
        assert_eq!(read_image(&path).unwrap().channels, 1);
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = read_image(Path::new("/nonexistent/x.png")).unwrap_err();
        assert_eq!(err.kind(), "io");
    }
}
