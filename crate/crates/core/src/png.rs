//! 8-bit PNG input and output.
//!
//! Files hold bytes in `[0, 255]`; tensors hold model-space values in `[-1, 1]`.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};

use crate::error::TensorError;
use crate::tensor::PixelTensor;

pub fn byte_to_model(v: u8) -> f64 {
    v as f64 / 127.5 - 1.0
}

pub fn model_to_byte(v: f64) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

/// Reads a grayscale or RGB 8-bit PNG. Alpha is dropped.
pub fn load_image(path: impl AsRef<Path>) -> Result<PixelTensor, TensorError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|source| TensorError::Io {
        path: shown.clone(),
        source,
    })?;
    let img = image::load_from_memory_with_format(&bytes, ImageFormat::Png).map_err(|e| {
        TensorError::Decode {
            path: shown.clone(),
            reason: e.to_string(),
        }
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, raw): (usize, Vec<u8>) = match img {
        DynamicImage::ImageLuma8(g) => (1, g.into_raw()),
        DynamicImage::ImageLumaA8(_) => (1, img.to_luma8().into_raw()),
        DynamicImage::ImageRgb8(rgb) => (3, rgb.into_raw()),
        DynamicImage::ImageRgba8(_) => (3, img.to_rgb8().into_raw()),
        other => {
            return Err(TensorError::Decode {
                path: shown,
                reason: format!("unsupported pixel format {:?}; expected 8-bit gray or RGB", other.color()),
            })
        }
    };
    // interleaved HWC -> planar CHW
    let mut data = vec![0.0; channels * h * w];
    for (i, px) in raw.chunks_exact(channels).enumerate() {
        for (c, &v) in px.iter().enumerate() {
            data[c * h * w + i] = byte_to_model(v);
        }
    }
    PixelTensor::new(channels, h, w, data)
}

/// Writes a 1- or 3-channel tensor as an 8-bit PNG, clamping to `[-1, 1]`.
pub fn save_image(x: &PixelTensor, path: impl AsRef<Path>) -> Result<(), TensorError> {
    let path = path.as_ref();
    let (c, h, w) = x.shape();
    let hw = h * w;
    let interleaved: Vec<u8> = (0..hw)
        .flat_map(|i| (0..c).map(move |ch| (ch, i)))
        .map(|(ch, i)| model_to_byte(x.data()[ch * hw + i]))
        .collect();
    let img = match c {
        1 => DynamicImage::ImageLuma8(
            GrayImage::from_raw(w as u32, h as u32, interleaved).expect("buffer sized above"),
        ),
        3 => DynamicImage::ImageRgb8(
            RgbImage::from_raw(w as u32, h as u32, interleaved).expect("buffer sized above"),
        ),
        n => {
            return Err(TensorError::Shape(format!(
                "PNG output needs 1 or 3 channels, got {n}"
            )))
        }
    };
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(source) => TensorError::Io {
                path: path.display().to_string(),
                source,
            },
            other => TensorError::Io {
                path: path.display().to_string(),
                source: std::io::Error::other(other.to_string()),
            },
        })
}
