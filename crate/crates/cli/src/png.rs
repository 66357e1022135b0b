//! 8-bit PNG reading and writing.
//!
//! Pixels map to `v / 255` on read. On write values are clamped to `[0, 1]`
//! and stored as `round(v * 255)`.

use std::path::Path;

use asconvsr_core::Tensor;
use image::{ColorType, DynamicImage, RgbImage};
use log::warn;

use crate::error::{CliError, CliResult};

/// Reads an 8-bit RGB, RGBA, grey or grey+alpha PNG as `[1, 3, H, W]`.
/// Alpha is dropped and grey is copied to all three channels, each with a
/// warning.
pub fn png_read(path: &Path) -> CliResult<Tensor<f32>> {
    let img = image::ImageReader::open(path)
        .map_err(|e| CliError::data(path.display(), e))?
        .with_guessed_format()
        .map_err(|e| CliError::data(path.display(), e))?
        .decode()
        .map_err(|e| CliError::data(path.display(), e))?;
    let rgb = match img.color() {
        ColorType::Rgb8 => img.into_rgb8(),
        ColorType::Rgba8 => {
            warn!("{}: dropping alpha channel", path.display());
            img.into_rgb8()
        }
        ColorType::L8 => {
            warn!("{}: expanding greyscale to RGB", path.display());
            img.into_rgb8()
        }
        ColorType::La8 => {
            warn!(
                "{}: expanding greyscale to RGB and dropping alpha",
                path.display()
            );
            img.into_rgb8()
        }
        other => {
            return Err(CliError::Data(format!(
                "{}: unsupported colour type / bit depth {other:?} (8-bit only)",
                path.display()
            )))
        }
    };
    Ok(rgb_to_tensor(&rgb))
}

pub fn rgb_to_tensor(rgb: &RgbImage) -> Tensor<f32> {
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let raw = rgb.as_raw();
    Tensor::from_fn(&[1, 3, h, w], |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        raw[p * 3 + c] as f32 / 255.0
    })
    .expect("8-bit values are finite")
}

pub fn tensor_to_rgb(t: &Tensor<f32>) -> CliResult<RgbImage> {
    let [b, c, h, w] = t
        .dims4()
        .map_err(|e| CliError::Usage(format!("png_write: {e}")))?;
    if b != 1 || c != 3 {
        return Err(CliError::Usage(format!(
            "png_write expects [1, 3, H, W], got {:?}",
            t.shape()
        )));
    }
    let d = t.data();
    let mut raw = vec![0u8; h * w * 3];
    for (p, px) in raw.chunks_exact_mut(3).enumerate() {
        for (ch, v) in px.iter_mut().enumerate() {
            *v = (d[ch * h * w + p].clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    Ok(RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer matches dimensions"))
}

pub fn png_write(t: &Tensor<f32>, path: &Path) -> CliResult<()> {
    DynamicImage::ImageRgb8(tensor_to_rgb(t)?)
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| CliError::data(path.display(), e))
}

/// `(height, width)` from the file header.
pub fn png_dims(path: &Path) -> CliResult<(usize, usize)> {
    let (w, h) = image::image_dimensions(path).map_err(|e| CliError::data(path.display(), e))?;
    Ok((h as usize, w as usize))
}
