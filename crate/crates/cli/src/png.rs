//! PNG codec boundary: 8/16-bit gray or RGB(A) in, 8-bit out.

use std::path::Path;

use deocc_core::Image;
use image::{DynamicImage, ImageFormat, ImageReader};

use crate::error::{CliError, Result};

fn decode(path: &Path) -> Result<DynamicImage> {
    let err = |message: String| CliError::Image {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = ImageReader::open(path).map_err(|e| CliError::io(path, e))?;
    reader.set_format(ImageFormat::Png);
    reader.decode().map_err(|e| err(e.to_string()))
}

fn planar<P: Copy>(
    w: u32,
    h: u32,
    px: &[P],
    channels: usize,
    take: usize,
    scale: f32,
    f: impl Fn(P) -> f32,
) -> Image {
    let (w, h) = (w as usize, h as usize);
    Image::from_fn(h, w, take, |c, y, x| {
        f(px[(y * w + x) * channels + c]) / scale
    })
}

/// Color planes and optional alpha, normalized to `[0, 1]`.
pub fn read_with_alpha(path: &Path) -> Result<(Image, Option<Image>)> {
    let img = decode(path)?;
    let (w, h) = (img.width(), img.height());
    let eight = |v: u8| v as f32;
    let sixteen = |v: u16| v as f32;
    let split = |all: Image, color: usize| -> Result<(Image, Option<Image>)> {
        if all.channels() == color {
            return Ok((all, None));
        }
        let rgb = all.select_channels(&(0..color).collect::<Vec<_>>())?;
        let alpha = all.select_channels(&[color])?;
        Ok((rgb, Some(alpha)))
    };
    match img {
        DynamicImage::ImageLuma8(b) => split(planar(w, h, b.as_raw(), 1, 1, 255.0, eight), 1),
        DynamicImage::ImageLumaA8(b) => split(planar(w, h, b.as_raw(), 2, 2, 255.0, eight), 1),
        DynamicImage::ImageRgb8(b) => split(planar(w, h, b.as_raw(), 3, 3, 255.0, eight), 3),
        DynamicImage::ImageRgba8(b) => split(planar(w, h, b.as_raw(), 4, 4, 255.0, eight), 3),
        DynamicImage::ImageLuma16(b) => split(planar(w, h, b.as_raw(), 1, 1, 65535.0, sixteen), 1),
        DynamicImage::ImageLumaA16(b) => split(planar(w, h, b.as_raw(), 2, 2, 65535.0, sixteen), 1),
        DynamicImage::ImageRgb16(b) => split(planar(w, h, b.as_raw(), 3, 3, 65535.0, sixteen), 3),
        DynamicImage::ImageRgba16(b) => split(planar(w, h, b.as_raw(), 4, 4, 65535.0, sixteen), 3),
        other => Err(CliError::Image {
            path: path.to_path_buf(),
            message: format!("unsupported pixel layout {:?}", other.color()),
        }),
    }
}

/// Color planes with any alpha dropped.
pub fn read(path: &Path) -> Result<Image> {
    Ok(read_with_alpha(path)?.0)
}

/// Color planes expanded to three channels.
pub fn read_rgb(path: &Path) -> Result<Image> {
    to_rgb(read(path)?)
}

pub fn to_rgb(img: Image) -> Result<Image> {
    match img.channels() {
        3 => Ok(img),
        1 => Ok(img.select_channels(&[0, 0, 0])?),
        c => Err(
            deocc_core::Error::InvalidArgument(format!("cannot expand {c} channels to RGB")).into(),
        ),
    }
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes a 1- or 3-channel image as 8-bit PNG bytes.
pub fn encode(img: &Image) -> Result<Vec<u8>> {
    let (h, w, c) = img.dims();
    let mut px = vec![0u8; h * w * c];
    for ch in 0..c {
        for (i, &v) in img.plane(ch).iter().enumerate() {
            px[i * c + ch] = quantize(v);
        }
    }
    let dynamic = match c {
        1 => DynamicImage::ImageLuma8(
            image::GrayImage::from_raw(w as u32, h as u32, px).expect("sized buffer"),
        ),
        3 => DynamicImage::ImageRgb8(
            image::RgbImage::from_raw(w as u32, h as u32, px).expect("sized buffer"),
        ),
        _ => {
            return Err(deocc_core::Error::InvalidArgument(format!(
                "cannot write a {c}-channel PNG"
            ))
            .into());
        }
    };
    let mut out = std::io::Cursor::new(Vec::new());
    dynamic
        .write_to(&mut out, ImageFormat::Png)
        .map_err(|e| deocc_core::Error::Format(e.to_string()))?;
    Ok(out.into_inner())
}

pub fn write(path: &Path, img: &Image) -> Result<()> {
    let bytes = encode(img)?;
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// The image as it reads back after an 8-bit round trip.
pub fn quantized(img: &Image) -> Image {
    img.map(|v| quantize(v) as f32 / 255.0)
}
