//! 8-bit PNG input/output. Images live as f64 in [0,1] internally;
//! quantization happens only at these edges.

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;
use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use std::path::Path;

/// Reads a PNG into a tensor: grayscale files load as one channel, anything
/// with color as three (alpha is dropped). Values map to v/255.
pub fn read_png(path: &Path) -> Result<ImageTensor> {
    let dynimg = image::open(path).map_err(|e| Error::codec(path, e))?;
    let tensor = match dynimg {
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLuma16(_) => {
            let gray = dynimg.to_luma8();
            let (w, h) = (gray.width() as usize, gray.height() as usize);
            ImageTensor::from_fn(1, h, w, |_, i, j| {
                gray.get_pixel(j as u32, i as u32).0[0] as f64 / 255.0
            })?
        }
        _ => {
            let rgb = dynimg.to_rgb8();
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            ImageTensor::from_fn(3, h, w, |c, i, j| {
                rgb.get_pixel(j as u32, i as u32).0[c] as f64 / 255.0
            })?
        }
    };
    Ok(tensor)
}

/// Writes a tensor as an 8-bit PNG, clamping to [0,1] and rounding to the
/// nearest of 256 levels.
pub fn write_png(path: &Path, x: &ImageTensor) -> Result<()> {
    let (ch, h, w) = x.shape();
    let quant = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    match ch {
        1 => {
            let buf = ImageBuffer::from_fn(w as u32, h as u32, |j, i| {
                Luma([quant(x.get(0, i as usize, j as usize))])
            });
            buf.save(path).map_err(|e| Error::codec(path, e))
        }
        _ => {
            let buf = ImageBuffer::from_fn(w as u32, h as u32, |j, i| {
                Rgb([
                    quant(x.get(0, i as usize, j as usize)),
                    quant(x.get(1, i as usize, j as usize)),
                    quant(x.get(2, i as usize, j as usize)),
                ])
            });
            buf.save(path).map_err(|e| Error::codec(path, e))
        }
    }
}
