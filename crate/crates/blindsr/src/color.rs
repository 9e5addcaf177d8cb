//! Color conversion used for evaluation.

use crate::error::Result;
use crate::tensor::ImageTensor;

/// BT.601 video-range luma: Y = (16 + 65.481 R + 128.553 G + 24.966 B) / 255,
/// mapping [0,1] RGB into [16/255, 235/255]. Single-channel input is passed
/// through unchanged so callers can evaluate grayscale images uniformly.
pub fn rgb_to_y(x: &ImageTensor) -> Result<ImageTensor> {
    if x.channels() == 1 {
        return Ok(x.clone());
    }
    let (_, h, w) = x.shape();
    let (r, g, b) = (x.plane(0), x.plane(1), x.plane(2));
    let mut out = ImageTensor::zeros(1, h, w);
    let y = out.plane_mut(0);
    for i in 0..h * w {
        y[i] = (16.0 + 65.481 * r[i] + 128.553 * g[i] + 24.966 * b[i]) / 255.0;
    }
    Ok(out)
}
