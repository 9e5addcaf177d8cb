//! Image quality metrics: PSNR over unit dynamic range and mean local SSIM.

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

/// PSNR in decibels for unit dynamic range, `10 log10(1/MSE)`, capped at
/// 100 dB when MSE < 1e-10 (the cap value is exactly the dB level at the
/// threshold, so the function is continuous).
pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::Dimension(format!(
            "psnr shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let n = a.as_slice().len() as f64;
    let mse: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    if mse < 1e-10 {
        Ok(100.0)
    } else {
        Ok(10.0 * (1.0 / mse).log10())
    }
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn ssim_window_weights() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let c = (SSIM_WINDOW as isize - 1) / 2;
    let mut w = [0.0; SSIM_WINDOW * SSIM_WINDOW];
    let mut sum = 0.0;
    for i in -c..=c {
        for j in -c..=c {
            let v = (-((i * i + j * j) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            w[((i + c) * SSIM_WINDOW as isize + (j + c)) as usize] = v;
            sum += v;
        }
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Mean local SSIM over all fully interior 11x11 windows with a Gaussian
/// weighting (sigma 1.5) and the usual stabilizers C1 = 0.01², C2 = 0.03².
/// Inputs must be single-channel (convert via [`crate::color::rgb_to_y`]) and
/// at least 11 pixels in each dimension.
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::Dimension(format!(
            "ssim shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if a.channels() != 1 {
        return Err(Error::Dimension(
            "ssim expects single-channel input; convert with rgb_to_y first".into(),
        ));
    }
    let (_, h, w) = a.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Dimension(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let weights = ssim_window_weights();
    let pa = a.plane(0);
    let pb = b.plane(0);
    let mut total = 0.0;
    let mut count = 0usize;
    for i0 in 0..=h - SSIM_WINDOW {
        for j0 in 0..=w - SSIM_WINDOW {
            let (mut mu_a, mut mu_b) = (0.0, 0.0);
            let (mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0);
            for di in 0..SSIM_WINDOW {
                let row = (i0 + di) * w + j0;
                let wrow = di * SSIM_WINDOW;
                for dj in 0..SSIM_WINDOW {
                    let wt = weights[wrow + dj];
                    let va = pa[row + dj];
                    let vb = pb[row + dj];
                    mu_a += wt * va;
                    mu_b += wt * vb;
                    aa += wt * va * va;
                    bb += wt * vb * vb;
                    ab += wt * va * vb;
                }
            }
            let var_a = aa - mu_a * mu_a;
            let var_b = bb - mu_b * mu_b;
            let cov = ab - mu_a * mu_b;
            let num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2);
            let den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}
