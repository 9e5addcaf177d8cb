//! Image container used by the whole pipeline: a dense channels x height x width
//! grid of f64 intensities, nominally in [0,1]. Values may leave that range
//! (additive noise, solver iterates); only finiteness is enforced.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Boundary convention for convolution-style operators.
///
/// `Circular` wraps indices (exact adjoints, FFT-compatible); `Replicate`
/// clamps to the nearest edge pixel, which is what natural images want.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryMode {
    Circular,
    Replicate,
}

/// Row-major image grid, `channels` planes of `height * width` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    /// Wraps raw storage. `data` is laid out plane by plane, each plane row-major.
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if !(channels == 1 || channels == 3) {
            return Err(Error::Dimension(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if height == 0 || width == 0 {
            return Err(Error::Dimension(format!(
                "image dims must be positive, got {height}x{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::Dimension(format!(
                "data length {} does not match {}x{}x{}",
                data.len(),
                channels,
                height,
                width
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("image contains non-finite values".into()));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::new(channels, height, width, vec![0.0; channels * height * width])
            .expect("zero image is always valid")
    }

    pub fn constant(channels: usize, height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(channels, height, width, vec![value; channels * height * width])
    }

    /// Builds an image by evaluating `f(channel, row, col)`.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for i in 0..height {
                for j in 0..width {
                    data.push(f(c, i, j));
                }
            }
        }
        Self::new(channels, height, width, data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// (channels, height, width)
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, c: usize, i: usize, j: usize) -> f64 {
        self.data[(c * self.height + i) * self.width + j]
    }

    #[inline]
    pub fn set(&mut self, c: usize, i: usize, j: usize, v: f64) {
        self.data[(c * self.height + i) * self.width + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Checks channel count and spatial size both match.
    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape() == other.shape()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(
            self.channels,
            self.height,
            self.width,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    /// self + alpha * other, elementwise.
    pub fn axpy(&self, alpha: f64, other: &Self) -> Result<Self> {
        if !self.same_shape(other) {
            return Err(Error::Dimension(format!(
                "axpy shape mismatch: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Self::new(
            self.channels,
            self.height,
            self.width,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + alpha * b)
                .collect(),
        )
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.axpy(-1.0, other)
    }

    /// Inner product over all entries.
    pub fn dot(&self, other: &Self) -> Result<f64> {
        if !self.same_shape(other) {
            return Err(Error::Dimension(format!(
                "dot shape mismatch: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .sum())
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Clamps every entry into [0,1]. Used at file-format edges.
    pub fn clamped_unit(&self) -> Self {
        let mut out = self.clone();
        for v in &mut out.data {
            *v = v.clamp(0.0, 1.0);
        }
        out
    }

    /// Center-crops so both spatial dims become multiples of `s`.
    pub fn center_crop_to_multiple(&self, s: usize) -> Result<Self> {
        if s == 0 {
            return Err(Error::Domain("crop multiple must be >= 1".into()));
        }
        let new_h = self.height - self.height % s;
        let new_w = self.width - self.width % s;
        if new_h == 0 || new_w == 0 {
            return Err(Error::Dimension(format!(
                "image {}x{} too small to crop to a multiple of {s}",
                self.height, self.width
            )));
        }
        let off_i = (self.height - new_h) / 2;
        let off_j = (self.width - new_w) / 2;
        self.crop(off_i, off_j, new_h, new_w)
    }

    /// Extracts the `h x w` window whose top-left corner is (i0, j0).
    pub fn crop(&self, i0: usize, j0: usize, h: usize, w: usize) -> Result<Self> {
        if i0 + h > self.height || j0 + w > self.width || h == 0 || w == 0 {
            return Err(Error::Dimension(format!(
                "crop {h}x{w}@({i0},{j0}) exceeds image {}x{}",
                self.height, self.width
            )));
        }
        Self::from_fn(self.channels, h, w, |c, i, j| {
            self.get(c, i0 + i, j0 + j)
        })
    }

    /// Removes `n` pixels from every side. Metric-evaluation option.
    pub fn crop_border(&self, n: usize) -> Result<Self> {
        if 2 * n >= self.height || 2 * n >= self.width {
            return Err(Error::Dimension(format!(
                "border crop {n} leaves no pixels in {}x{}",
                self.height, self.width
            )));
        }
        self.crop(n, n, self.height - 2 * n, self.width - 2 * n)
    }
}
