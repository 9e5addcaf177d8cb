//! Forward observation model (blur, decimate, add noise), the Gaussian
//! likelihood of the observation under a candidate bandwidth vector, and
//! synthetic dataset generation with a JSON-lines manifest.

use crate::error::{Error, Result};
use crate::kernel::{make_mixture_kernel, sample_bandwidths, BandwidthVector, ExponentialParams, MixtureKernel};
use crate::ops::{conv2d, downsample};
use crate::rng::{rng_for, Rng};
use crate::tensor::{BoundaryMode, ImageTensor};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::Write as _;
use std::path::{Path, PathBuf};

/// Parameters of the observation model `y = (x ⊗ k)↓s + n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationConfig {
    /// Integer decimation factor s >= 1.
    pub scale: usize,
    /// Standard deviation of the additive Gaussian noise (intensity units).
    pub sigma_n: f64,
    /// Blur kernel support P (odd).
    pub support: usize,
    /// Convolution boundary handling.
    pub boundary: BoundaryMode,
    /// Master seed for dataset synthesis; per-record streams derive from it.
    pub seed: u64,
}

impl DegradationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scale == 0 {
            return Err(Error::Domain("scale must be >= 1".into()));
        }
        if !self.sigma_n.is_finite() || self.sigma_n < 0.0 {
            return Err(Error::Domain(format!(
                "sigma_n must be finite and >= 0, got {}",
                self.sigma_n
            )));
        }
        if self.support == 0 || self.support.is_multiple_of(2) {
            return Err(Error::Domain(format!(
                "kernel support must be odd, got {}",
                self.support
            )));
        }
        Ok(())
    }
}

impl Default for DegradationConfig {
    fn default() -> Self {
        Self {
            scale: 2,
            sigma_n: 0.01,
            support: 21,
            boundary: BoundaryMode::Replicate,
            seed: 0,
        }
    }
}

/// One entry of a dataset manifest. Paths are relative to the manifest's
/// directory so a regenerated dataset is byte-identical regardless of where
/// it lives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub lr_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hr_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b2_true: Option<BandwidthVector>,
}

impl DatasetRecord {
    /// Labeled records carry the ground-truth HR image.
    pub fn is_labeled(&self) -> bool {
        self.hr_path.is_some()
    }

    fn validate(&self) -> Result<()> {
        if self.kernel_path.is_some() && self.hr_path.is_none() {
            return Err(Error::Format(format!(
                "record '{}' has a kernel but no HR image",
                self.id
            )));
        }
        Ok(())
    }
}

/// Noiseless forward pass: blur with `k`, then decimate by `cfg.scale`.
pub fn forward_mean(x: &ImageTensor, k: &MixtureKernel, cfg: &DegradationConfig) -> Result<ImageTensor> {
    cfg.validate()?;
    downsample(&conv2d(x, k, cfg.boundary)?, cfg.scale)
}

/// Full observation model: forward pass plus `sigma_n`-scaled white Gaussian
/// noise drawn from `rng`. The result is not clamped; quantization happens
/// only at file writes.
pub fn degrade(
    x: &ImageTensor,
    k: &MixtureKernel,
    cfg: &DegradationConfig,
    rng: &mut Rng,
) -> Result<ImageTensor> {
    let mut y = forward_mean(x, k, cfg)?;
    if cfg.sigma_n > 0.0 {
        for v in y.as_mut_slice() {
            let g: f64 = rng.sample(StandardNormal);
            *v += cfg.sigma_n * g;
        }
    }
    Ok(y)
}

/// Gaussian log-likelihood of the observation `y` given image `x` and
/// bandwidths `b2`, in nats:
/// sum over pixels of `-0.5 ln(2 pi sigma^2) - (y - mu)^2 / (2 sigma^2)`
/// with `mu` the noiseless forward pass under the kernel built from `b2`.
pub fn log_likelihood(
    y: &ImageTensor,
    x: &ImageTensor,
    b2: &BandwidthVector,
    cfg: &DegradationConfig,
) -> Result<f64> {
    cfg.validate()?;
    if cfg.sigma_n == 0.0 {
        return Err(Error::Domain(
            "log-likelihood degenerate at sigma_n = 0".into(),
        ));
    }
    let k = make_mixture_kernel(b2, cfg.support)?;
    let mu = forward_mean(x, &k, cfg)?;
    if !y.same_shape(&mu) {
        return Err(Error::Dimension(format!(
            "observation shape {:?} does not match forward model output {:?}",
            y.shape(),
            mu.shape()
        )));
    }
    let var = cfg.sigma_n * cfg.sigma_n;
    let log_norm = -0.5 * (2.0 * std::f64::consts::PI * var).ln();
    let n = y.as_slice().len() as f64;
    let mut quad = 0.0;
    for (yi, mi) in y.as_slice().iter().zip(mu.as_slice()) {
        let r = yi - mi;
        quad += r * r;
    }
    Ok(n * log_norm - quad / (2.0 * var))
}

fn record_rng(master_seed: u64, index: usize) -> Rng {
    rng_for(master_seed, &format!("synth-record-{index}"))
}

fn draw_record_bandwidths(
    master_seed: u64,
    index: usize,
    prior: &ExponentialParams,
) -> Result<(BandwidthVector, Rng)> {
    let mut rng = record_rng(master_seed, index);
    let xi: Vec<f64> = (0..prior.len()).map(|_| rng.gen::<f64>()).collect();
    let b2 = sample_bandwidths(prior, &xi)?;
    Ok((b2, rng))
}

/// Synthesizes a labeled dataset: for each HR image, draws bandwidths from
/// the exponential prior, degrades, and writes the LR image, the cropped HR
/// image, the kernel grid, and finally a `manifest.jsonl` under `out_dir`.
///
/// Each record uses an rng stream derived from `(cfg.seed, record index)`, so
/// the output is reproducible record-by-record. Unreadable or undersized
/// images are skipped with a warning.
pub fn synth_dataset(
    hr_paths: &[PathBuf],
    out_dir: &Path,
    cfg: &DegradationConfig,
    prior: &ExponentialParams,
) -> Result<Vec<DatasetRecord>> {
    cfg.validate()?;
    if hr_paths.is_empty() {
        return Err(Error::Domain("no HR images given".into()));
    }
    for sub in ["lr", "hr", "kernels"] {
        let dir = out_dir.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut records = Vec::new();
    for (index, hr_path) in hr_paths.iter().enumerate() {
        let x = match crate::io::read_png(hr_path) {
            Ok(img) => img,
            Err(e) => {
                log::warn!("skipping {}: {e}", hr_path.display());
                continue;
            }
        };
        let x = match x.center_crop_to_multiple(cfg.scale) {
            Ok(img) => img,
            Err(e) => {
                log::warn!("skipping {}: {e}", hr_path.display());
                continue;
            }
        };
        let (b2, mut rng) = draw_record_bandwidths(cfg.seed, index, prior)?;
        let kernel = make_mixture_kernel(&b2, cfg.support)?;
        let y = degrade(&x, &kernel, cfg, &mut rng)?;

        let stem = hr_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "image".into());
        let id = format!("{index:04}-{stem}");
        let lr_rel = PathBuf::from("lr").join(format!("{id}.png"));
        let hr_rel = PathBuf::from("hr").join(format!("{id}.png"));
        let kernel_rel = PathBuf::from("kernels").join(format!("{id}.txt"));
        crate::io::write_png(&out_dir.join(&lr_rel), &y)?;
        crate::io::write_png(&out_dir.join(&hr_rel), &x)?;
        kernel.write_text_file(&out_dir.join(&kernel_rel))?;

        records.push(DatasetRecord {
            id,
            lr_path: lr_rel,
            hr_path: Some(hr_rel),
            kernel_path: Some(kernel_rel),
            b2_true: Some(b2),
        });
    }
    if records.is_empty() {
        return Err(Error::Domain("no readable HR images".into()));
    }
    write_manifest(&out_dir.join("manifest.jsonl"), &records)?;
    Ok(records)
}

/// Writes one JSON object per line.
pub fn write_manifest(path: &Path, records: &[DatasetRecord]) -> Result<()> {
    let mut buf = Vec::new();
    for rec in records {
        serde_json::to_writer(&mut buf, rec)
            .map_err(|e| Error::Format(format!("manifest serialization: {e}")))?;
        buf.push(b'\n');
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Parses a JSON-lines manifest, validating record invariants.
pub fn read_manifest(path: &Path) -> Result<Vec<DatasetRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: DatasetRecord = serde_json::from_str(line).map_err(|e| {
            Error::Format(format!(
                "{} line {}: {e}",
                path.display(),
                lineno + 1
            ))
        })?;
        rec.validate()?;
        records.push(rec);
    }
    Ok(records)
}
