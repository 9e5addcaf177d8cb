//! Mixture-Gaussian blur kernels and the exponential distributions over their
//! bandwidths: sampling by inverse CDF, the closed-form KL divergence between
//! exponentials, and a lossless text format for kernel grids.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

/// Bandwidths below this are clamped up; the kernel formula divides by b².
pub const BANDWIDTH_FLOOR: f64 = 1e-8;

/// Tolerance used when validating kernel grids loaded from external data.
const GRID_TOL: f64 = 1e-12;

/// Vector of squared bandwidths b², one positive entry per mixture component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct BandwidthVector(Vec<f64>);

impl BandwidthVector {
    pub fn new(b2: Vec<f64>) -> Result<Self> {
        if b2.is_empty() {
            return Err(Error::Domain("bandwidth vector must have L >= 1".into()));
        }
        if b2.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::Domain(format!(
                "bandwidths must be finite and positive, got {b2:?}"
            )));
        }
        Ok(Self(b2))
    }

    pub fn uniform(b2: f64, len: usize) -> Result<Self> {
        Self::new(vec![b2; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, l: usize) -> f64 {
        self.0[l]
    }
}

impl TryFrom<Vec<f64>> for BandwidthVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<BandwidthVector> for Vec<f64> {
    fn from(b: BandwidthVector) -> Vec<f64> {
        b.0
    }
}

/// Rate vector of an exponential distribution over bandwidths, pdf
/// `lambda * exp(-lambda t)`; mean bandwidth is `1/lambda`. Serves both as the
/// prior and as the variational posterior parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ExponentialParams(Vec<f64>);

impl ExponentialParams {
    pub fn new(rates: Vec<f64>) -> Result<Self> {
        if rates.is_empty() {
            return Err(Error::Domain("rate vector must have L >= 1".into()));
        }
        if rates.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::Domain(format!(
                "rates must be finite and positive, got {rates:?}"
            )));
        }
        Ok(Self(rates))
    }

    pub fn uniform(rate: f64, len: usize) -> Result<Self> {
        Self::new(vec![rate; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn rates(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, l: usize) -> f64 {
        self.0[l]
    }
}

/// Discrete, sum-normalized blur kernel on an odd P x P support.
///
/// Kernels built from a bandwidth vector keep per-component 1-D Gaussian
/// profiles so convolution can run separably; kernels loaded from grids
/// (files, test fixtures) convolve directly.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureKernel {
    support: usize,
    grid: Vec<f64>,
    source_b2: Option<BandwidthVector>,
    /// 1-D profiles p_l with outer(p_l, p_l) the l-th unnormalized component.
    profiles: Vec<Vec<f64>>,
    /// Scale so that (scale / L) * sum_l outer(p_l, p_l) equals `grid`.
    profile_scale: f64,
}

impl MixtureKernel {
    /// Evaluates the L-component isotropic Gaussian mixture at integer offsets
    /// and renormalizes the grid to sum one.
    pub fn from_bandwidths(b2: &BandwidthVector, support: usize) -> Result<Self> {
        check_support(support)?;
        let c = (support as isize - 1) / 2;
        let l_count = b2.len();

        let mut profiles = Vec::with_capacity(l_count);
        for l in 0..l_count {
            let b = b2.get(l);
            let norm = 1.0 / (2.0 * std::f64::consts::PI * b).sqrt();
            let profile: Vec<f64> = (-c..=c)
                .map(|u| norm * (-((u * u) as f64) / (2.0 * b)).exp())
                .collect();
            profiles.push(profile);
        }

        let mut grid = vec![0.0; support * support];
        for b in b2.values() {
            let amp = 1.0 / (2.0 * std::f64::consts::PI * b);
            for (ri, py) in (-c..=c).enumerate() {
                for (ci, px) in (-c..=c).enumerate() {
                    let r2 = (px * px + py * py) as f64;
                    grid[ri * support + ci] += amp * (-r2 / (2.0 * b)).exp() / l_count as f64;
                }
            }
        }
        let sum: f64 = grid.iter().sum();
        if !sum.is_finite() || sum <= 0.0 {
            return Err(Error::Numerical(format!(
                "kernel grid sum degenerate ({sum}) for b2 {:?}",
                b2.values()
            )));
        }
        for v in &mut grid {
            *v /= sum;
        }
        Ok(Self {
            support,
            grid,
            source_b2: Some(b2.clone()),
            profiles,
            profile_scale: 1.0 / (sum * l_count as f64),
        })
    }

    /// Wraps an explicit grid (nonnegative, sum one). Unlike
    /// [`MixtureKernel::from_bandwidths`] the grid need not be symmetric, so
    /// external and test kernels of any shape can be carried.
    pub fn from_grid(grid: Vec<f64>, support: usize) -> Result<Self> {
        check_support(support)?;
        if grid.len() != support * support {
            return Err(Error::Dimension(format!(
                "grid length {} does not match support {support}",
                grid.len()
            )));
        }
        if grid.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Domain("kernel entries must be finite and >= 0".into()));
        }
        let sum: f64 = grid.iter().sum();
        if (sum - 1.0).abs() > GRID_TOL {
            return Err(Error::Domain(format!(
                "kernel grid must sum to 1 (got {sum})"
            )));
        }
        Ok(Self {
            support,
            grid,
            source_b2: None,
            profiles: Vec::new(),
            profile_scale: 0.0,
        })
    }

    pub fn support(&self) -> usize {
        self.support
    }

    /// Half-width (P-1)/2.
    pub fn radius(&self) -> usize {
        (self.support - 1) / 2
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.grid[i * self.support + j]
    }

    pub fn source_b2(&self) -> Option<&BandwidthVector> {
        self.source_b2.as_ref()
    }

    pub(crate) fn separable_profiles(&self) -> Option<(&[Vec<f64>], f64)> {
        if self.profiles.is_empty() {
            None
        } else {
            Some((&self.profiles, self.profile_scale))
        }
    }

    /// Centered zero-padding to a larger odd support.
    pub fn pad_to(&self, support: usize) -> Result<Self> {
        check_support(support)?;
        if support < self.support {
            return Err(Error::Dimension(format!(
                "cannot pad support {} down to {support}",
                self.support
            )));
        }
        if support == self.support {
            return Ok(self.clone());
        }
        let off = (support - self.support) / 2;
        let mut grid = vec![0.0; support * support];
        for i in 0..self.support {
            for j in 0..self.support {
                grid[(i + off) * support + (j + off)] = self.get(i, j);
            }
        }
        Ok(Self {
            support,
            grid,
            source_b2: self.source_b2.clone(),
            profiles: Vec::new(),
            profile_scale: 0.0,
        })
    }

    /// Squared Frobenius distance between two grids of equal support.
    pub fn frobenius_sq_distance(&self, other: &Self) -> Result<f64> {
        if self.support != other.support {
            return Err(Error::Dimension(format!(
                "kernel support mismatch: {} vs {}",
                self.support, other.support
            )));
        }
        Ok(self
            .grid
            .iter()
            .zip(&other.grid)
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    }

    /// Text form: first line "P P", then P rows of P values at 17 significant
    /// digits so the round-trip is bit-exact.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} {}", self.support, self.support);
        for i in 0..self.support {
            let row: Vec<String> = (0..self.support)
                .map(|j| format!("{:.16e}", self.get(i, j)))
                .collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty kernel text".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|e| Error::Format(format!("bad kernel header '{header}': {e}")))
            })
            .collect::<Result<_>>()?;
        if dims.len() != 2 || dims[0] != dims[1] {
            return Err(Error::Format(format!(
                "kernel header must be 'P P', got '{header}'"
            )));
        }
        let p = dims[0];
        let mut grid = Vec::with_capacity(p * p);
        for line in lines {
            for tok in line.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|e| Error::Format(format!("bad kernel value '{tok}': {e}")))?;
                grid.push(v);
            }
        }
        if grid.len() != p * p {
            return Err(Error::Format(format!(
                "kernel text has {} values, expected {}",
                grid.len(),
                p * p
            )));
        }
        Self::from_grid(grid, p)
    }

    pub fn write_text_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read_text_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

fn check_support(support: usize) -> Result<()> {
    if support == 0 || support.is_multiple_of(2) {
        return Err(Error::Domain(format!(
            "kernel support must be odd and >= 1, got {support}"
        )));
    }
    Ok(())
}

/// Builds the discrete mixture kernel for bandwidth vector `b2` on an odd
/// `support`, renormalized to unit sum.
pub fn make_mixture_kernel(b2: &BandwidthVector, support: usize) -> Result<MixtureKernel> {
    MixtureKernel::from_bandwidths(b2, support)
}

/// Inverse-CDF reparameterization: b²_l = -ln(1 - xi_l) / rate_l, clamped below
/// at [`BANDWIDTH_FLOOR`]. Deterministic and differentiable in the rates.
pub fn sample_bandwidths(lambda_hat: &ExponentialParams, xi: &[f64]) -> Result<BandwidthVector> {
    if xi.len() != lambda_hat.len() {
        return Err(Error::Dimension(format!(
            "got {} uniforms for {} rates",
            xi.len(),
            lambda_hat.len()
        )));
    }
    let mut b2 = Vec::with_capacity(xi.len());
    for (u, rate) in xi.iter().zip(lambda_hat.rates()) {
        if !(0.0..1.0).contains(u) {
            return Err(Error::Domain(format!("uniform draw {u} outside [0,1)")));
        }
        b2.push((-(1.0 - u).ln() / rate).max(BANDWIDTH_FLOOR));
    }
    BandwidthVector::new(b2)
}

/// d b²_l / d rate_l of the reparameterization above: ln(1-xi)/rate², and zero
/// where the floor clamp is active.
pub fn sample_bandwidths_jacobian(lambda_hat: &ExponentialParams, xi: &[f64]) -> Result<Vec<f64>> {
    if xi.len() != lambda_hat.len() {
        return Err(Error::Dimension(format!(
            "got {} uniforms for {} rates",
            xi.len(),
            lambda_hat.len()
        )));
    }
    let mut out = Vec::with_capacity(xi.len());
    for (u, rate) in xi.iter().zip(lambda_hat.rates()) {
        if !(0.0..1.0).contains(u) {
            return Err(Error::Domain(format!("uniform draw {u} outside [0,1)")));
        }
        let raw = -(1.0 - u).ln() / rate;
        if raw < BANDWIDTH_FLOOR {
            out.push(0.0);
        } else {
            out.push((1.0 - u).ln() / (rate * rate));
        }
    }
    Ok(out)
}

/// Closed-form KL divergence between exponential distributions,
/// sum_l [ ln(q_l/p_l) + p_l/q_l - 1 ] with q the variational rates and p the
/// prior rates. Nonnegative, zero iff the rate vectors coincide.
pub fn kl_exponential(lambda_hat: &ExponentialParams, lambda_prior: &ExponentialParams) -> Result<f64> {
    if lambda_hat.len() != lambda_prior.len() {
        return Err(Error::Dimension(format!(
            "KL rate length mismatch: {} vs {}",
            lambda_hat.len(),
            lambda_prior.len()
        )));
    }
    Ok(lambda_hat
        .rates()
        .iter()
        .zip(lambda_prior.rates())
        .map(|(q, p)| (q / p).ln() + p / q - 1.0)
        .sum())
}

/// Gradient of [`kl_exponential`] with respect to the variational rates:
/// d/dq_l = 1/q_l - p_l/q_l².
pub fn kl_exponential_grad(
    lambda_hat: &ExponentialParams,
    lambda_prior: &ExponentialParams,
) -> Result<Vec<f64>> {
    if lambda_hat.len() != lambda_prior.len() {
        return Err(Error::Dimension(format!(
            "KL rate length mismatch: {} vs {}",
            lambda_hat.len(),
            lambda_prior.len()
        )));
    }
    Ok(lambda_hat
        .rates()
        .iter()
        .zip(lambda_prior.rates())
        .map(|(q, p)| 1.0 / q - p / (q * q))
        .collect())
}

/// Mean of the variational posterior, 1/rate per component. Reporting helper.
pub fn posterior_mean_bandwidth(lambda_hat: &ExponentialParams) -> BandwidthVector {
    BandwidthVector::new(lambda_hat.rates().iter().map(|r| 1.0 / r).collect())
        .expect("positive rates give positive means")
}
