//! Generalized EM solver for blind and non-blind restoration.
//!
//! The solver alternates two partial ascent steps on the Monte Carlo bound
//! `F̂` held together by common random numbers: an expectation step that
//! climbs `F̂` over the posterior rates `λ̂` (log-space gradient ascent with a
//! backtracking line search), and a maximization step that improves the image
//! by a capped conjugate-gradient solve of the draw-averaged quadratic data
//! fit plus a small ridge toward the bicubic upsample. Because the draws are
//! fixed for the whole run, `F̂` is a deterministic function and the trace it
//! leaves is non-decreasing at every half-step — the defining property of a
//! generalized EM iteration, and the one the tests pin down.

use crate::degrade::DegradationConfig;
use crate::elbo::{elbo, grad_elbo_lambda, ElboEstimate, McDraws};
use crate::error::{Error, Result};
use crate::kernel::{make_mixture_kernel, sample_bandwidths, ExponentialParams, MixtureKernel};
use crate::ops::{conv2d, conv2d_adjoint, downsample, downsample_adjoint, upsample_bicubic};
use crate::rng::rng_for;
use crate::tensor::ImageTensor;

/// Armijo sufficient-increase constant for the rate line search.
const ARMIJO_C: f64 = 1e-4;

/// Cap on the initial log-rate movement per line-search iteration. Early in a
/// blind run the rate gradient is enormous (thousands of nats per unit of
/// `ln λ̂`) and points toward the trivial no-blur explanation of the data;
/// bounding each trial step keeps the rates and the image evolving on
/// comparable time scales so the image can sharpen before the rates commit.
const MAX_LOG_RATE_STEP: f64 = 0.25;

/// Maximum number of step halvings before the rate line search gives up.
const MAX_BACKTRACKS: usize = 30;

/// Relative residual tolerance for the conjugate-gradient image solve.
const CG_TOL: f64 = 1e-8;

/// Controls for the alternating solver.
#[derive(Debug, Clone)]
pub struct GemConfig {
    /// Maximum outer (E-step + M-step) iterations. Zero returns the
    /// initialization unchanged.
    pub max_outer: usize,
    /// Gradient-ascent iterations per E-step.
    pub e_steps: usize,
    /// Conjugate-gradient iteration cap per M-step.
    pub m_cg_iters: usize,
    /// Stop when the relative F̂ change over one outer iteration falls below
    /// this.
    pub tol_rel: f64,
    /// Weight of the anchor term `ridge·‖x − bicubic(y)‖²` that regularizes
    /// the otherwise underdetermined s > 1 problem.
    pub ridge: f64,
    /// Monte Carlo draws shared across the whole run.
    pub n_mc: usize,
    /// Master seed for the draw table.
    pub seed: u64,
    /// Initial posterior rates (defaults to the prior).
    pub lambda_init: ExponentialParams,
    /// Prior rates used in the KL term.
    pub lambda_prior: ExponentialParams,
    /// Forward-model parameters (scale, noise level, support, boundary).
    pub degradation: DegradationConfig,
}

impl Default for GemConfig {
    fn default() -> Self {
        let rates = ExponentialParams::uniform(0.5, 1).expect("positive rate");
        Self {
            max_outer: 50,
            e_steps: 5,
            m_cg_iters: 20,
            tol_rel: 1e-5,
            ridge: 1e-3,
            n_mc: 8,
            seed: 0,
            lambda_init: rates.clone(),
            lambda_prior: rates,
            degradation: DegradationConfig::default(),
        }
    }
}

impl GemConfig {
    /// Checks field ranges and cross-field consistency.
    pub fn validate(&self) -> Result<()> {
        self.degradation.validate()?;
        if self.tol_rel <= 0.0 || !self.tol_rel.is_finite() {
            return Err(Error::Domain(format!(
                "tol_rel must be positive and finite, got {}",
                self.tol_rel
            )));
        }
        if self.ridge < 0.0 || !self.ridge.is_finite() {
            return Err(Error::Domain(format!(
                "ridge must be nonnegative and finite, got {}",
                self.ridge
            )));
        }
        if self.n_mc == 0 {
            return Err(Error::Domain("n_mc must be at least 1".into()));
        }
        if self.e_steps == 0 {
            return Err(Error::Domain("e_steps must be at least 1".into()));
        }
        if self.m_cg_iters == 0 {
            return Err(Error::Domain("m_cg_iters must be at least 1".into()));
        }
        if self.lambda_init.len() != self.lambda_prior.len() {
            return Err(Error::Dimension(format!(
                "lambda_init has {} components but lambda_prior has {}",
                self.lambda_init.len(),
                self.lambda_prior.len()
            )));
        }
        Ok(())
    }
}

/// Everything the solver knows when it stops.
#[derive(Debug, Clone)]
pub struct GemState {
    /// Restored image.
    pub x_hat: ImageTensor,
    /// Final posterior rates; `1/λ̂` is the posterior mean bandwidth.
    pub lambda_hat: ExponentialParams,
    /// One bound estimate per completed half-step, in execution order.
    pub elbo_trace: Vec<ElboEstimate>,
    /// Number of completed outer iterations.
    pub outer_iter: usize,
}

/// Ascends `F̂` over the posterior rates with `x` held fixed.
///
/// Runs `cfg.e_steps` iterations of gradient ascent on `log λ̂` (positivity by
/// construction), each step accepted only if it clears the Armijo sufficient-
/// increase test on the fixed draws; a step is halved up to thirty times
/// before the search concedes. The returned rates therefore never decrease
/// `F̂`, and a stationary starting point is returned unchanged.
pub fn e_step(
    y: &ImageTensor,
    x: &ImageTensor,
    lambda_hat_in: &ExponentialParams,
    lambda_prior: &ExponentialParams,
    cfg: &GemConfig,
    draws: &McDraws,
) -> Result<ExponentialParams> {
    let mut lambda = lambda_hat_in.clone();
    let mut f_cur = elbo(y, x, &lambda, lambda_prior, &cfg.degradation, draws)?.value;
    if !f_cur.is_finite() {
        return Err(Error::Numerical(format!(
            "E-step objective is non-finite at the starting rates {:?}",
            lambda.rates()
        )));
    }
    for _ in 0..cfg.e_steps {
        let grad = grad_elbo_lambda(y, x, &lambda, lambda_prior, &cfg.degradation, draws)?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite rate gradient {:?} at rates {:?} (F̂ = {f_cur})",
                grad,
                lambda.rates()
            )));
        }
        // Chain rule onto θ = ln λ̂: dF/dθ_l = λ̂_l · dF/dλ̂_l.
        let ascent: Vec<f64> = grad
            .iter()
            .zip(lambda.rates())
            .map(|(g, r)| g * r)
            .collect();
        let slope_sq: f64 = ascent.iter().map(|d| d * d).sum();
        let max_component = ascent.iter().fold(0.0f64, |a, d| a.max(d.abs()));
        if max_component == 0.0 {
            break; // stationary point: nothing to climb
        }
        let t0 = (1.0 / max_component.max(1.0)).min(MAX_LOG_RATE_STEP / max_component);
        let mut accepted = false;
        for halving in 0..=MAX_BACKTRACKS {
            let t = t0 * 0.5f64.powi(halving as i32);
            let candidate: Vec<f64> = lambda
                .rates()
                .iter()
                .zip(&ascent)
                .map(|(r, d)| (r.ln() + t * d).exp())
                .collect();
            let Ok(candidate) = ExponentialParams::new(candidate) else {
                continue; // overflowed to 0/inf: treat as a rejected step
            };
            let f_new = elbo(y, x, &candidate, lambda_prior, &cfg.degradation, draws)?.value;
            if f_new.is_finite() && f_new >= f_cur + ARMIJO_C * t * slope_sq {
                lambda = candidate;
                f_cur = f_new;
                accepted = true;
                break;
            }
        }
        if !accepted {
            break; // no admissible ascent step at this resolution
        }
    }
    Ok(lambda)
}

/// Builds one blur kernel per Monte Carlo draw at the current rates.
fn kernels_for_draws(
    lambda_hat: &ExponentialParams,
    cfg: &DegradationConfig,
    draws: &McDraws,
) -> Result<Vec<MixtureKernel>> {
    (0..draws.n_mc())
        .map(|m| {
            let b2 = sample_bandwidths(lambda_hat, draws.row(m))?;
            make_mixture_kernel(&b2, cfg.support)
        })
        .collect()
}

/// Applies the forward operator `D S_k` for one kernel.
fn forward(x: &ImageTensor, k: &MixtureKernel, cfg: &DegradationConfig) -> Result<ImageTensor> {
    downsample(&conv2d(x, k, cfg.boundary)?, cfg.scale)
}

/// Applies the adjoint `S_kᵀ Dᵀ` for one kernel.
fn adjoint(
    u: &ImageTensor,
    k: &MixtureKernel,
    hr_h: usize,
    hr_w: usize,
    cfg: &DegradationConfig,
) -> Result<ImageTensor> {
    conv2d_adjoint(&downsample_adjoint_to(u, hr_h, hr_w, cfg.scale)?, k, cfg.boundary)
}

/// Zero-filled upsampling to an explicit target shape (the adjoint of
/// top-left-phase downsampling when the target is `s` times the source).
fn downsample_adjoint_to(
    u: &ImageTensor,
    hr_h: usize,
    hr_w: usize,
    s: usize,
) -> Result<ImageTensor> {
    let up = downsample_adjoint(u, s)?;
    if up.height() != hr_h || up.width() != hr_w {
        return Err(Error::Dimension(format!(
            "adjoint target {}×{} is not {}× the observation {}×{}",
            hr_h,
            hr_w,
            s,
            u.height(),
            u.width()
        )));
    }
    Ok(up)
}

/// Core of the M-step: capped CG on the draw-averaged normal equations, then
/// a safeguard line search so the pure data part of `F̂` cannot decrease.
///
/// The CG target is `min_x (1/n_mc)·Σ_m ‖y − D S_m x‖²/(2σ²) + ridge·‖x −
/// anchor‖²` with `anchor = bicubic(y)`. The ridge is not part of `F̂`, so the
/// full CG point may lower the bound; the safeguard shrinks the step along
/// `x_cg − x_in` until the data term is non-increasing (exact because the
/// objective is quadratic along the segment).
fn m_step_kernels(
    y: &ImageTensor,
    kernels: &[MixtureKernel],
    x_in: &ImageTensor,
    cfg: &GemConfig,
) -> Result<ImageTensor> {
    let deg = &cfg.degradation;
    let sigma2 = deg.sigma_n * deg.sigma_n;
    if sigma2 <= 0.0 {
        return Err(Error::Domain(
            "M-step requires a positive noise level".into(),
        ));
    }
    let n_mc = kernels.len() as f64;
    let inv = 1.0 / (sigma2 * n_mc);
    let (hr_h, hr_w) = (x_in.height(), x_in.width());

    let anchor = upsample_bicubic(y, deg.scale)?;
    if !anchor.same_shape(x_in) {
        return Err(Error::Dimension(format!(
            "M-step image {}×{} does not match {}× the observation {}×{}",
            hr_h,
            hr_w,
            deg.scale,
            y.height(),
            y.width()
        )));
    }

    // A v = (1/(σ²·n_mc))·Σ_m S_mᵀDᵀD S_m v + 2·ridge·v
    let apply_a = |v: &ImageTensor| -> Result<ImageTensor> {
        let mut out = v.map(|t| 2.0 * cfg.ridge * t)?;
        for k in kernels {
            let down = forward(v, k, deg)?;
            out = out.axpy(inv, &adjoint(&down, k, hr_h, hr_w, deg)?)?;
        }
        Ok(out)
    };
    let mut b = anchor.map(|t| 2.0 * cfg.ridge * t)?;
    for k in kernels {
        b = b.axpy(inv, &adjoint(y, k, hr_h, hr_w, deg)?)?;
    }

    // Conjugate gradient from the incoming image.
    let mut x = x_in.clone();
    let mut r = b.sub(&apply_a(&x)?)?;
    let mut p = r.clone();
    let mut rs = r.norm_sq();
    let tol_sq = (CG_TOL * b.norm()).powi(2);
    for _ in 0..cfg.m_cg_iters {
        if rs <= tol_sq {
            break;
        }
        let ap = apply_a(&p)?;
        let curvature = p.dot(&ap)?;
        if curvature <= 0.0 || !curvature.is_finite() {
            log::warn!(
                "CG breakdown in M-step (curvature {curvature:.3e}); returning best iterate"
            );
            break;
        }
        let alpha = rs / curvature;
        x = x.axpy(alpha, &p)?;
        r = r.axpy(-alpha, &ap)?;
        let rs_new = r.norm_sq();
        p = r.axpy(rs_new / rs, &p)?;
        rs = rs_new;
    }
    if !x.is_finite() {
        return Err(Error::Numerical(
            "conjugate gradient produced non-finite image values".into(),
        ));
    }

    // Safeguard: along d = x − x_in the data misfit is the exact quadratic
    // q(t) = q(0) − α·t + β·t², so pick the largest t ∈ [0, 1] that does not
    // increase it.
    let d = x.sub(x_in)?;
    let mut alpha = 0.0;
    let mut beta = 0.0;
    for k in kernels {
        let residual = y.sub(&forward(x_in, k, deg)?)?;
        let dd = forward(&d, k, deg)?;
        alpha += inv * residual.dot(&dd)?;
        beta += 0.5 * inv * dd.norm_sq();
    }
    let t = if alpha >= beta {
        1.0 // full CG step already lowers the data misfit
    } else if alpha > 0.0 {
        alpha / (2.0 * beta) // unconstrained minimizer of q on the segment
    } else {
        0.0 // CG moved purely along the ridge: keep the incoming image
    };
    let out = x_in.axpy(t, &d)?;
    if !out.is_finite() {
        return Err(Error::Numerical(
            "M-step produced non-finite image values".into(),
        ));
    }
    Ok(out)
}

/// Improves the image with the rates held fixed (partial M-step).
///
/// Solves the draw-averaged quadratic restoration by capped conjugate
/// gradient and never decreases `F̂` on the fixed draws. CG breakdown from
/// numerical error is logged and the best iterate kept.
pub fn m_step(
    y: &ImageTensor,
    lambda_hat: &ExponentialParams,
    x_in: &ImageTensor,
    cfg: &GemConfig,
    draws: &McDraws,
) -> Result<ImageTensor> {
    let kernels = kernels_for_draws(lambda_hat, &cfg.degradation, draws)?;
    m_step_kernels(y, &kernels, x_in, cfg)
}

/// Runs the full blind solver: E-step and M-step alternate on one shared
/// draw table until the relative change of `F̂` falls below `cfg.tol_rel` or
/// `cfg.max_outer` is reached.
///
/// The image starts at the bicubic upsample and the rates at
/// `cfg.lambda_init`; the trace holds one estimate per completed half-step.
/// With `max_outer = 0` the initialization is returned unchanged.
pub fn solve_blind(y: &ImageTensor, cfg: &GemConfig) -> Result<GemState> {
    cfg.validate()?;
    let deg = &cfg.degradation;
    let mut rng = rng_for(cfg.seed, "gem-draws");
    let draws = McDraws::sample(&mut rng, cfg.n_mc, cfg.lambda_init.len())?;

    let mut x = upsample_bicubic(y, deg.scale)?;
    let mut lambda = cfg.lambda_init.clone();
    let mut trace: Vec<ElboEstimate> = Vec::with_capacity(2 * cfg.max_outer);
    let mut f_prev = elbo(y, &x, &lambda, &cfg.lambda_prior, deg, &draws)?.value;
    let mut outer_iter = 0;

    for outer in 1..=cfg.max_outer {
        lambda = e_step(y, &x, &lambda, &cfg.lambda_prior, cfg, &draws)?;
        trace.push(elbo(y, &x, &lambda, &cfg.lambda_prior, deg, &draws)?);

        x = m_step(y, &lambda, &x, cfg, &draws)?;
        let after_m = elbo(y, &x, &lambda, &cfg.lambda_prior, deg, &draws)?;
        let f_now = after_m.value;
        trace.push(after_m);

        outer_iter = outer;
        if (f_now - f_prev).abs() / f_prev.abs().max(1.0) < cfg.tol_rel {
            break;
        }
        f_prev = f_now;
    }

    if !x.is_finite() {
        return Err(Error::Numerical(
            "solver produced non-finite image values".into(),
        ));
    }
    Ok(GemState {
        x_hat: x,
        lambda_hat: lambda,
        elbo_trace: trace,
        outer_iter,
    })
}

/// Restores with a known blur: one M-step with the kernel fixed at `k_{b²}`
/// (no bandwidth sampling), starting from the bicubic upsample.
pub fn solve_nonblind(
    y: &ImageTensor,
    b2: &crate::kernel::BandwidthVector,
    cfg: &GemConfig,
) -> Result<ImageTensor> {
    cfg.validate()?;
    let kernel = make_mixture_kernel(b2, cfg.degradation.support)?;
    let x0 = upsample_bicubic(y, cfg.degradation.scale)?;
    m_step_kernels(y, &[kernel], &x0, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degrade::{degrade, log_likelihood};
    use crate::kernel::BandwidthVector;
    use crate::metrics::psnr;
    use crate::rng::rng_for;
    use crate::tensor::BoundaryMode;
    use rand::Rng as _;

    /// Blurred noise plus a gentle ramp: a stand-in for natural-image
    /// smoothness (white noise makes blind bandwidth recovery degenerate).
    fn smooth_image(seed: u64, h: usize, w: usize) -> ImageTensor {
        let mut rng = rng_for(seed, "gem-test-image");
        let noise = ImageTensor::from_fn(1, h, w, |_, _, _| rng.gen_range(0.0..1.0)).unwrap();
        let blur = make_mixture_kernel(&BandwidthVector::new(vec![3.0]).unwrap(), 13).unwrap();
        let low = conv2d(&noise, &blur, BoundaryMode::Replicate).unwrap();
        ImageTensor::from_fn(1, h, w, |_, i, j| {
            let ramp = 0.3 * (i as f64 / h as f64) + 0.2 * (j as f64 / w as f64);
            (0.25 + 0.5 * low.get(0, i, j) + ramp).clamp(0.0, 1.0)
        })
        .unwrap()
    }

    fn test_config() -> GemConfig {
        GemConfig {
            degradation: DegradationConfig {
                scale: 2,
                sigma_n: 0.01,
                support: 13,
                boundary: BoundaryMode::Circular,
                seed: 0,
            },
            ..GemConfig::default()
        }
    }

    fn observe(x: &ImageTensor, b2: f64, cfg: &GemConfig, noise_seed: u64) -> ImageTensor {
        let k = make_mixture_kernel(
            &BandwidthVector::new(vec![b2]).unwrap(),
            cfg.degradation.support,
        )
        .unwrap();
        let mut rng = rng_for(noise_seed, "gem-test-noise");
        degrade(x, &k, &cfg.degradation, &mut rng).unwrap()
    }

    fn trace_values(state: &GemState) -> Vec<f64> {
        state.elbo_trace.iter().map(|e| e.value).collect()
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        let cfg = test_config();
        assert!(cfg.validate().is_ok());
        let mut bad = cfg.clone();
        bad.tol_rel = 0.0;
        assert!(matches!(bad.validate(), Err(Error::Domain(_))));
        let mut bad = cfg.clone();
        bad.ridge = -1.0;
        assert!(matches!(bad.validate(), Err(Error::Domain(_))));
        let mut bad = cfg.clone();
        bad.n_mc = 0;
        assert!(matches!(bad.validate(), Err(Error::Domain(_))));
        let mut bad = cfg;
        bad.lambda_prior = ExponentialParams::uniform(0.5, 2).unwrap();
        assert!(matches!(bad.validate(), Err(Error::Dimension(_))));
    }

    #[test]
    fn e_step_stationary_rates_unchanged() {
        // A draw at ξ ≈ 0 floors every bandwidth, killing the pathwise term,
        // and λ̂ = prior kills the KL gradient: the rates are stationary.
        let cfg = test_config();
        let x = smooth_image(1, 16, 16);
        let y = observe(&x, 1.0, &cfg, 2);
        let draws = McDraws::new(vec![vec![1e-300]]).unwrap();
        let lambda = cfg.lambda_prior.clone();
        let out = e_step(&y, &x, &lambda, &cfg.lambda_prior, &cfg, &draws).unwrap();
        assert_eq!(out.rates(), lambda.rates());
    }

    #[test]
    fn e_step_never_decreases_bound() {
        let cfg = test_config();
        let x = smooth_image(3, 16, 16);
        let y = observe(&x, 2.0, &cfg, 4);
        let mut rng = rng_for(5, "draws");
        let draws = McDraws::sample(&mut rng, 8, 1).unwrap();
        for rate in [0.1, 0.5, 2.0, 10.0] {
            let lambda = ExponentialParams::uniform(rate, 1).unwrap();
            let before = elbo(&y, &x, &lambda, &cfg.lambda_prior, &cfg.degradation, &draws)
                .unwrap()
                .value;
            let out = e_step(&y, &x, &lambda, &cfg.lambda_prior, &cfg, &draws).unwrap();
            let after = elbo(&y, &x, &out, &cfg.lambda_prior, &cfg.degradation, &draws)
                .unwrap()
                .value;
            assert!(
                after >= before,
                "E-step decreased F̂ from {before} to {after} at rate {rate}"
            );
        }
    }

    #[test]
    fn e_step_recovers_bandwidth_scale() {
        // With the ground-truth image fixed, the converged posterior mean
        // bandwidth should sit near the likelihood-optimal b² found by grid
        // search.
        let mut cfg = test_config();
        cfg.e_steps = 200;
        let x = smooth_image(42, 32, 32);
        let y = observe(&x, 2.0, &cfg, 7);

        let mut grid_best = (f64::NEG_INFINITY, 0.0);
        let mut b2 = 0.1;
        while b2 <= 6.0 {
            let ll = log_likelihood(
                &y,
                &x,
                &BandwidthVector::new(vec![b2]).unwrap(),
                &cfg.degradation,
            )
            .unwrap();
            if ll > grid_best.0 {
                grid_best = (ll, b2);
            }
            b2 *= 1.05;
        }

        let mut rng = rng_for(12, "draws");
        let draws = McDraws::sample(&mut rng, 8, 1).unwrap();
        let lambda = e_step(&y, &x, &cfg.lambda_prior, &cfg.lambda_prior, &cfg, &draws).unwrap();
        let recovered = 1.0 / lambda.get(0);
        let ratio = recovered / grid_best.1;
        assert!(
            (0.75..=1.25).contains(&ratio),
            "posterior mean bandwidth {recovered:.3} vs grid optimum {:.3} (ratio {ratio:.2})",
            grid_best.1
        );
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn m_step_matches_dense_solve() {
        // On a tiny problem the normal equations can be solved densely; a
        // generously capped CG must land on the same image.
        let mut cfg = test_config();
        cfg.m_cg_iters = 400;
        cfg.ridge = 50.0;
        cfg.degradation.sigma_n = 0.05;
        cfg.degradation.support = 5;
        let x_true = smooth_image(8, 16, 16);
        let y = observe(&x_true, 1.5, &cfg, 9);
        let lambda = ExponentialParams::uniform(0.8, 1).unwrap();
        let mut rng = rng_for(11, "draws");
        let draws = McDraws::sample(&mut rng, 4, 1).unwrap();
        let kernels = kernels_for_draws(&lambda, &cfg.degradation, &draws).unwrap();

        let n = 16 * 16;
        let sigma2 = cfg.degradation.sigma_n * cfg.degradation.sigma_n;
        let inv = 1.0 / (sigma2 * kernels.len() as f64);
        let apply_a = |v: &ImageTensor| -> ImageTensor {
            let mut out = v.map(|t| 2.0 * cfg.ridge * t).unwrap();
            for k in &kernels {
                let down = forward(v, k, &cfg.degradation).unwrap();
                out = out
                    .axpy(inv, &adjoint(&down, k, 16, 16, &cfg.degradation).unwrap())
                    .unwrap();
            }
            out
        };
        // Assemble A column by column, then solve A z = b by Gaussian
        // elimination with partial pivoting.
        let mut a = vec![vec![0.0f64; n]; n];
        for col in 0..n {
            let mut e = ImageTensor::zeros(1, 16, 16);
            e.as_mut_slice()[col] = 1.0;
            let ae = apply_a(&e);
            for row in 0..n {
                a[row][col] = ae.as_slice()[row];
            }
        }
        let anchor = upsample_bicubic(&y, 2).unwrap();
        let mut bvec = anchor.map(|t| 2.0 * cfg.ridge * t).unwrap();
        for k in &kernels {
            bvec = bvec
                .axpy(inv, &adjoint(&y, k, 16, 16, &cfg.degradation).unwrap())
                .unwrap();
        }
        let mut rhs = bvec.as_slice().to_vec();
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
                .unwrap();
            a.swap(col, pivot);
            rhs.swap(col, pivot);
            for row in col + 1..n {
                let f = a[row][col] / a[col][col];
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                rhs[row] -= f * rhs[col];
            }
        }
        let mut z = vec![0.0f64; n];
        for row in (0..n).rev() {
            let mut s = rhs[row];
            for k in row + 1..n {
                s -= a[row][k] * z[k];
            }
            z[row] = s / a[row][row];
        }

        let x0 = upsample_bicubic(&y, 2).unwrap();
        let cg = m_step_kernels(&y, &kernels, &x0, &cfg).unwrap();
        let mut max_err = 0.0f64;
        for (got, want) in cg.as_slice().iter().zip(&z) {
            max_err = max_err.max((got - want).abs());
        }
        assert!(max_err < 1e-6, "CG vs dense solve differ by {max_err:.3e}");
    }

    #[test]
    fn m_step_never_decreases_bound() {
        let cfg = test_config();
        let x_true = smooth_image(13, 32, 32);
        let y = observe(&x_true, 2.5, &cfg, 14);
        let lambda = ExponentialParams::uniform(0.4, 1).unwrap();
        let mut rng = rng_for(15, "draws");
        let draws = McDraws::sample(&mut rng, 8, 1).unwrap();
        let x0 = upsample_bicubic(&y, 2).unwrap();
        let before = elbo(&y, &x0, &lambda, &cfg.lambda_prior, &cfg.degradation, &draws)
            .unwrap()
            .value;
        let x1 = m_step(&y, &lambda, &x0, &cfg, &draws).unwrap();
        let after = elbo(&y, &x1, &lambda, &cfg.lambda_prior, &cfg.degradation, &draws)
            .unwrap()
            .value;
        assert!(
            after >= before - 1e-9 * before.abs(),
            "M-step decreased F̂ from {before} to {after}"
        );
    }

    #[test]
    fn m_step_large_ridge_pins_anchor() {
        let mut cfg = test_config();
        cfg.ridge = 1e9;
        let x_true = smooth_image(17, 16, 16);
        let y = observe(&x_true, 1.0, &cfg, 18);
        let lambda = ExponentialParams::uniform(1.0, 1).unwrap();
        let mut rng = rng_for(19, "draws");
        let draws = McDraws::sample(&mut rng, 4, 1).unwrap();
        let anchor = upsample_bicubic(&y, 2).unwrap();
        let out = m_step(&y, &lambda, &anchor, &cfg, &draws).unwrap();
        let rel = out.sub(&anchor).unwrap().norm() / anchor.norm();
        assert!(rel < 1e-6, "dominant ridge should pin the anchor, got {rel:.3e}");
    }

    #[test]
    fn m_step_identity_observation_recovers_y() {
        // Scale 1, delta kernel, no ridge: the data term alone determines x
        // and the exact answer is y itself.
        let mut cfg = test_config();
        cfg.degradation.scale = 1;
        cfg.degradation.support = 1;
        cfg.ridge = 0.0;
        cfg.m_cg_iters = 50;
        let y = smooth_image(20, 16, 16);
        let kernel = MixtureKernel::from_grid(vec![1.0], 1).unwrap();
        let x0 = ImageTensor::constant(1, 16, 16, 0.5).unwrap();
        let out = m_step_kernels(&y, &[kernel], &x0, &cfg).unwrap();
        let err = out.sub(&y).unwrap().max_abs();
        assert!(err < 1e-8, "identity observation not recovered, err {err:.3e}");
    }

    #[test]
    fn solve_blind_trace_is_monotone() {
        let cfg = GemConfig {
            max_outer: 12,
            ..test_config()
        };
        let x_true = smooth_image(21, 64, 64);
        let y = observe(&x_true, 2.0, &cfg, 22);
        let state = solve_blind(&y, &cfg).unwrap();
        let values = trace_values(&state);
        assert!(!values.is_empty());
        for w in values.windows(2) {
            assert!(
                w[1] >= w[0] - 1e-9 * w[0].abs(),
                "trace decreased: {} -> {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn solve_blind_beats_bicubic() {
        // A handful of outer iterations at a noise-balanced ridge: the
        // surrogate's global optimum is the trivial no-blur pair, so a
        // bounded run stops while the restoration is still ahead.
        let cfg = GemConfig {
            max_outer: 3,
            ridge: 200.0,
            ..test_config()
        };
        let x_true = smooth_image(23, 64, 64);
        let y = observe(&x_true, 2.0, &cfg, 24);
        let state = solve_blind(&y, &cfg).unwrap();
        let baseline = upsample_bicubic(&y, 2).unwrap();
        let p_solver = psnr(&state.x_hat, &x_true).unwrap();
        let p_bicubic = psnr(&baseline, &x_true).unwrap();
        assert!(
            p_solver > p_bicubic,
            "solver {p_solver:.2} dB did not beat bicubic {p_bicubic:.2} dB"
        );
    }

    #[test]
    fn solve_blind_max_outer_zero_returns_initialization() {
        let cfg = GemConfig {
            max_outer: 0,
            ..test_config()
        };
        let x_true = smooth_image(25, 32, 32);
        let y = observe(&x_true, 1.0, &cfg, 26);
        let state = solve_blind(&y, &cfg).unwrap();
        let bicubic = upsample_bicubic(&y, 2).unwrap();
        assert_eq!(state.outer_iter, 0);
        assert!(state.elbo_trace.is_empty());
        assert_eq!(state.lambda_hat.rates(), cfg.lambda_init.rates());
        assert_eq!(state.x_hat.as_slice(), bicubic.as_slice());
    }

    #[test]
    fn solve_blind_is_deterministic() {
        let cfg = GemConfig {
            max_outer: 6,
            ..test_config()
        };
        let x_true = smooth_image(27, 32, 32);
        let y = observe(&x_true, 1.5, &cfg, 28);
        let a = solve_blind(&y, &cfg).unwrap();
        let b = solve_blind(&y, &cfg).unwrap();
        assert_eq!(a.x_hat.as_slice(), b.x_hat.as_slice());
        assert_eq!(a.lambda_hat.rates(), b.lambda_hat.rates());
        assert_eq!(trace_values(&a), trace_values(&b));
        assert_eq!(a.outer_iter, b.outer_iter);
    }

    #[test]
    fn solve_blind_identity_scale_high_fidelity() {
        // Noiseless identity observation at scale 1: the solver should all
        // but reproduce the input.
        let mut cfg = test_config();
        cfg.degradation.scale = 1;
        cfg.degradation.sigma_n = 0.005;
        cfg.max_outer = 10;
        cfg.m_cg_iters = 40;
        let x_true = smooth_image(29, 32, 32);
        let k = MixtureKernel::from_grid(vec![1.0], 1).unwrap();
        let y = downsample(&conv2d(&x_true, &k, cfg.degradation.boundary).unwrap(), 1).unwrap();
        let state = solve_blind(&y, &cfg).unwrap();
        let p = psnr(&state.x_hat, &x_true).unwrap();
        assert!(p > 40.0, "identity restoration only reached {p:.2} dB");
    }

    #[test]
    fn solve_blind_output_in_sane_range() {
        let cfg = GemConfig {
            max_outer: 10,
            ridge: 200.0,
            ..test_config()
        };
        let x_true = smooth_image(31, 32, 32);
        let y = observe(&x_true, 3.0, &cfg, 32);
        let state = solve_blind(&y, &cfg).unwrap();
        for &v in state.x_hat.as_slice() {
            assert!((-0.1..=1.1).contains(&v), "pixel {v} outside sane range");
        }
    }

    #[test]
    fn solve_nonblind_permutation_symmetry() {
        let mut cfg = test_config();
        cfg.lambda_init = ExponentialParams::uniform(0.5, 3).unwrap();
        cfg.lambda_prior = ExponentialParams::uniform(0.5, 3).unwrap();
        let x_true = smooth_image(33, 32, 32);
        let y = observe(&x_true, 2.0, &cfg, 34);
        let a = solve_nonblind(&y, &BandwidthVector::new(vec![0.5, 2.0, 4.0]).unwrap(), &cfg)
            .unwrap();
        let b = solve_nonblind(&y, &BandwidthVector::new(vec![4.0, 0.5, 2.0]).unwrap(), &cfg)
            .unwrap();
        let diff = a.sub(&b).unwrap().max_abs();
        assert!(diff < 1e-12, "permuted mixture changed the restore by {diff:.3e}");
    }

    #[test]
    fn solve_nonblind_delta_kernel_identity() {
        let mut cfg = test_config();
        cfg.degradation.scale = 1;
        cfg.degradation.support = 1;
        cfg.ridge = 0.0;
        cfg.m_cg_iters = 60;
        let y = smooth_image(35, 16, 16);
        // A single near-zero bandwidth renormalizes to the discrete delta.
        let out = solve_nonblind(&y, &BandwidthVector::new(vec![1e-8]).unwrap(), &cfg).unwrap();
        let err = out.sub(&y).unwrap().max_abs();
        assert!(err < 1e-8, "delta kernel at scale 1 should return y, err {err:.3e}");
    }

    #[test]
    fn solve_nonblind_true_kernel_beats_blind() {
        let mut cfg = test_config();
        cfg.max_outer = 3;
        cfg.ridge = 200.0;
        let x_true = smooth_image(37, 64, 64);
        let b2_true = 2.0;
        let y = observe(&x_true, b2_true, &cfg, 38);
        let blind = solve_blind(&y, &cfg).unwrap();
        let mut oracle_cfg = cfg.clone();
        oracle_cfg.m_cg_iters = 100;
        let oracle = solve_nonblind(
            &y,
            &BandwidthVector::new(vec![b2_true]).unwrap(),
            &oracle_cfg,
        )
        .unwrap();
        let p_blind = psnr(&blind.x_hat, &x_true).unwrap();
        let p_oracle = psnr(&oracle, &x_true).unwrap();
        assert!(
            p_oracle >= p_blind,
            "oracle kernel {p_oracle:.2} dB lost to blind {p_blind:.2} dB"
        );
    }
}
