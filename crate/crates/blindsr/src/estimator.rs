//! Parametric estimators trained from data: a six-feature affine-softplus
//! bandwidth predictor and an unrolled fixed-iteration restorer with one
//! learnable ridge weight, together with the unsupervised (bound-based),
//! supervised, and kernel-supervised losses and a small Adam training loop
//! over their combination.
//!
//! Parameter gradients come from central finite differences — the whole
//! parameter vector is `7L + 1` numbers, so probing is cheaper and sturdier
//! than carrying an autodiff engine for two tiny maps.

use crate::degrade::{log_likelihood, DegradationConfig};
use crate::elbo::McDraws;
use crate::error::{Error, Result};
use crate::gem::{solve_nonblind, GemConfig};
use crate::kernel::{
    kl_exponential, make_mixture_kernel, sample_bandwidths, ExponentialParams, MixtureKernel,
};
use crate::rng::rng_for;
use crate::tensor::ImageTensor;
use rand::seq::SliceRandom;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Lower bound added to the softplus output so predicted rates are strictly
/// positive.
const RATE_FLOOR: f64 = 1e-6;

/// Loss magnitude beyond which training is considered divergent.
const DIVERGENCE_LIMIT: f64 = 1e6;

/// Minimum number of fixed draws used to evaluate the per-epoch loss curve.
/// Training batches may use far fewer draws; the curve needs more to be a
/// faithful low-variance picture of the objective.
pub const EVAL_DRAWS_MIN: usize = 32;

/// Numerically stable `ln(1 + e^z)`.
fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else if z < -30.0 {
        z.exp()
    } else {
        z.exp().ln_1p()
    }
}

/// Global image statistics feeding the bandwidth predictor: mean intensity,
/// intensity standard deviation, mean absolute horizontal and vertical
/// neighbor differences (circular wrap), mean absolute discrete Laplacian
/// (circular wrap), and the fraction of Fourier power above half the Nyquist
/// radius. Multi-channel images average each feature over channels. Every
/// feature is invariant to whole-pixel circular translations.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    /// The six feature values, in the order listed above.
    pub psi: [f64; 6],
}

impl FeatureVector {
    /// Computes the features of an image.
    pub fn from_image(y: &ImageTensor) -> Result<Self> {
        let (channels, h, w) = y.shape();
        let n = (h * w) as f64;
        let mut psi = [0.0f64; 6];
        for c in 0..channels {
            let mean = y.plane(c).iter().sum::<f64>() / n;
            let var = y.plane(c).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let mut gx = 0.0;
            let mut gy = 0.0;
            let mut lap = 0.0;
            for i in 0..h {
                for j in 0..w {
                    let v = y.get(c, i, j);
                    let right = y.get(c, i, (j + 1) % w);
                    let down = y.get(c, (i + 1) % h, j);
                    let left = y.get(c, i, (j + w - 1) % w);
                    let up = y.get(c, (i + h - 1) % h, j);
                    gx += (right - v).abs();
                    gy += (down - v).abs();
                    lap += (4.0 * v - up - down - left - right).abs();
                }
            }
            psi[0] += mean;
            psi[1] += var.max(0.0).sqrt();
            psi[2] += gx / n;
            psi[3] += gy / n;
            psi[4] += lap / n;
            psi[5] += high_frequency_power_ratio(y.plane(c), h, w);
        }
        for v in &mut psi {
            *v /= channels as f64;
            if !v.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite image feature in {psi:?}"
                )));
            }
        }
        Ok(Self { psi })
    }
}

/// Fraction of the plane's Fourier power at normalized frequency radius
/// greater than 0.25 (half the Nyquist radius of 0.5 cycles per pixel).
fn high_frequency_power_ratio(plane: &[f64], h: usize, w: usize) -> f64 {
    let mut planner = FftPlanner::new();
    let row_fft = planner.plan_fft_forward(w);
    let col_fft = planner.plan_fft_forward(h);

    let mut grid: Vec<Complex<f64>> = plane.iter().map(|&v| Complex::new(v, 0.0)).collect();
    for row in grid.chunks_mut(w) {
        row_fft.process(row);
    }
    let mut column = vec![Complex::new(0.0, 0.0); h];
    for j in 0..w {
        for i in 0..h {
            column[i] = grid[i * w + j];
        }
        col_fft.process(&mut column);
        for i in 0..h {
            grid[i * w + j] = column[i];
        }
    }

    let mut total = 0.0;
    let mut high = 0.0;
    for i in 0..h {
        let fi = i.min(h - i) as f64 / h as f64;
        for j in 0..w {
            let fj = j.min(w - j) as f64 / w as f64;
            let power = grid[i * w + j].norm_sqr();
            total += power;
            if fi * fi + fj * fj > 0.0625 {
                high += power;
            }
        }
    }
    if total > 0.0 {
        high / total
    } else {
        0.0
    }
}

/// Learnable parameters: the affine map of the bandwidth predictor (`w`, `c`),
/// the log-parameterized ridge of the restorer, plus the fixed restorer
/// iteration count and kernel support they were trained for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorParams {
    /// Rate-predictor weights, one row of six per mixture component.
    pub w: Vec<Vec<f64>>,
    /// Rate-predictor offsets, one per mixture component.
    pub c: Vec<f64>,
    /// Restorer ridge through softplus (kept unconstrained for training).
    pub log_ridge: f64,
    /// Fixed CG iteration count of the unrolled restorer.
    pub t: usize,
    /// Kernel support the parameters were trained with.
    pub support: usize,
}

impl EstimatorParams {
    /// Zero-initialized predictor (every rate starts at `softplus(0) + 1e-6`)
    /// with the given shape.
    pub fn init(components: usize, support: usize, t: usize) -> Result<Self> {
        let params = Self {
            w: vec![vec![0.0; 6]; components],
            c: vec![0.0; components],
            log_ridge: 2.0,
            t,
            support,
        };
        params.validate()?;
        Ok(params)
    }

    /// Checks shapes and value ranges.
    pub fn validate(&self) -> Result<()> {
        if self.w.is_empty() || self.w.len() != self.c.len() {
            return Err(Error::Dimension(format!(
                "predictor has {} weight rows but {} offsets",
                self.w.len(),
                self.c.len()
            )));
        }
        if self.w.iter().any(|row| row.len() != 6) {
            return Err(Error::Dimension(
                "every predictor weight row must have 6 entries".into(),
            ));
        }
        let finite = self
            .w
            .iter()
            .flatten()
            .chain(&self.c)
            .chain(std::iter::once(&self.log_ridge))
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Domain("estimator parameters must be finite".into()));
        }
        if self.t == 0 {
            return Err(Error::Domain(
                "restorer iteration count must be at least 1".into(),
            ));
        }
        if self.support == 0 || self.support.is_multiple_of(2) {
            return Err(Error::Domain(format!(
                "kernel support must be odd, got {}",
                self.support
            )));
        }
        Ok(())
    }

    /// Number of mixture components predicted.
    pub fn components(&self) -> usize {
        self.w.len()
    }

    /// Number of trainable parameters (`7L + 1`).
    pub fn n_trainable(&self) -> usize {
        7 * self.components() + 1
    }

    /// Flattens the trainable parameters (weights row-major, offsets, ridge).
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_trainable());
        for row in &self.w {
            out.extend_from_slice(row);
        }
        out.extend_from_slice(&self.c);
        out.push(self.log_ridge);
        out
    }

    /// Rebuilds parameters from a flat vector with this one's shape.
    pub fn with_vec(&self, theta: &[f64]) -> Result<Self> {
        if theta.len() != self.n_trainable() {
            return Err(Error::Dimension(format!(
                "expected {} parameters, got {}",
                self.n_trainable(),
                theta.len()
            )));
        }
        let l = self.components();
        let mut params = self.clone();
        for (i, row) in params.w.iter_mut().enumerate() {
            row.copy_from_slice(&theta[6 * i..6 * (i + 1)]);
        }
        params.c.copy_from_slice(&theta[6 * l..7 * l]);
        params.log_ridge = theta[7 * l];
        params.validate()?;
        Ok(params)
    }

    /// Serializes to pretty-printed JSON.
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Format(format!("cannot serialize estimator params: {e}")))
    }

    /// Serializes to a JSON file.
    pub fn write_json_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    /// Reads and validates parameters from a JSON file.
    pub fn read_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let params: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("malformed estimator params: {e}")))?;
        params.validate()?;
        Ok(params)
    }
}

/// Weights of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Weight of the bound-based unsupervised term.
    pub alpha_g: f64,
    /// Weight of the supervised regression term.
    pub alpha_r: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha_g: 1.0,
            alpha_r: 1.0,
        }
    }
}

impl LossWeights {
    /// Checks nonnegativity and that at least one term is active.
    pub fn validate(&self) -> Result<()> {
        if self.alpha_g < 0.0 || self.alpha_r < 0.0 {
            return Err(Error::Domain(format!(
                "loss weights must be nonnegative, got ({}, {})",
                self.alpha_g, self.alpha_r
            )));
        }
        if self.alpha_g == 0.0 && self.alpha_r == 0.0 {
            return Err(Error::Domain("at least one loss weight must be positive".into()));
        }
        Ok(())
    }
}

/// Training-loop controls.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Number of passes over the data.
    pub epochs: usize,
    /// Samples drawn per dataset per optimization step.
    pub batch_size: usize,
    /// Adam step size (zero freezes the parameters).
    pub learning_rate: f64,
    /// Adam first-moment decay.
    pub beta1: f64,
    /// Adam second-moment decay.
    pub beta2: f64,
    /// Master seed; per-epoch streams are derived from it.
    pub seed: u64,
    /// Monte Carlo draws per loss evaluation.
    pub n_mc: usize,
    /// Central finite-difference step for parameter gradients.
    pub fd_step: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 4,
            learning_rate: 0.0002,
            beta1: 0.9,
            beta2: 0.99,
            seed: 0,
            n_mc: 4,
            fd_step: 1e-3,
        }
    }
}

impl TrainConfig {
    /// Checks field ranges.
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Domain(format!(
                "learning rate must be nonnegative and finite, got {}",
                self.learning_rate
            )));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::Domain(format!("{name} must lie in [0, 1), got {beta}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Domain("batch size must be at least 1".into()));
        }
        if self.n_mc == 0 {
            return Err(Error::Domain("n_mc must be at least 1".into()));
        }
        if self.fd_step <= 0.0 || !self.fd_step.is_finite() {
            return Err(Error::Domain(format!(
                "finite-difference step must be positive, got {}",
                self.fd_step
            )));
        }
        Ok(())
    }
}

/// One supervised sample: the target image, its observation, and optionally
/// the blur that produced it.
#[derive(Debug, Clone)]
pub struct LabeledSample {
    /// Ground-truth image.
    pub hr: ImageTensor,
    /// Degraded observation.
    pub lr: ImageTensor,
    /// Ground-truth blur kernel, when known.
    pub kernel: Option<MixtureKernel>,
}

/// Training data: labeled pairs plus unlabeled observations.
#[derive(Debug, Clone, Default)]
pub struct TrainSet {
    /// Samples with ground truth available.
    pub labeled: Vec<LabeledSample>,
    /// Observations without ground truth.
    pub unlabeled: Vec<ImageTensor>,
}

impl TrainSet {
    /// Fraction of the data that is unlabeled, `M / (M + N)`.
    pub fn unsupervised_rate(&self) -> f64 {
        let m = self.unlabeled.len() as f64;
        let n = self.labeled.len() as f64;
        if m + n == 0.0 {
            0.0
        } else {
            m / (m + n)
        }
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters after the final epoch.
    pub params: EstimatorParams,
    /// Full-dataset loss after each epoch, on fixed evaluation draws.
    pub curve: Vec<f64>,
    /// Unsupervised rate `M / (M + N)` of the data the run saw.
    pub eta: f64,
}

/// Predicts posterior rates from image features:
/// `λ̂ = softplus(W·ψ(y) + c) + 1e-6`.
pub fn predict_lambda(params: &EstimatorParams, y: &ImageTensor) -> Result<ExponentialParams> {
    params.validate()?;
    let features = FeatureVector::from_image(y)?;
    let rates = params
        .w
        .iter()
        .zip(&params.c)
        .map(|(row, offset)| {
            let z: f64 = row.iter().zip(&features.psi).map(|(w, f)| w * f).sum::<f64>() + offset;
            softplus(z) + RATE_FLOOR
        })
        .collect();
    ExponentialParams::new(rates)
}

/// Restores an observation with a known bandwidth vector by running the
/// quadratic restorer for exactly `params.t` conjugate-gradient iterations
/// with ridge `softplus(params.log_ridge)`.
pub fn restore(
    params: &EstimatorParams,
    y: &ImageTensor,
    b2: &crate::kernel::BandwidthVector,
    deg: &DegradationConfig,
) -> Result<ImageTensor> {
    params.validate()?;
    let rates = ExponentialParams::uniform(1.0, b2.len())?;
    let cfg = GemConfig {
        m_cg_iters: params.t,
        ridge: softplus(params.log_ridge),
        lambda_init: rates.clone(),
        lambda_prior: rates,
        degradation: deg.clone(),
        ..GemConfig::default()
    };
    solve_nonblind(y, b2, &cfg)
}

/// Negative mean surrogate bound over a batch of observations: for each image
/// the data term averages `log p(y | b²_m, x̂_m)` over the common draws, with
/// `x̂_m` restored at the drawn bandwidths and the rates predicted from the
/// image itself; the KL against the prior is subtracted analytically.
pub fn loss_gem(
    params: &EstimatorParams,
    batch: &[&ImageTensor],
    lambda_prior: &ExponentialParams,
    deg: &DegradationConfig,
    draws: &McDraws,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Domain("bound loss needs a nonempty batch".into()));
    }
    let mut total = 0.0;
    for y in batch {
        let lambda = predict_lambda(params, y)?;
        if lambda.len() != lambda_prior.len() || lambda.len() != draws.components() {
            return Err(Error::Dimension(format!(
                "component counts disagree: predictor {}, prior {}, draws {}",
                lambda.len(),
                lambda_prior.len(),
                draws.components()
            )));
        }
        let kl = kl_exponential(&lambda, lambda_prior)?;
        let mut data = 0.0;
        for m in 0..draws.n_mc() {
            let b2 = sample_bandwidths(&lambda, draws.row(m))?;
            let x_hat = restore(params, y, &b2, deg)?;
            data += log_likelihood(y, &x_hat, &b2, deg)?;
        }
        total += data / draws.n_mc() as f64 - kl;
    }
    Ok(-total / batch.len() as f64)
}

/// Mean per-pixel squared restoration error over labeled pairs, averaged over
/// the bandwidth draws from each image's predicted posterior.
pub fn loss_sup(
    params: &EstimatorParams,
    batch: &[(&ImageTensor, &ImageTensor)],
    deg: &DegradationConfig,
    draws: &McDraws,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Domain("supervised loss needs a nonempty batch".into()));
    }
    let mut total = 0.0;
    for (x, y) in batch {
        let lambda = predict_lambda(params, y)?;
        let mut per_image = 0.0;
        for m in 0..draws.n_mc() {
            let b2 = sample_bandwidths(&lambda, draws.row(m))?;
            let x_hat = restore(params, y, &b2, deg)?;
            per_image += x.sub(&x_hat)?.norm_sq() / x.len() as f64;
        }
        total += per_image / draws.n_mc() as f64;
    }
    Ok(total / batch.len() as f64)
}

/// Supervised loss plus the mean squared Frobenius distance between the true
/// kernels (padded to the working support) and the kernels built from the
/// drawn bandwidths.
pub fn loss_sup_kernel(
    params: &EstimatorParams,
    batch: &[(&ImageTensor, &ImageTensor, &MixtureKernel)],
    deg: &DegradationConfig,
    draws: &McDraws,
) -> Result<f64> {
    let pairs: Vec<(&ImageTensor, &ImageTensor)> = batch.iter().map(|(x, y, _)| (*x, *y)).collect();
    let mut loss = loss_sup(params, &pairs, deg, draws)?;
    let mut kernel_total = 0.0;
    for (_, y, k_true) in batch {
        let padded = k_true.pad_to(deg.support)?;
        let lambda = predict_lambda(params, y)?;
        let mut per_image = 0.0;
        for m in 0..draws.n_mc() {
            let b2 = sample_bandwidths(&lambda, draws.row(m))?;
            let k_b = make_mixture_kernel(&b2, deg.support)?;
            per_image += padded.frobenius_sq_distance(&k_b)?;
        }
        kernel_total += per_image / draws.n_mc() as f64;
    }
    loss += kernel_total / batch.len() as f64;
    Ok(loss)
}

/// Weighted combination `alpha_g·loss_gem(labeled LR ∪ unlabeled) +
/// alpha_r·loss_sup[_kernel](labeled)`. The kernel-constrained supervised
/// variant is used when every labeled sample carries its true kernel.
pub fn total_loss(
    params: &EstimatorParams,
    labeled: &[LabeledSample],
    unlabeled: &[ImageTensor],
    weights: &LossWeights,
    lambda_prior: &ExponentialParams,
    deg: &DegradationConfig,
    draws: &McDraws,
) -> Result<f64> {
    weights.validate()?;
    if labeled.is_empty() && unlabeled.is_empty() {
        return Err(Error::Domain("no training data supplied".into()));
    }
    let mut loss = 0.0;
    if weights.alpha_g > 0.0 {
        let union: Vec<&ImageTensor> = labeled
            .iter()
            .map(|s| &s.lr)
            .chain(unlabeled.iter())
            .collect();
        loss += weights.alpha_g * loss_gem(params, &union, lambda_prior, deg, draws)?;
    }
    if weights.alpha_r > 0.0 && !labeled.is_empty() {
        let supervised = if labeled.iter().all(|s| s.kernel.is_some()) {
            let triples: Vec<(&ImageTensor, &ImageTensor, &MixtureKernel)> = labeled
                .iter()
                .map(|s| (&s.hr, &s.lr, s.kernel.as_ref().expect("checked above")))
                .collect();
            loss_sup_kernel(params, &triples, deg, draws)?
        } else {
            let pairs: Vec<(&ImageTensor, &ImageTensor)> =
                labeled.iter().map(|s| (&s.hr, &s.lr)).collect();
            loss_sup(params, &pairs, deg, draws)?
        };
        loss += weights.alpha_r * supervised;
    }
    Ok(loss)
}

/// Everything a loss evaluation needs besides the parameters themselves.
struct LossContext<'a> {
    labeled: &'a [LabeledSample],
    unlabeled: &'a [ImageTensor],
    weights: &'a LossWeights,
    lambda_prior: &'a ExponentialParams,
    deg: &'a DegradationConfig,
}

impl LossContext<'_> {
    fn eval(&self, params: &EstimatorParams, draws: &McDraws) -> Result<f64> {
        total_loss(
            params,
            self.labeled,
            self.unlabeled,
            self.weights,
            self.lambda_prior,
            self.deg,
            draws,
        )
    }
}

/// Central finite-difference gradient of the total loss on one batch.
fn fd_gradient(
    base: &EstimatorParams,
    theta: &[f64],
    ctx: &LossContext<'_>,
    draws: &McDraws,
    h: f64,
) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; theta.len()];
    let mut probe = theta.to_vec();
    for i in 0..theta.len() {
        probe[i] = theta[i] + h;
        let up = ctx.eval(&base.with_vec(&probe)?, draws)?;
        probe[i] = theta[i] - h;
        let down = ctx.eval(&base.with_vec(&probe)?, draws)?;
        probe[i] = theta[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite loss while probing parameter {i} (f+ = {up}, f- = {down})"
            )));
        }
        grad[i] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

/// Trains the estimators with Adam on the combined loss.
///
/// Each epoch shuffles both datasets with an epoch-derived stream, samples
/// fresh bandwidth draws, takes one Adam step per batch, and then records the
/// full-dataset loss on a fixed evaluation draw table. The table holds at
/// least [`EVAL_DRAWS_MIN`] draws regardless of `n_mc`, so the reported curve
/// tracks the expected loss instead of the variance of a tiny sample. A loss
/// that leaves `(-1e6, 1e6)` or turns non-finite aborts with a numerical
/// error.
pub fn train(
    data: &TrainSet,
    weights: &LossWeights,
    lambda_prior: &ExponentialParams,
    deg: &DegradationConfig,
    cfg: &TrainConfig,
    init: EstimatorParams,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    weights.validate()?;
    init.validate()?;
    deg.validate()?;
    if data.labeled.is_empty() && data.unlabeled.is_empty() {
        return Err(Error::Domain("no training data supplied".into()));
    }
    let components = init.components();
    let eta = data.unsupervised_rate();

    let mut eval_rng = rng_for(cfg.seed, "train-eval-draws");
    let eval_draws = McDraws::sample(&mut eval_rng, cfg.n_mc.max(EVAL_DRAWS_MIN), components)?;

    let mut theta = init.to_vec();
    let mut m = vec![0.0; theta.len()];
    let mut v = vec![0.0; theta.len()];
    let mut step = 0u32;
    let mut curve = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut rng = rng_for(cfg.seed, &format!("train-epoch-{epoch}"));
        let draws = McDraws::sample(&mut rng, cfg.n_mc, components)?;
        let mut labeled_idx: Vec<usize> = (0..data.labeled.len()).collect();
        let mut unlabeled_idx: Vec<usize> = (0..data.unlabeled.len()).collect();
        labeled_idx.shuffle(&mut rng);
        unlabeled_idx.shuffle(&mut rng);
        let labeled_batches: Vec<&[usize]> = labeled_idx.chunks(cfg.batch_size).collect();
        let unlabeled_batches: Vec<&[usize]> = unlabeled_idx.chunks(cfg.batch_size).collect();
        let steps = labeled_batches.len().max(unlabeled_batches.len()).max(1);

        for b in 0..steps {
            let batch_l: Vec<LabeledSample> = if labeled_batches.is_empty() {
                Vec::new()
            } else {
                labeled_batches[b % labeled_batches.len()]
                    .iter()
                    .map(|&i| data.labeled[i].clone())
                    .collect()
            };
            let batch_u: Vec<ImageTensor> = if unlabeled_batches.is_empty() {
                Vec::new()
            } else {
                unlabeled_batches[b % unlabeled_batches.len()]
                    .iter()
                    .map(|&i| data.unlabeled[i].clone())
                    .collect()
            };
            let ctx = LossContext {
                labeled: &batch_l,
                unlabeled: &batch_u,
                weights,
                lambda_prior,
                deg,
            };
            let grad = fd_gradient(&init, &theta, &ctx, &draws, cfg.fd_step)?;
            step += 1;
            let bc1 = 1.0 - cfg.beta1.powi(step as i32);
            let bc2 = 1.0 - cfg.beta2.powi(step as i32);
            for i in 0..theta.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                theta[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + 1e-8);
            }
        }

        let loss = total_loss(
            &init.with_vec(&theta)?,
            &data.labeled,
            &data.unlabeled,
            weights,
            lambda_prior,
            deg,
            &eval_draws,
        )?;
        if !loss.is_finite() || loss.abs() > DIVERGENCE_LIMIT {
            return Err(Error::Numerical(format!(
                "training diverged at epoch {epoch}: loss {loss} (rates head {:?})",
                &theta[..theta.len().min(4)]
            )));
        }
        curve.push(loss);
    }

    Ok(TrainOutcome {
        params: init.with_vec(&theta)?,
        curve,
        eta,
    })
}
