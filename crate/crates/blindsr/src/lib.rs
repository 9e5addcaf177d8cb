//! Blind single-image super-resolution via a Bayesian degradation model.
//!
//! The observation is modeled as `y = (x ⊗ k)↓s + n`: an unknown sharp image
//! `x` blurred by a mixture-Gaussian kernel `k` with random bandwidths,
//! decimated by an integer factor `s`, and corrupted by Gaussian noise of
//! known level. Restoration maximizes a Monte Carlo evidence lower bound over
//! both the image and an exponential variational posterior on the kernel
//! bandwidths, alternating closed-form-free ascent steps (generalized EM).
//! Small learned estimators can warm-start and partially amortize the solver.
//!
//! Module map:
//! - [`tensor`], [`ops`], [`color`], [`metrics`], [`io`]: image containers,
//!   the degradation pipeline's linear operators and adjoints, evaluation.
//! - [`kernel`]: mixture kernels and the exponential bandwidth distributions.
//! - [`degrade`]: forward synthesis of low-resolution observations, datasets.
//! - [`elbo`]: the Monte Carlo bound, its gradients, and a quadrature oracle.
//! - [`gem`]: the alternating solver (variational E-step, conjugate-gradient
//!   M-step) for blind and non-blind restoration.
//! - [`estimator`]: learned bandwidth predictor and unrolled restorer.

pub mod color;
pub mod degrade;
pub mod elbo;
pub mod error;
pub mod estimator;
pub mod gem;
pub mod io;
pub mod kernel;
pub mod metrics;
pub mod ops;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{BoundaryMode, ImageTensor};
