//! Bias-constrained estimation of deterministic parameters.
//!
//! Frequentist estimators are judged by their mean squared error and bias at
//! every parameter value, not on average under a prior. This crate trains and
//! analyzes estimators that stay close to the minimum-variance-unbiased ideal
//! by penalizing the empirical squared bias over groups of observations that
//! share the same parameter:
//!
//! ```text
//! loss = mean_ij ||f(x_ij) - y_i||^2  +  lambda * mean_i ||mean_j f(x_ij) - y_i||^2
//! ```
//!
//! The pieces:
//!
//! - [`statmodels`]: the parametric observation models (linear-Gaussian,
//!   non-data-aided SNR, structured covariance) with exact samplers,
//!   log-likelihoods and Fisher information.
//! - [`datagen`]: fictitious priors and synthetic grouped datasets.
//! - [`linear_bce`]: closed-form linear estimators (bias-constrained, LMMSE,
//!   WLS, ridge) and the scalar theory around them.
//! - [`neuralnet`]: a small dense-network engine with exact analytic
//!   gradients of the grouped loss, Adam, and learning-rate schedules.
//! - [`training`]: experiment-specific training loops, the SNR feature map
//!   and the iterative covariance refinement network.
//! - [`evaluation`]: seeded Monte-Carlo measurement of per-parameter bias,
//!   variance and MSE against the Cramér-Rao bound.
//!
//! The crate is `no_std`-compatible (requires `alloc`). File formats, CSV
//! output and the command line live in the companion `bce-cli` crate.
//!
//! # Determinism
//!
//! Every randomized operation takes an explicit seed or a [`rng::RngStream`]
//! and derives independent substreams per task, so results are bit-identical
//! for a given seed regardless of the number of worker threads (enable the
//! `parallel` feature for multi-threaded Monte-Carlo).

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod datagen;
pub mod error;
pub mod evaluation;
pub mod linear_bce;
pub mod neuralnet;
pub mod rng;
pub mod statmodels;
pub mod training;

mod parallel;

pub use error::{Error, Result};
pub use rng::RngStream;
