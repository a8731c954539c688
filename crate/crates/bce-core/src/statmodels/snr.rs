//! Non-data-aided SNR estimation: x_l = a_l h + w_l with equiprobable binary
//! symbols a_l = +-1 and white Gaussian noise of unknown variance sigma^2.
//! The estimand is the SNR y = h^2 / sigma^2.
//!
//! Marginalizing the symbols gives a two-component Gaussian mixture, so the
//! per-symbol log-density is
//!
//! ```text
//! log p(x; h, s2) = -0.5 log(2 pi s2) - (x^2 + h^2) / (2 s2) + log cosh(x h / s2)
//! ```
//!
//! The MLE has no closed form; it is computed by a log-spaced grid search
//! followed by a derivative-free compass refinement, which is deterministic
//! and robust to the mild multimodality of the mixture likelihood.

use core::f64::consts::{LN_2, PI};
use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{FisherInfo, ObservationBatch, ParamVector, StatModel};
use crate::error::{Error, Result};
use crate::evaluation::Estimator;
use crate::rng::RngStream;

/// Lower clip for SNR estimates, keeping inverse-SNR metrics finite.
pub const SNR_ESTIMATE_MIN: f64 = 1e-3;
/// Upper clip for SNR estimates (high-SNR saturation).
pub const SNR_ESTIMATE_MAX: f64 = 1e3;

/// Grid-search box and resolution for the MLE.
const GRID_POINTS: usize = 60;
const H_RANGE: (f64, f64) = (0.1, 20.0);
const S2_RANGE: (f64, f64) = (1e-3, 1e2);
const REFINE_STEPS: usize = 50;

/// The SNR observation model with `p` symbols per observation.
///
/// The sampler parameter vector is theta = (h, sigma^2); the estimation
/// target is the scalar y = h^2 / sigma^2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SnrModel {
    p: usize,
}

impl SnrModel {
    pub fn new(p: usize) -> Result<Self> {
        if p == 0 {
            return Err(Error::InvalidConfig("SnrModel requires p >= 1"));
        }
        Ok(Self { p })
    }

    pub fn symbols(&self) -> usize {
        self.p
    }

    /// Draws p symbols a_l h + w_l as a 1 x p observation.
    pub fn sample_symbols(
        &self,
        h: f64,
        sigma2: f64,
        rng: &mut RngStream,
    ) -> Result<ObservationBatch> {
        check_hs(h, sigma2)?;
        let sd = sigma2.sqrt();
        let data = DMatrix::from_iterator(
            1,
            self.p,
            (0..self.p).map(|_| {
                let a = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let w: f64 = rng.sample(StandardNormal);
                a * h + sd * w
            }),
        );
        ObservationBatch::new(data)
    }

    /// Log-likelihood of an observation under (h, sigma^2).
    pub fn log_likelihood(&self, x: &ObservationBatch, h: f64, sigma2: f64) -> Result<f64> {
        check_hs(h, sigma2)?;
        if x.dim() != 1 {
            return Err(Error::DimensionMismatch {
                context: "SNR observation",
                expected: 1,
                got: x.dim(),
            });
        }
        let sum_x2: f64 = x.values().iter().map(|v| v * v).sum();
        Ok(loglik_sufficient(x.values(), sum_x2, h, sigma2))
    }

    /// Maximum-likelihood estimate of y = h^2/sigma^2, clipped to
    /// [`SNR_ESTIMATE_MIN`, `SNR_ESTIMATE_MAX`].
    ///
    /// Coarse 60x60 log-spaced grid over (h, sigma^2), then a compass search
    /// in (log h, log sigma^2) with a shrinking step. Deterministic.
    pub fn mle(&self, x: &ObservationBatch) -> Result<f64> {
        let (h, s2) = self.mle_pair(x)?;
        Ok((h * h / s2).clamp(SNR_ESTIMATE_MIN, SNR_ESTIMATE_MAX))
    }

    /// The refined (h, sigma^2) maximizer behind [`SnrModel::mle`].
    fn mle_pair(&self, x: &ObservationBatch) -> Result<(f64, f64)> {
        if self.p < 2 || x.count() < 2 {
            return Err(Error::InvalidConfig("SNR MLE requires p >= 2"));
        }
        let values = x.values();
        let sum_x2: f64 = values.iter().map(|v| v * v).sum();
        if sum_x2 <= 0.0 {
            return Err(Error::DegenerateInput("all-zero SNR observation"));
        }

        let (ln_h_lo, ln_h_hi) = (H_RANGE.0.ln(), H_RANGE.1.ln());
        let (ln_s_lo, ln_s_hi) = (S2_RANGE.0.ln(), S2_RANGE.1.ln());
        let dh = (ln_h_hi - ln_h_lo) / (GRID_POINTS - 1) as f64;
        let ds = (ln_s_hi - ln_s_lo) / (GRID_POINTS - 1) as f64;

        let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
        for i in 0..GRID_POINTS {
            let a = ln_h_lo + i as f64 * dh;
            let h = a.exp();
            for j in 0..GRID_POINTS {
                let b = ln_s_lo + j as f64 * ds;
                let ll = loglik_sufficient(values, sum_x2, h, b.exp());
                if ll > best.0 {
                    best = (ll, a, b);
                }
            }
        }

        let (mut ll, mut a, mut b) = best;
        let (mut sa, mut sb) = (dh, ds);
        for _ in 0..REFINE_STEPS {
            let mut improved = false;
            // axis and diagonal candidates around the incumbent
            let cands = [
                (a + sa, b),
                (a - sa, b),
                (a, b + sb),
                (a, b - sb),
                (a + sa, b + sb),
                (a + sa, b - sb),
                (a - sa, b + sb),
                (a - sa, b - sb),
            ];
            for &(ca, cb) in &cands {
                let cll = loglik_sufficient(values, sum_x2, ca.exp(), cb.exp());
                if cll > ll {
                    ll = cll;
                    a = ca;
                    b = cb;
                    improved = true;
                }
            }
            if !improved {
                sa *= 0.5;
                sb *= 0.5;
            }
        }

        Ok((a.exp(), b.exp()))
    }

    /// Method-of-moments estimate of y from E[x^2] = h^2 + s2 and
    /// E[x^4] = h^4 + 6 h^2 s2 + 3 s2^2; `None` when the moment system has no
    /// positive solution.
    pub fn method_of_moments(&self, x: &ObservationBatch) -> Option<f64> {
        let n = x.values().len() as f64;
        let m2: f64 = x.values().iter().map(|v| v * v).sum::<f64>() / n;
        let m4: f64 = x.values().iter().map(|v| v.powi(4)).sum::<f64>() / n;
        let h2sq = (3.0 * m2 * m2 - m4) / 2.0;
        if h2sq <= 0.0 {
            return None;
        }
        let h2 = h2sq.sqrt();
        let s2 = m2 - h2;
        if s2 <= 0.0 {
            return None;
        }
        Some(h2 / s2)
    }

    /// Monte-Carlo Fisher information in (h, sigma^2) and the corresponding
    /// Cramér-Rao bound for y = h^2/sigma^2.
    ///
    /// Averages the outer product of the analytic per-symbol score over
    /// `reps` symbol draws; the returned matrix is the full-observation FIM
    /// (p times the per-symbol information). The CRB for y follows by the
    /// delta method with gradient g = (2h/s2, -h^2/s2^2).
    pub fn monte_carlo_fim(
        &self,
        h: f64,
        sigma2: f64,
        reps: usize,
        rng: &mut RngStream,
    ) -> Result<(FisherInfo, f64)> {
        check_hs(h, sigma2)?;
        if reps < 10_000 {
            return Err(Error::InvalidConfig("monte_carlo_fim requires reps >= 10^4"));
        }
        let sd = sigma2.sqrt();
        let mut acc = Matrix2::<f64>::zeros();
        for _ in 0..reps {
            let a = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let w: f64 = rng.sample(StandardNormal);
            let x = a * h + sd * w;
            let s = symbol_score(x, h, sigma2);
            acc += s * s.transpose();
        }
        acc /= reps as f64;
        let per_symbol = acc;
        // positive-definiteness check doubles as the reps-too-small guard
        let chol = nalgebra::Cholesky::new(per_symbol)
            .ok_or(Error::NotPositiveDefinite("Monte-Carlo Fisher information"))?;
        let g = Vector2::new(2.0 * h / sigma2, -h * h / (sigma2 * sigma2));
        let crb_y = (g.transpose() * chol.solve(&g))[(0, 0)] / self.p as f64;
        let full = DMatrix::from_fn(2, 2, |i, j| per_symbol[(i, j)] * self.p as f64);
        Ok((FisherInfo::new(full)?, crb_y))
    }
}

/// Per-symbol score (d/dh, d/dsigma^2) of the mixture log-density.
fn symbol_score(x: f64, h: f64, s2: f64) -> Vector2<f64> {
    let t = (x * h / s2).tanh();
    let dh = -h / s2 + x * t / s2;
    let ds = -0.5 / s2 + (x * x + h * h) / (2.0 * s2 * s2) - x * h * t / (s2 * s2);
    Vector2::new(dh, ds)
}

/// Sum of per-symbol mixture log-densities given the precomputed sum of
/// squares (the only per-grid-point work left is the log-cosh term).
fn loglik_sufficient(values: &[f64], sum_x2: f64, h: f64, s2: f64) -> f64 {
    let p = values.len() as f64;
    let constant = -0.5 * p * (2.0 * PI * s2).ln() - (sum_x2 + p * h * h) / (2.0 * s2);
    let scale = h / s2;
    let lc: f64 = values.iter().map(|&x| log_cosh(x * scale)).sum();
    constant + lc
}

/// Numerically safe log cosh(t) = |t| + log(1 + exp(-2|t|)) - log 2.
fn log_cosh(t: f64) -> f64 {
    let a = t.abs();
    a + (-2.0 * a).exp().ln_1p() - LN_2
}

fn check_hs(h: f64, sigma2: f64) -> Result<()> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::OutOfDomain("h must be positive"));
    }
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::OutOfDomain("sigma2 must be positive"));
    }
    Ok(())
}

impl StatModel for SnrModel {
    fn param_dim(&self) -> usize {
        2
    }

    fn target_dim(&self) -> usize {
        1
    }

    fn target(&self, theta: &ParamVector) -> ParamVector {
        DVector::from_element(1, theta[0] * theta[0] / theta[1])
    }

    fn validate(&self, theta: &ParamVector) -> Result<()> {
        if theta.len() != 2 {
            return Err(Error::DimensionMismatch {
                context: "SNR parameter (h, sigma2)",
                expected: 2,
                got: theta.len(),
            });
        }
        check_hs(theta[0], theta[1])
    }

    fn sample(&self, theta: &ParamVector, rng: &mut RngStream) -> Result<ObservationBatch> {
        self.validate(theta)?;
        self.sample_symbols(theta[0], theta[1], rng)
    }
}

/// The grid MLE wrapped as an estimator of y.
///
/// Degenerate observations (probability zero under the model) fall back to
/// the lower clip so that evaluation loops never abort.
#[derive(Debug, Clone, Copy)]
pub struct SnrMle {
    model: SnrModel,
}

impl SnrMle {
    pub fn new(model: SnrModel) -> Self {
        Self { model }
    }
}

impl Estimator for SnrMle {
    fn estimate(&self, obs: &ObservationBatch) -> DVector<f64> {
        let y = self.model.mle(obs).unwrap_or(SNR_ESTIMATE_MIN);
        DVector::from_element(1, y)
    }
}
