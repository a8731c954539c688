//! Closed-form linear estimators.
//!
//! For the double-linear setting (`x = H y + n`, estimator `yhat = A x`) the
//! bias-constrained objective has a closed-form minimizer with two equivalent
//! expressions:
//!
//! - moment form: `A = E[yx^T] ((E[xx^T] + lambda R) / (lambda+1))^-1` with
//!   `R = E[ E[x|y] E[x^T|y] ]`, usable whenever second moments are known;
//! - model form: `A = (H^T Sn^-1 H + Sy^-1/(lambda+1))^-1 H^T Sn^-1`,
//!   usable when the linear model is known explicitly.
//!
//! `lambda = 0` is the LMMSE / Bayesian linear regression; `lambda -> inf`
//! recovers weighted least squares. The scalar functions at the bottom carry
//! the one-dimensional theory (toy model `x = y + w`), including the analytic
//! conditional BMSE and its expectation over the training draw, plus the
//! exact correspondence between bias constraints and (negative) ridge
//! regularization.
//!
//! All solves go through Cholesky factorizations rather than explicit
//! inverses.

use alloc::vec::Vec;
use nalgebra::{Cholesky, DMatrix, DVector};
#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand_distr::{ChiSquared, Distribution};

use crate::datagen::DatasetNM;
use crate::error::{Error, Result};
use crate::evaluation::Estimator;
use crate::rng::RngStream;
use crate::statmodels::{ObservationBatch, ParamVector};

/// Jitter added to a prior second-moment matrix whose Cholesky fails
/// (rank-deficient priors), keeping the closed forms defined while staying
/// below the test tolerances.
pub const DEFAULT_MOMENT_JITTER: f64 = 1e-9;

/// A linear estimator yhat = A x.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEstimator {
    a: DMatrix<f64>,
}

impl LinearEstimator {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("estimator matrix must be finite"));
        }
        Ok(Self { a })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x
    }
}

impl Estimator for LinearEstimator {
    fn estimate(&self, obs: &ObservationBatch) -> DVector<f64> {
        &self.a * obs.flatten()
    }
}

/// The second moments that determine the linear estimators.
#[derive(Debug, Clone)]
pub struct SecondMoments {
    /// E[y x^T], d x n.
    pub exy: DMatrix<f64>,
    /// E[x x^T], n x n.
    pub exx: DMatrix<f64>,
    /// R = E[ E[x|y] E[x^T|y] ], n x n.
    pub r: DMatrix<f64>,
    /// E[y y^T], d x d.
    pub sy: DMatrix<f64>,
}

impl SecondMoments {
    /// Analytic moments of the linear-Gaussian model under a prior with
    /// second moment `sigma_y`: E[yx^T] = Sy H^T, R = H Sy H^T,
    /// E[xx^T] = R + Sn.
    pub fn from_linear_model(
        h: &DMatrix<f64>,
        sigma_n: &DMatrix<f64>,
        sigma_y: &DMatrix<f64>,
    ) -> Self {
        let r = h * sigma_y * h.transpose();
        SecondMoments {
            exy: sigma_y * h.transpose(),
            exx: &r + sigma_n,
            r,
            sy: sigma_y.clone(),
        }
    }

    /// Empirical moments from a grouped dataset (needs M >= 2: R is
    /// estimated without bias from cross products of distinct observations
    /// sharing the same parameter).
    pub fn from_dataset(ds: &DatasetNM) -> Result<Self> {
        let n_rec = ds.records();
        let m = ds.obs_per_record();
        if m < 2 {
            return Err(Error::InvalidConfig(
                "empirical R needs at least two observations per record",
            ));
        }
        let d = ds.params(0).len();
        let n = ds.observation(0, 0).flatten().len();
        let mut exy = DMatrix::<f64>::zeros(d, n);
        let mut exx = DMatrix::<f64>::zeros(n, n);
        let mut r = DMatrix::<f64>::zeros(n, n);
        let mut sy = DMatrix::<f64>::zeros(d, d);
        for i in 0..n_rec {
            let y = ds.params(i);
            sy += y * y.transpose();
            let xs: Vec<DVector<f64>> = (0..m).map(|j| ds.observation(i, j).flatten()).collect();
            for x in &xs {
                exy += y * x.transpose() / m as f64;
                exx += x * x.transpose() / m as f64;
            }
            // unbiased R: ordered cross products over distinct pairs
            let pairs = (m * (m - 1)) as f64;
            let mut cross = DMatrix::<f64>::zeros(n, n);
            let sum: DVector<f64> = xs.iter().fold(DVector::zeros(n), |acc, x| acc + x);
            cross += &sum * sum.transpose();
            for x in &xs {
                cross -= x * x.transpose();
            }
            r += cross / pairs;
        }
        let scale = 1.0 / n_rec as f64;
        Ok(SecondMoments {
            exy: exy * scale,
            exx: exx * scale,
            r: r * scale,
            sy: sy * scale,
        })
    }
}

/// Bias-constrained linear estimator from second moments:
/// A = E[yx^T] (E[xx^T]/(lambda+1) + lambda R/(lambda+1))^-1.
pub fn lbce_moment_form(m: &SecondMoments, lambda: f64) -> Result<LinearEstimator> {
    check_lambda(lambda)?;
    let blend = (&m.exx + &m.r * lambda) / (lambda + 1.0);
    let chol = Cholesky::new(blend).ok_or(Error::Singular("moment-form blend"))?;
    let a_t = chol.solve(&m.exy.transpose());
    LinearEstimator::new(a_t.transpose())
}

/// Bias-constrained linear estimator from the model:
/// A = (H^T Sn^-1 H + Sy^-1/(lambda+1))^-1 H^T Sn^-1.
pub fn lbce_model_form(
    h: &DMatrix<f64>,
    sigma_n: &DMatrix<f64>,
    sigma_y: &DMatrix<f64>,
    lambda: f64,
) -> Result<LinearEstimator> {
    check_lambda(lambda)?;
    let (w, g) = whitened_design(h, sigma_n)?;
    let sy_inv = inv_psd_with_jitter(sigma_y)?;
    let inner = g + sy_inv / (lambda + 1.0);
    let chol = Cholesky::new(inner).ok_or(Error::Singular("model-form inner matrix"))?;
    LinearEstimator::new(chol.solve(&w.transpose()))
}

/// Linear MMSE under the prior second moment (Bayesian linear regression):
/// A = (H^T Sn^-1 H + Sy^-1)^-1 H^T Sn^-1.
pub fn lmmse(
    h: &DMatrix<f64>,
    sigma_n: &DMatrix<f64>,
    sigma_y: &DMatrix<f64>,
) -> Result<LinearEstimator> {
    let (w, g) = whitened_design(h, sigma_n)?;
    let sy_inv = inv_psd_with_jitter(sigma_y)?;
    let inner = g + sy_inv;
    let chol = Cholesky::new(inner).ok_or(Error::Singular("LMMSE inner matrix"))?;
    LinearEstimator::new(chol.solve(&w.transpose()))
}

/// Weighted least squares, A = (H^T Sn^-1 H)^-1 H^T Sn^-1: the linear
/// minimum-variance unbiased estimator (A H = I).
pub fn wls(h: &DMatrix<f64>, sigma_n: &DMatrix<f64>) -> Result<LinearEstimator> {
    let (w, g) = whitened_design(h, sigma_n)?;
    let chol = Cholesky::new(g).ok_or(Error::Singular("WLS normal matrix (rank-deficient H)"))?;
    LinearEstimator::new(chol.solve(&w.transpose()))
}

/// Ridge-regularized linear regression with modified noise covariance
/// Stilde(lambda) = Sn + lambda I:
/// A = (H^T Stilde^-1 H + Sy_hat^-1)^-1 H^T Stilde^-1.
///
/// `lambda` may be negative as long as Stilde stays positive definite; a
/// too-negative value is reported as an error.
pub fn ridge_linear(
    h: &DMatrix<f64>,
    sigma_n: &DMatrix<f64>,
    sy_hat: &DMatrix<f64>,
    lambda: f64,
) -> Result<LinearEstimator> {
    let n = sigma_n.nrows();
    let stilde = sigma_n + DMatrix::<f64>::identity(n, n) * lambda;
    if Cholesky::new(stilde.clone()).is_none() {
        return Err(Error::NotPositiveDefinite("ridge-modified noise covariance"));
    }
    let (w, g) = whitened_design(h, &stilde)?;
    let sy_inv = inv_psd_with_jitter(sy_hat)?;
    let chol =
        Cholesky::new(g + sy_inv).ok_or(Error::Singular("ridge inner matrix"))?;
    LinearEstimator::new(chol.solve(&w.transpose()))
}

/// (Sn^-1 H, H^T Sn^-1 H) via the Cholesky factor of Sn.
fn whitened_design(
    h: &DMatrix<f64>,
    sigma_n: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if h.nrows() != sigma_n.nrows() {
        return Err(Error::DimensionMismatch {
            context: "design vs noise covariance",
            expected: sigma_n.nrows(),
            got: h.nrows(),
        });
    }
    let chol =
        Cholesky::new(sigma_n.clone()).ok_or(Error::NotPositiveDefinite("noise covariance"))?;
    let w = chol.solve(h);
    let g = h.transpose() * &w;
    Ok((w, g))
}

/// Inverse of a symmetric PSD matrix, adding [`DEFAULT_MOMENT_JITTER`] on the
/// diagonal only if the plain Cholesky fails.
fn inv_psd_with_jitter(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            context: "prior second moment",
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    if let Some(chol) = Cholesky::new(m.clone()) {
        return Ok(chol.inverse());
    }
    let jittered = m + DMatrix::<f64>::identity(m.nrows(), m.nrows()) * DEFAULT_MOMENT_JITTER;
    Cholesky::new(jittered)
        .map(|c| c.inverse())
        .ok_or(Error::NotPositiveDefinite("prior second moment"))
}

/// (1/N) sum y_i y_i^T + jitter I.
pub fn empirical_second_moment(samples: &[ParamVector], jitter: f64) -> Result<DMatrix<f64>> {
    let n = samples.len();
    if n == 0 {
        return Err(Error::InvalidConfig("empirical second moment of no samples"));
    }
    let d = samples[0].len();
    let mut acc = DMatrix::<f64>::zeros(d, d);
    for y in samples {
        if y.len() != d {
            return Err(Error::DimensionMismatch {
                context: "second-moment samples",
                expected: d,
                got: y.len(),
            });
        }
        acc += y * y.transpose();
    }
    acc /= n as f64;
    acc += DMatrix::<f64>::identity(d, d) * jitter;
    Ok(acc)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda >= 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig("lambda must be finite and >= 0"))
    }
}

// ---------------------------------------------------------------------------
// Scalar theory for the toy model x = y + w, w ~ N(0,1).
// ---------------------------------------------------------------------------

/// a(lambda) = ybar2 / (ybar2 + 1/(lambda+1)), where ybar2 is the (normalized)
/// training second moment of y. Strictly increasing in lambda; a -> 1 (WLS)
/// as lambda -> inf.
pub fn scalar_lbce(ybar2: f64, lambda: f64) -> f64 {
    ybar2 / (ybar2 + 1.0 / (lambda + 1.0))
}

/// Ridge solution a(lambda) = ybar2 / (ybar2 + 1 + rho lambda): the penalty
/// moves the coefficient in the opposite direction to the bias constraint.
pub fn scalar_ridge(ybar2: f64, rho: f64, lambda: f64) -> f64 {
    ybar2 / (ybar2 + 1.0 + rho * lambda)
}

/// The ridge weight that reproduces the bias-constrained solution:
/// lambda_ridge = (1/rho) (1/(lambda_bce+1) - 1). Nonpositive for every
/// lambda_bce >= 0 — matching a bias constraint requires *negative* ridge.
pub fn ridge_equiv_lambda(lambda_bce: f64, rho: f64) -> f64 {
    (1.0 / rho) * (1.0 / (lambda_bce + 1.0) - 1.0)
}

/// Conditional BMSE of the scalar estimator given the normalized training
/// second moment z_n, with alpha = 1/rho:
///
/// ```text
/// BMSE(z_n) = (alpha + z_n^2 (lambda+1)^2) / ((lambda+1) z_n + alpha)^2
/// ```
pub fn scalar_bmse_given_zn(z_n: f64, alpha: f64, lambda: f64) -> f64 {
    let lp = lambda + 1.0;
    (alpha + z_n * z_n * lp * lp) / ((lp * z_n + alpha) * (lp * z_n + alpha))
}

/// A Monte-Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BmseEstimate {
    pub mean: f64,
    pub std_error: f64,
}

/// Expectation of [`scalar_bmse_given_zn`] over the training draw
/// z_N ~ chi^2_N / N (y_i ~ N(0, rho) i.i.d.), by direct Monte-Carlo over
/// z_N.
pub fn bmse_n_expectation(
    n: usize,
    rho: f64,
    lambda: f64,
    reps: usize,
    rng: &mut RngStream,
) -> Result<BmseEstimate> {
    if n == 0 {
        return Err(Error::InvalidConfig("N must be >= 1"));
    }
    if reps < 10_000 {
        return Err(Error::InvalidConfig("bmse_n_expectation requires reps >= 10^4"));
    }
    if rho <= 0.0 || rho.is_nan() {
        return Err(Error::OutOfDomain("rho must be positive"));
    }
    check_lambda(lambda)?;
    let alpha = 1.0 / rho;
    let chi = ChiSquared::new(n as f64).map_err(|_| Error::InvalidConfig("chi-squared dof"))?;
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for _ in 0..reps {
        let z = chi.sample(rng) / n as f64;
        let v = scalar_bmse_given_zn(z, alpha, lambda);
        sum += v;
        sumsq += v * v;
    }
    let mean = sum / reps as f64;
    let var = (sumsq / reps as f64 - mean * mean).max(0.0);
    Ok(BmseEstimate {
        mean,
        std_error: (var / reps as f64).sqrt(),
    })
}
