//! Linear-Gaussian observation model x = H y + n, n ~ N(0, Sigma_n).

use nalgebra::{Cholesky, DMatrix, Dyn};

use super::{
    ensure_finite, standard_normal_vector, FisherInfo, ObservationBatch, ParamVector, StatModel,
};
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// x = H y + n with n ~ N(0, Sigma_n).
///
/// The Cholesky factor of the noise covariance is computed once at
/// construction; sampling multiplies it by a standard normal vector.
#[derive(Debug, Clone)]
pub struct LinearGaussianModel {
    h: DMatrix<f64>,
    sigma_n: DMatrix<f64>,
    noise_chol: Cholesky<f64, Dyn>,
}

impl LinearGaussianModel {
    /// `h` is n x d, `sigma_n` must be symmetric positive definite n x n.
    pub fn new(h: DMatrix<f64>, sigma_n: DMatrix<f64>) -> Result<Self> {
        if sigma_n.nrows() != sigma_n.ncols() {
            return Err(Error::DimensionMismatch {
                context: "LinearGaussianModel noise covariance",
                expected: sigma_n.nrows(),
                got: sigma_n.ncols(),
            });
        }
        if h.nrows() != sigma_n.nrows() {
            return Err(Error::DimensionMismatch {
                context: "LinearGaussianModel design matrix rows",
                expected: sigma_n.nrows(),
                got: h.nrows(),
            });
        }
        let noise_chol = Cholesky::new(sigma_n.clone())
            .ok_or(Error::NotPositiveDefinite("noise covariance"))?;
        Ok(Self {
            h,
            sigma_n,
            noise_chol,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn noise_cov(&self) -> &DMatrix<f64> {
        &self.sigma_n
    }

    /// Fisher information H^T Sigma_n^-1 H; independent of y.
    pub fn fim(&self) -> FisherInfo {
        let w = self.noise_chol.solve(&self.h); // Sigma_n^-1 H
        FisherInfo::new(self.h.transpose() * w).expect("square by construction")
    }
}

impl StatModel for LinearGaussianModel {
    fn param_dim(&self) -> usize {
        self.h.ncols()
    }

    fn target_dim(&self) -> usize {
        self.h.ncols()
    }

    fn target(&self, theta: &ParamVector) -> ParamVector {
        theta.clone()
    }

    fn validate(&self, theta: &ParamVector) -> Result<()> {
        if theta.len() != self.param_dim() {
            return Err(Error::DimensionMismatch {
                context: "linear-Gaussian parameter",
                expected: self.param_dim(),
                got: theta.len(),
            });
        }
        ensure_finite(theta.as_slice(), "linear-Gaussian parameter not finite")
    }

    fn sample(&self, theta: &ParamVector, rng: &mut RngStream) -> Result<ObservationBatch> {
        self.validate(theta)?;
        let z = standard_normal_vector(self.obs_dim(), rng);
        let x = &self.h * theta + self.noise_chol.l() * z;
        ObservationBatch::new(DMatrix::from_column_slice(self.obs_dim(), 1, x.as_slice()))
    }
}
