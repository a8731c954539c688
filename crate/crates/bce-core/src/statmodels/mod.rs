//! Parametric observation models p(x; y).
//!
//! Three models cover the experiments: a linear-Gaussian model
//! ([`LinearGaussianModel`]), non-data-aided SNR estimation from binary
//! symbols in Gaussian noise ([`SnrModel`]), and a zero-mean Gaussian with a
//! sparse structured covariance ([`StructuredCovModel`]). Each model offers
//! exact sampling and Fisher information; the SNR model additionally carries
//! a grid-based maximum-likelihood estimator.
//!
//! Models are immutable after construction and safe to share across threads.
//! Sampling always takes a caller-provided [`RngStream`].

mod covariance;
mod linear;
mod snr;

pub(crate) use covariance::pattern;
pub use covariance::{build_sigma, project_sample_cov, StructuredCovModel, COV_DIM, COV_PARAM_DIM};
pub use linear::LinearGaussianModel;
pub use snr::{SnrMle, SnrModel, SNR_ESTIMATE_MAX, SNR_ESTIMATE_MIN};

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// A parameter vector (the unknown the estimators target).
pub type ParamVector = DVector<f64>;

/// One observation: `count` sample vectors of a common dimension, stored as
/// the columns of a matrix.
///
/// For the linear-Gaussian model an observation is a single n-vector
/// (`dim = n`, `count = 1`); for the SNR model it is `p` scalar symbols
/// (`dim = 1`, `count = p`); for the structured covariance model it is
/// `p_samples` i.i.d. 5-vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationBatch {
    data: DMatrix<f64>,
}

impl ObservationBatch {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.ncols() == 0 || data.nrows() == 0 {
            return Err(Error::DegenerateInput("empty observation"));
        }
        Ok(Self { data })
    }

    /// Dimension of each sample vector.
    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    /// Number of sample vectors.
    pub fn count(&self) -> usize {
        self.data.ncols()
    }

    /// Samples as columns.
    pub fn samples(&self) -> &DMatrix<f64> {
        &self.data
    }

    /// All entries in column-major order (for scalar-sample models this is
    /// simply the sequence of values).
    pub fn values(&self) -> &[f64] {
        self.data.as_slice()
    }

    /// The observation flattened to a single vector (column-major).
    pub fn flatten(&self) -> DVector<f64> {
        DVector::from_column_slice(self.data.as_slice())
    }

    /// The biased sample covariance (1/count) * sum x_j x_j^T.
    pub fn sample_covariance(&self) -> DMatrix<f64> {
        let scale = 1.0 / self.count() as f64;
        &self.data * self.data.transpose() * scale
    }
}

/// Fisher information matrix of a model at a parameter value.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherInfo {
    matrix: DMatrix<f64>,
}

impl FisherInfo {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::DimensionMismatch {
                context: "FisherInfo::new",
                expected: matrix.nrows(),
                got: matrix.ncols(),
            });
        }
        Ok(Self { matrix })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Trace of the inverse: the Cramér-Rao lower bound on the variance of
    /// any unbiased estimator.
    pub fn crb_trace(&self) -> Result<f64> {
        crb_trace(self)
    }
}

/// Tr(F^-1) for a positive definite Fisher information matrix.
pub fn crb_trace(fim: &FisherInfo) -> Result<f64> {
    let chol = nalgebra::Cholesky::new(fim.matrix.clone())
        .ok_or(Error::NotPositiveDefinite("Fisher information"))?;
    let inv = chol.inverse();
    Ok(inv.trace())
}

/// Common sampling/target interface over the three models.
///
/// `param_dim` is the dimension of the vector driving the sampler;
/// `target_dim` is the dimension of the estimand. They coincide except for
/// the SNR model, which is sampled from (h, sigma^2) but estimates the
/// scalar y = h^2/sigma^2.
pub trait StatModel: Sync {
    fn param_dim(&self) -> usize;

    fn target_dim(&self) -> usize;

    /// The estimand associated with a sampler parameter vector.
    fn target(&self, theta: &ParamVector) -> ParamVector;

    fn validate(&self, theta: &ParamVector) -> Result<()>;

    /// Draws one observation from p(x; theta).
    fn sample(&self, theta: &ParamVector, rng: &mut RngStream) -> Result<ObservationBatch>;
}

/// Fills a vector with standard normal draws.
pub(crate) fn standard_normal_vector(n: usize, rng: &mut RngStream) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Fills an r x c matrix with standard normal draws (column-major order).
pub(crate) fn standard_normal_matrix(r: usize, c: usize, rng: &mut RngStream) -> DMatrix<f64> {
    DMatrix::from_iterator(r, c, (0..r * c).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Checks that every entry of `v` is finite.
pub(crate) fn ensure_finite(v: &[f64], context: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::OutOfDomain(context))
    }
}

/// Convenience: collects model samples for a list of parameter draws.
pub fn sample_many(
    model: &dyn StatModel,
    thetas: &[ParamVector],
    per_theta: usize,
    rng: &mut RngStream,
) -> Result<Vec<Vec<ObservationBatch>>> {
    thetas
        .iter()
        .map(|theta| {
            (0..per_theta)
                .map(|_| model.sample(theta, rng))
                .collect::<Result<Vec<_>>>()
        })
        .collect()
}
