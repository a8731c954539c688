//! Fictitious priors and synthetic grouped datasets.
//!
//! Deterministic-parameter estimation has no prior; to train on synthetic
//! data one is invented. A [`FictitiousPrior`] draws parameter vectors, and
//! [`gen_dataset`] pairs each draw with M conditionally i.i.d. observations,
//! producing the grouped dataset that makes the empirical bias term of the
//! training loss measurable.
//!
//! Generation is parallelizable over records: record i consumes substream i
//! of the seed, so the dataset is bit-identical at any thread count.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::Rng;

use crate::error::{Error, Result};
use crate::parallel;
use crate::rng::{self, RngStream};
use crate::statmodels::{ObservationBatch, ParamVector, StatModel};

/// A prior used only to synthesize training parameters.
#[derive(Debug, Clone)]
pub enum FictitiousPrior {
    /// Independent uniform draws in [lower_k, upper_k] per dimension.
    /// Degenerate dimensions (lower = upper) yield that constant.
    UniformBox {
        lower: DVector<f64>,
        upper: DVector<f64>,
    },
    /// Gaussian draws; the covariance may be singular (PSD). Draws are
    /// unconstrained unless a clip box is configured.
    Gaussian {
        mean: DVector<f64>,
        factor: DMatrix<f64>,
        cov: DMatrix<f64>,
        clip: Option<(DVector<f64>, DVector<f64>)>,
    },
    /// SNR composite: h uniform over `h_range`, the SNR y uniform over
    /// `snr_range`, and sigma^2 = h^2 / y. Produces theta = (h, sigma^2).
    SnrComposite {
        h_range: (f64, f64),
        snr_range: (f64, f64),
    },
}

impl FictitiousPrior {
    pub fn uniform_box(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                context: "uniform box bounds",
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| l > u || !l.is_finite() || !u.is_finite())
        {
            return Err(Error::InvalidConfig("uniform box requires lower <= upper, finite"));
        }
        Ok(Self::UniformBox { lower, upper })
    }

    /// Gaussian prior with PSD covariance. Negative eigenvalues below a small
    /// tolerance are clamped to zero; anything worse is rejected.
    pub fn gaussian(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        Self::gaussian_with_clip(mean, cov, None)
    }

    pub fn gaussian_with_clip(
        mean: DVector<f64>,
        cov: DMatrix<f64>,
        clip: Option<(DVector<f64>, DVector<f64>)>,
    ) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch {
                context: "gaussian prior covariance",
                expected: d,
                got: cov.nrows(),
            });
        }
        let eig = nalgebra::SymmetricEigen::new(cov.clone());
        let max_eig = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
        let tol = 1e-10 * max_eig.max(1.0);
        let mut scales = DVector::zeros(d);
        for (k, &lam) in eig.eigenvalues.iter().enumerate() {
            if lam < -tol {
                return Err(Error::NotPositiveDefinite("gaussian prior covariance"));
            }
            scales[k] = lam.max(0.0).sqrt();
        }
        let mut factor = eig.eigenvectors;
        for (k, mut col) in factor.column_iter_mut().enumerate() {
            col *= scales[k];
        }
        if let Some((lo, hi)) = &clip {
            if lo.len() != d || hi.len() != d {
                return Err(Error::InvalidConfig("clip box dimension mismatch"));
            }
        }
        Ok(Self::Gaussian {
            mean,
            factor,
            cov,
            clip,
        })
    }

    pub fn snr_composite(h_range: (f64, f64), snr_range: (f64, f64)) -> Result<Self> {
        if !(h_range.0 > 0.0 && h_range.1 >= h_range.0) {
            return Err(Error::InvalidConfig("h range must be positive and ordered"));
        }
        if !(snr_range.0 > 0.0 && snr_range.1 >= snr_range.0) {
            return Err(Error::InvalidConfig("snr range must be positive and ordered"));
        }
        Ok(Self::SnrComposite { h_range, snr_range })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::UniformBox { lower, .. } => lower.len(),
            Self::Gaussian { mean, .. } => mean.len(),
            Self::SnrComposite { .. } => 2,
        }
    }

    pub fn sample_one(&self, rng: &mut RngStream) -> ParamVector {
        match self {
            Self::UniformBox { lower, upper } => DVector::from_iterator(
                lower.len(),
                lower
                    .iter()
                    .zip(upper.iter())
                    .map(|(&l, &u)| l + (u - l) * rng.random::<f64>()),
            ),
            Self::Gaussian {
                mean, factor, clip, ..
            } => {
                let z = crate::statmodels::standard_normal_vector(mean.len(), rng);
                let mut y = mean + factor * z;
                if let Some((lo, hi)) = clip {
                    for k in 0..y.len() {
                        y[k] = y[k].clamp(lo[k], hi[k]);
                    }
                }
                y
            }
            Self::SnrComposite { h_range, snr_range } => {
                let h = h_range.0 + (h_range.1 - h_range.0) * rng.random::<f64>();
                let y = snr_range.0 + (snr_range.1 - snr_range.0) * rng.random::<f64>();
                DVector::from_vec(alloc::vec![h, h * h / y])
            }
        }
    }

    pub fn sample(&self, count: usize, rng: &mut RngStream) -> Result<Vec<ParamVector>> {
        if count == 0 {
            return Err(Error::InvalidConfig("prior sample count must be >= 1"));
        }
        Ok((0..count).map(|_| self.sample_one(rng)).collect())
    }
}

/// I.i.d. draws from a prior.
pub fn prior_sample(
    prior: &FictitiousPrior,
    count: usize,
    rng: &mut RngStream,
) -> Result<Vec<ParamVector>> {
    prior.sample(count, rng)
}

/// The grouped dataset: N parameter draws, each with M conditionally i.i.d.
/// observations generated under it.
#[derive(Debug, Clone)]
pub struct DatasetNM {
    params: Vec<ParamVector>,
    observations: Vec<Vec<ObservationBatch>>,
    obs_per_record: usize,
}

impl DatasetNM {
    pub fn records(&self) -> usize {
        self.params.len()
    }

    pub fn obs_per_record(&self) -> usize {
        self.obs_per_record
    }

    pub fn params(&self, i: usize) -> &ParamVector {
        &self.params[i]
    }

    pub fn observation(&self, i: usize, j: usize) -> &ObservationBatch {
        &self.observations[i][j]
    }

    pub fn all_params(&self) -> &[ParamVector] {
        &self.params
    }
}

/// Generates a dataset: N prior draws, M observations each.
///
/// Record i consumes substream i of `seed`; the result is identical whether
/// records are generated sequentially or in parallel.
pub fn gen_dataset(
    prior: &FictitiousPrior,
    model: &dyn StatModel,
    n: usize,
    m: usize,
    seed: u64,
) -> Result<DatasetNM> {
    if n == 0 || m == 0 {
        return Err(Error::InvalidConfig("dataset requires N >= 1 and M >= 1"));
    }
    if prior.dim() != model.param_dim() {
        return Err(Error::DimensionMismatch {
            context: "prior vs model parameter dimension",
            expected: model.param_dim(),
            got: prior.dim(),
        });
    }
    let records = parallel::map_indexed(n, |i| -> Result<(ParamVector, Vec<ObservationBatch>)> {
        let mut stream = rng::substream(seed, i as u64);
        let theta = prior.sample_one(&mut stream);
        let obs = (0..m)
            .map(|_| model.sample(&theta, &mut stream))
            .collect::<Result<Vec<_>>>()?;
        Ok((theta, obs))
    });
    let mut params = Vec::with_capacity(n);
    let mut observations = Vec::with_capacity(n);
    for rec in records {
        let (theta, obs) = rec?;
        params.push(theta);
        observations.push(obs);
    }
    Ok(DatasetNM {
        params,
        observations,
        obs_per_record: m,
    })
}

/// One fresh training batch (same layout as a dataset record block),
/// deterministic in (seed, batch_index). Batches with different indices use
/// disjoint substreams, which is what makes "the data is generated
/// independently in each batch" reproducible.
pub fn gen_batch(
    prior: &FictitiousPrior,
    model: &dyn StatModel,
    groups: usize,
    group_size: usize,
    seed: u64,
    batch_index: u64,
) -> Result<(Vec<ParamVector>, Vec<Vec<ObservationBatch>>)> {
    if groups == 0 || group_size == 0 {
        return Err(Error::InvalidConfig("batch requires groups >= 1 and group size >= 1"));
    }
    if prior.dim() != model.param_dim() {
        return Err(Error::DimensionMismatch {
            context: "prior vs model parameter dimension",
            expected: model.param_dim(),
            got: prior.dim(),
        });
    }
    let mut stream = rng::substream(seed, batch_index);
    let mut params = Vec::with_capacity(groups);
    let mut observations = Vec::with_capacity(groups);
    for _ in 0..groups {
        let theta = prior.sample_one(&mut stream);
        let obs = (0..group_size)
            .map(|_| model.sample(&theta, &mut stream))
            .collect::<Result<Vec<_>>>()?;
        params.push(theta);
        observations.push(obs);
    }
    Ok((params, observations))
}

/// An r x c matrix of i.i.d. standard normal entries.
pub fn gaussian_matrix(rows: usize, cols: usize, rng: &mut RngStream) -> DMatrix<f64> {
    crate::statmodels::standard_normal_matrix(rows, cols, rng)
}

/// A random orthogonal matrix (QR of a Gaussian matrix).
pub fn random_orthogonal(n: usize, rng: &mut RngStream) -> DMatrix<f64> {
    let g = crate::statmodels::standard_normal_matrix(n, n, rng);
    g.qr().q()
}

/// A random symmetric matrix with the given spectrum: Q diag(eigs) Q^T.
pub fn symmetric_with_spectrum(eigs: &[f64], rng: &mut RngStream) -> DMatrix<f64> {
    let n = eigs.len();
    let q = random_orthogonal(n, rng);
    let d = DMatrix::from_diagonal(&DVector::from_column_slice(eigs));
    &q * d * q.transpose()
}
