//! Structured covariance estimation: x ~ N(0, Sigma(y)) where Sigma is a
//! sparse 5x5 pattern driven by nine parameters in [0, 1]:
//!
//! ```text
//!         | 1+y1   0     0    y6/2   0   |
//!         |  0    1+y2   0    y7/2   0   |
//! Sigma = |  0     0    1+y3   0    y8/2 |
//!         | y6/2  y7/2   0    1+y4  y9/2 |
//!         |  0     0    y8/2  y9/2  1+y5 |
//! ```
//!
//! One observation consists of `p_samples` i.i.d. vectors; the Fisher
//! information uses the zero-mean Gaussian identity
//! F_kl = (p/2) tr(Sigma^-1 D_k Sigma^-1 D_l) with the constant pattern
//! derivatives D_k read off the matrix above.

use nalgebra::{Cholesky, DMatrix, DVector};

use super::{standard_normal_matrix, FisherInfo, ObservationBatch, ParamVector, StatModel};
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Dimension of each observed vector.
pub const COV_DIM: usize = 5;
/// Number of covariance parameters.
pub const COV_PARAM_DIM: usize = 9;

/// Index pairs (row, col) of the off-diagonal parameters y6..y9.
const OFF_DIAG: [(usize, usize); 4] = [(0, 3), (1, 3), (2, 4), (3, 4)];

/// Builds Sigma(y) and verifies positive definiteness.
///
/// Every y in [0,1]^9 yields a positive definite matrix; the Cholesky check
/// guards the construction anyway.
pub fn build_sigma(y: &ParamVector) -> Result<DMatrix<f64>> {
    validate_params(y)?;
    let mut m = DMatrix::<f64>::identity(COV_DIM, COV_DIM);
    for k in 0..COV_DIM {
        m[(k, k)] += y[k];
    }
    for (k, &(i, j)) in OFF_DIAG.iter().enumerate() {
        let v = 0.5 * y[COV_DIM + k];
        m[(i, j)] = v;
        m[(j, i)] = v;
    }
    if Cholesky::new(m.clone()).is_none() {
        return Err(Error::NotPositiveDefinite("structured covariance"));
    }
    Ok(m)
}

/// Least-squares projection of a symmetric matrix onto the parameterization,
/// clamped into [0,1]^9. A cheap classical baseline for the learned nets.
pub fn project_sample_cov(c: &DMatrix<f64>) -> Result<ParamVector> {
    if c.nrows() != COV_DIM || c.ncols() != COV_DIM {
        return Err(Error::DimensionMismatch {
            context: "sample covariance",
            expected: COV_DIM,
            got: c.nrows(),
        });
    }
    let mut y = DVector::zeros(COV_PARAM_DIM);
    for k in 0..COV_DIM {
        y[k] = (c[(k, k)] - 1.0).clamp(0.0, 1.0);
    }
    for (k, &(i, j)) in OFF_DIAG.iter().enumerate() {
        y[COV_DIM + k] = (c[(i, j)] + c[(j, i)]).clamp(0.0, 1.0);
    }
    Ok(y)
}

fn validate_params(y: &ParamVector) -> Result<()> {
    if y.len() != COV_PARAM_DIM {
        return Err(Error::DimensionMismatch {
            context: "covariance parameter",
            expected: COV_PARAM_DIM,
            got: y.len(),
        });
    }
    if y.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::OutOfDomain("covariance parameters must lie in [0,1]"));
    }
    Ok(())
}

/// The constant derivative pattern dSigma/dy_k.
pub(crate) fn pattern(k: usize) -> DMatrix<f64> {
    let mut d = DMatrix::<f64>::zeros(COV_DIM, COV_DIM);
    if k < COV_DIM {
        d[(k, k)] = 1.0;
    } else {
        let (i, j) = OFF_DIAG[k - COV_DIM];
        d[(i, j)] = 0.5;
        d[(j, i)] = 0.5;
    }
    d
}

/// Gaussian model with the structured covariance; one observation is
/// `p_samples` i.i.d. 5-vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StructuredCovModel {
    p_samples: usize,
}

impl StructuredCovModel {
    pub fn new(p_samples: usize) -> Result<Self> {
        if p_samples == 0 {
            return Err(Error::InvalidConfig("StructuredCovModel requires p_samples >= 1"));
        }
        Ok(Self { p_samples })
    }

    pub fn samples_per_obs(&self) -> usize {
        self.p_samples
    }

    /// Analytic 9x9 Fisher information at y.
    pub fn fim(&self, y: &ParamVector) -> Result<FisherInfo> {
        let sigma = build_sigma(y)?;
        let chol = Cholesky::new(sigma).ok_or(Error::Singular("covariance FIM"))?;
        // A_k = Sigma^-1 D_k
        let products: alloc::vec::Vec<DMatrix<f64>> =
            (0..COV_PARAM_DIM).map(|k| chol.solve(&pattern(k))).collect();
        let half_p = self.p_samples as f64 / 2.0;
        let mut f = DMatrix::<f64>::zeros(COV_PARAM_DIM, COV_PARAM_DIM);
        for k in 0..COV_PARAM_DIM {
            for l in k..COV_PARAM_DIM {
                let v = half_p * (&products[k] * &products[l]).trace();
                f[(k, l)] = v;
                f[(l, k)] = v;
            }
        }
        FisherInfo::new(f)
    }
}

impl StatModel for StructuredCovModel {
    fn param_dim(&self) -> usize {
        COV_PARAM_DIM
    }

    fn target_dim(&self) -> usize {
        COV_PARAM_DIM
    }

    fn target(&self, theta: &ParamVector) -> ParamVector {
        theta.clone()
    }

    fn validate(&self, theta: &ParamVector) -> Result<()> {
        validate_params(theta)
    }

    fn sample(&self, theta: &ParamVector, rng: &mut RngStream) -> Result<ObservationBatch> {
        let sigma = build_sigma(theta)?;
        let chol = Cholesky::new(sigma).ok_or(Error::NotPositiveDefinite("covariance sample"))?;
        let z = standard_normal_matrix(COV_DIM, self.p_samples, rng);
        ObservationBatch::new(chol.l() * z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use alloc::vec;
    use alloc::vec::Vec;

    fn ones() -> ParamVector {
        DVector::from_element(COV_PARAM_DIM, 1.0)
    }

    #[test]
    fn sigma_at_zero_is_identity() {
        let s = build_sigma(&DVector::zeros(COV_PARAM_DIM)).unwrap();
        assert_eq!(s, DMatrix::identity(COV_DIM, COV_DIM));
    }

    #[test]
    fn sigma_at_ones_matches_pattern() {
        let s = build_sigma(&ones()).unwrap();
        for k in 0..COV_DIM {
            assert_eq!(s[(k, k)], 2.0);
        }
        for &(i, j) in &OFF_DIAG {
            assert_eq!(s[(i, j)], 0.5);
            assert_eq!(s[(j, i)], 0.5);
        }
        // everything else is zero
        let zero_pairs = [(0, 1), (0, 2), (0, 4), (1, 2), (1, 4), (2, 3)];
        for &(i, j) in &zero_pairs {
            assert_eq!(s[(i, j)], 0.0);
            assert_eq!(s[(j, i)], 0.0);
        }
    }

    #[test]
    fn sigma_is_entrywise_linear_in_y() {
        let mut r = rng::master(4);
        use rand::Rng;
        let y = DVector::from_iterator(COV_PARAM_DIM, (0..COV_PARAM_DIM).map(|_| r.random::<f64>()));
        let s = build_sigma(&y).unwrap();
        for &lam in &[0.0, 0.25, 0.5, 1.0] {
            let sl = build_sigma(&(&y * lam)).unwrap();
            let lhs = &sl - DMatrix::identity(COV_DIM, COV_DIM);
            let rhs = (&s - DMatrix::identity(COV_DIM, COV_DIM)) * lam;
            assert!((lhs - rhs).norm() < 1e-14);
        }
    }

    #[test]
    fn sigma_rejects_out_of_domain() {
        let mut y = DVector::zeros(COV_PARAM_DIM);
        y[3] = 1.5;
        assert!(matches!(build_sigma(&y), Err(Error::OutOfDomain(_))));
        y[3] = -0.1;
        assert!(build_sigma(&y).is_err());
    }

    #[test]
    fn sigma_pd_at_extreme_corners() {
        // corners that stress diagonal dominance the most
        let mut worst = DVector::zeros(COV_PARAM_DIM);
        for k in COV_DIM..COV_PARAM_DIM {
            worst[k] = 1.0;
        }
        assert!(build_sigma(&worst).is_ok());
        assert!(build_sigma(&ones()).is_ok());
    }

    #[test]
    fn sample_covariance_converges_to_identity_at_zero() {
        let model = StructuredCovModel::new(1000).unwrap();
        let y = DVector::zeros(COV_PARAM_DIM);
        let mut r = rng::master(8);
        let mut acc = DMatrix::<f64>::zeros(COV_DIM, COV_DIM);
        let calls = 1000usize; // 10^6 vectors in total
        for _ in 0..calls {
            let obs = model.sample(&y, &mut r).unwrap();
            acc += obs.samples() * obs.samples().transpose();
        }
        acc /= (calls * 1000) as f64;
        for i in 0..COV_DIM {
            for j in 0..COV_DIM {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((acc[(i, j)] - want).abs() < 0.01, "entry ({i},{j}) = {}", acc[(i, j)]);
            }
        }
    }

    #[test]
    fn sample_mean_is_zero() {
        let model = StructuredCovModel::new(1000).unwrap();
        let y = ones();
        let mut r = rng::master(9);
        let mut sum = DVector::<f64>::zeros(COV_DIM);
        let calls = 200usize;
        for _ in 0..calls {
            let obs = model.sample(&y, &mut r).unwrap();
            sum += obs.samples().column_sum();
        }
        let n = (calls * 1000) as f64;
        // per-coordinate std is at most sqrt(2); allow 3 standard errors
        for k in 0..COV_DIM {
            let mean = sum[k] / n;
            assert!(mean.abs() < 3.0 * (2.0f64 / n).sqrt(), "mean[{k}] = {mean}");
        }
    }

    #[test]
    fn sample_covariance_matches_sigma_at_ones() {
        let model = StructuredCovModel::new(1000).unwrap();
        let y = ones();
        let sigma = build_sigma(&y).unwrap();
        let mut r = rng::master(10);
        let mut acc = DMatrix::<f64>::zeros(COV_DIM, COV_DIM);
        let calls = 1000usize;
        for _ in 0..calls {
            let obs = model.sample(&y, &mut r).unwrap();
            acc += obs.samples() * obs.samples().transpose();
        }
        acc /= (calls * 1000) as f64;
        for i in 0..COV_DIM {
            for j in 0..COV_DIM {
                assert!(
                    (acc[(i, j)] - sigma[(i, j)]).abs() < 0.02,
                    "entry ({i},{j}): {} vs {}",
                    acc[(i, j)],
                    sigma[(i, j)]
                );
            }
        }
    }

    #[test]
    fn fim_hand_value_at_zero() {
        let model = StructuredCovModel::new(20).unwrap();
        let f = model.fim(&DVector::zeros(COV_PARAM_DIM)).unwrap();
        for k in 0..COV_PARAM_DIM {
            for l in 0..COV_PARAM_DIM {
                let want = if k != l {
                    0.0
                } else if k < COV_DIM {
                    10.0
                } else {
                    5.0
                };
                assert!((f.matrix()[(k, l)] - want).abs() < 1e-12);
            }
        }
        assert!((f.crb_trace().unwrap() - 1.3).abs() < 1e-12);
    }

    #[test]
    fn fim_scales_linearly_in_p_samples() {
        let y = DVector::from_element(COV_PARAM_DIM, 0.3);
        let f1 = StructuredCovModel::new(7).unwrap().fim(&y).unwrap();
        let f2 = StructuredCovModel::new(14).unwrap().fim(&y).unwrap();
        assert_eq!(f2.matrix(), &(f1.matrix() * 2.0));
    }

    /// Expected log-likelihood per vector given the empirical second moment:
    /// g(y') = -0.5 [ log det(2 pi Sigma(y')) + tr(Sigma(y')^-1 Cbar) ].
    /// Its negative Hessian at the data-generating y estimates the
    /// per-sample Fisher information; the Monte-Carlo enters only through
    /// Cbar, so common draws cancel across the finite-difference stencil.
    fn expected_loglik(y: &ParamVector, cbar: &DMatrix<f64>) -> f64 {
        let sigma = build_sigma(y).unwrap();
        let chol = Cholesky::new(sigma).unwrap();
        let logdet: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        let quad = chol.solve(cbar).trace();
        -0.5 * (logdet + (COV_DIM as f64) * (2.0 * core::f64::consts::PI).ln() + quad)
    }

    #[test]
    fn fim_matches_finite_difference_oracle() {
        use rand::Rng;
        let p_samples = 20usize;
        let model = StructuredCovModel::new(p_samples).unwrap();

        let mut points: Vec<ParamVector> = vec![DVector::from_element(COV_PARAM_DIM, 0.5)];
        let mut r = rng::master(30);
        for _ in 0..3 {
            points.push(DVector::from_iterator(
                COV_PARAM_DIM,
                (0..COV_PARAM_DIM).map(|_| 0.1 + 0.8 * r.random::<f64>()),
            ));
        }

        for (pi, y) in points.iter().enumerate() {
            // empirical second moment from 10^5 vectors at y
            let gen = StructuredCovModel::new(1000).unwrap();
            let mut cbar = DMatrix::<f64>::zeros(COV_DIM, COV_DIM);
            let mut rr = rng::master(40 + pi as u64);
            for _ in 0..100 {
                let obs = gen.sample(y, &mut rr).unwrap();
                cbar += obs.samples() * obs.samples().transpose();
            }
            cbar /= 100_000.0;

            let h = 1e-3;
            let mut hess = DMatrix::<f64>::zeros(COV_PARAM_DIM, COV_PARAM_DIM);
            for k in 0..COV_PARAM_DIM {
                for l in k..COV_PARAM_DIM {
                    let eval = |sk: f64, sl: f64| {
                        let mut yp = y.clone();
                        yp[k] += sk * h;
                        yp[l] += sl * h;
                        expected_loglik(&yp, &cbar)
                    };
                    let v = (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0)
                        + eval(-1.0, -1.0))
                        / (4.0 * h * h);
                    hess[(k, l)] = v;
                    hess[(l, k)] = v;
                }
            }
            let oracle = -hess * p_samples as f64;
            let f = model.fim(y).unwrap();
            let rel = (f.matrix() - &oracle).norm() / oracle.norm();
            assert!(rel < 0.05, "point {pi}: relative Frobenius error {rel}");
        }
    }

    #[test]
    fn projection_recovers_exact_sigma() {
        let y = DVector::from_vec(vec![0.2, 0.4, 0.6, 0.8, 1.0, 0.1, 0.3, 0.5, 0.7]);
        let s = build_sigma(&y).unwrap();
        let back = project_sample_cov(&s).unwrap();
        assert!((back - y).norm() < 1e-14);
    }

    #[test]
    fn determinism_same_seed_same_draws() {
        let model = StructuredCovModel::new(10).unwrap();
        let y = DVector::from_element(COV_PARAM_DIM, 0.5);
        let a = model.sample(&y, &mut rng::master(123)).unwrap();
        let b = model.sample(&y, &mut rng::master(123)).unwrap();
        assert_eq!(a.samples(), b.samples());
    }
}
