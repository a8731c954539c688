//! The regularization comparison on the linear-Gaussian model.
//!
//! A linear estimator is fit from N prior draws (through the empirical
//! second moment of y) while the measurement and noise models are known
//! exactly. Three families compete: the plain empirical estimator (lambda =
//! 0), ridge with its modified noise covariance, and the bias-constrained
//! closed form. Per trial, each family's hyper-parameter is selected by BMSE
//! on a large fresh validation set (through its sufficient statistics); the
//! reported score is the exact test BMSE under the true prior, averaged over
//! trials.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::datagen;
use crate::error::{Error, Result};
use crate::linear_bce::{empirical_second_moment, lbce_model_form, lmmse, ridge_linear};
use crate::parallel;
use crate::rng::{self, RngStream};
use crate::statmodels::standard_normal_matrix;

/// A mean with its standard error over trials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

impl MeanSe {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Self {
            mean,
            se: (var / n).sqrt(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RegularizationConfig {
    /// Measurement matrix (n x d).
    pub h: DMatrix<f64>,
    /// True noise covariance.
    pub sigma_w: DMatrix<f64>,
    /// True prior covariance of y.
    pub sigma_y: DMatrix<f64>,
    /// Training-set sizes to sweep.
    pub n_list: Vec<usize>,
    /// Independent training sets per N.
    pub trials: usize,
    /// Bias-constraint grid (lambda >= 0).
    pub bce_grid: Vec<f64>,
    /// Ridge grid (may be negative).
    pub ridge_grid: Vec<f64>,
    /// Fresh (y, x) pairs per trial for hyper-parameter selection.
    pub validation_size: usize,
    /// Jitter for the empirical second moment.
    pub jitter: f64,
}

impl RegularizationConfig {
    /// The 20-dimensional setup of the experiments: H with i.i.d. Gaussian
    /// entries, a rotated non-diagonal noise covariance normalized to
    /// tr/n = 1, and a rotated approximately-low-rank prior covariance with
    /// five eigenvalues at 100 and the rest at 0.01. Grids: 100 points in
    /// [0, 10] for the bias constraint and 100 in [-0.012, 0.002] for ridge.
    pub fn paper_default(seed: u64) -> Self {
        let (n, d) = (20usize, 20usize);
        let mut stream = rng::master(rng::derive_seed(seed, 0xc0f1));
        let h = standard_normal_matrix(n, d, &mut stream) / (d as f64).sqrt();

        let noise_eigs: Vec<f64> = (0..n).map(|k| 0.4 + 1.2 * k as f64 / (n - 1) as f64).collect();
        let mut sigma_w = datagen::symmetric_with_spectrum(&noise_eigs, &mut stream);
        let tr = sigma_w.trace();
        sigma_w *= n as f64 / tr;

        let mut prior_eigs = alloc::vec![100.0f64; 5];
        prior_eigs.extend(alloc::vec![0.01f64; 15]);
        let sigma_y = datagen::symmetric_with_spectrum(&prior_eigs, &mut stream);

        let grid = |lo: f64, hi: f64| -> Vec<f64> {
            (0..100).map(|k| lo + (hi - lo) * k as f64 / 99.0).collect()
        };
        Self {
            h,
            sigma_w,
            sigma_y,
            n_list: alloc::vec![5, 10, 20],
            trials: 100,
            bce_grid: grid(0.0, 10.0),
            ridge_grid: grid(-0.012, 0.002),
            validation_size: 100_000,
            jitter: 1e-9,
        }
    }
}

/// Exact BMSE of a linear estimator under the true model and prior:
/// tr((A H - I) Sigma_y (A H - I)^T) + tr(A Sigma_w A^T).
pub fn linear_bmse(
    a: &DMatrix<f64>,
    h: &DMatrix<f64>,
    sigma_w: &DMatrix<f64>,
    sigma_y: &DMatrix<f64>,
) -> f64 {
    let d = h.ncols();
    let ah = a * h - DMatrix::<f64>::identity(d, d);
    (&ah * sigma_y * ah.transpose()).trace() + (a * sigma_w * a.transpose()).trace()
}

/// Per-(N, method) summary.
#[derive(Debug, Clone)]
pub struct RegularizationCell {
    pub n: usize,
    pub emmse: MeanSe,
    pub ridge: MeanSe,
    pub bce: MeanSe,
    /// Fraction of trials whose selected ridge parameter was negative.
    pub ridge_negative_fraction: f64,
    pub mean_selected_bce_lambda: f64,
    pub mean_selected_ridge_lambda: f64,
}

#[derive(Debug, Clone)]
pub struct RegularizationResult {
    pub cells: Vec<RegularizationCell>,
    /// Ridge grid points skipped because Sigma_w + lambda I lost positive
    /// definiteness.
    pub skipped_ridge_points: usize,
}

struct TrialOutcome {
    emmse: f64,
    ridge: f64,
    bce: f64,
    ridge_lambda: f64,
    bce_lambda: f64,
    skipped: usize,
}

/// Validation-set second moments, accumulated in chunks of whole columns.
struct ValidationMoments {
    s_xx: DMatrix<f64>,
    s_xy: DMatrix<f64>,
    s_yy_trace: f64,
    count: f64,
}

impl ValidationMoments {
    fn collect(
        h: &DMatrix<f64>,
        noise_factor: &DMatrix<f64>,
        prior_factor: &DMatrix<f64>,
        size: usize,
        stream: &mut RngStream,
    ) -> Self {
        let n = h.nrows();
        let d = h.ncols();
        let mut s_xx = DMatrix::<f64>::zeros(n, n);
        let mut s_xy = DMatrix::<f64>::zeros(n, d);
        let mut s_yy_trace = 0.0;
        let chunk = 4096usize;
        let mut left = size;
        while left > 0 {
            let b = left.min(chunk);
            let y = prior_factor * standard_normal_matrix(d, b, stream);
            let x = h * &y + noise_factor * standard_normal_matrix(n, b, stream);
            s_xx += &x * x.transpose();
            s_xy += &x * y.transpose();
            s_yy_trace += y.norm_squared();
            left -= b;
        }
        Self {
            s_xx,
            s_xy,
            s_yy_trace,
            count: size as f64,
        }
    }

    /// Empirical BMSE of yhat = A x on the validation set.
    fn bmse(&self, a: &DMatrix<f64>) -> f64 {
        ((a * &self.s_xx * a.transpose()).trace() - 2.0 * (a * &self.s_xy).trace()
            + self.s_yy_trace)
            / self.count
    }
}

/// Runs the full sweep; deterministic in `seed` at any thread count.
pub fn regularization_experiment(
    config: &RegularizationConfig,
    seed: u64,
) -> Result<RegularizationResult> {
    if config.trials == 0 || config.n_list.is_empty() {
        return Err(Error::InvalidConfig("regularization experiment needs trials and sizes"));
    }
    let prior_factor = psd_factor(&config.sigma_y)?;
    let noise_factor = nalgebra::Cholesky::new(config.sigma_w.clone())
        .ok_or(Error::NotPositiveDefinite("noise covariance"))?
        .l();

    let mut cells = Vec::with_capacity(config.n_list.len());
    let mut skipped_total = 0usize;
    for (n_idx, &n_train) in config.n_list.iter().enumerate() {
        let outcomes = parallel::map_indexed(config.trials, |trial| -> Result<TrialOutcome> {
            let trial_seed =
                rng::derive_seed(seed, (n_idx * config.trials + trial) as u64);
            run_trial(config, n_train, &prior_factor, &noise_factor, trial_seed)
        });
        let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;

        let collect = |f: &dyn Fn(&TrialOutcome) -> f64| -> Vec<f64> {
            outcomes.iter().map(f).collect()
        };
        let ridge_lambdas = collect(&|o| o.ridge_lambda);
        let bce_lambdas = collect(&|o| o.bce_lambda);
        skipped_total += outcomes.iter().map(|o| o.skipped).sum::<usize>();
        cells.push(RegularizationCell {
            n: n_train,
            emmse: MeanSe::from_samples(&collect(&|o| o.emmse)),
            ridge: MeanSe::from_samples(&collect(&|o| o.ridge)),
            bce: MeanSe::from_samples(&collect(&|o| o.bce)),
            ridge_negative_fraction: ridge_lambdas.iter().filter(|&&l| l < 0.0).count() as f64
                / config.trials as f64,
            mean_selected_bce_lambda: bce_lambdas.iter().sum::<f64>() / config.trials as f64,
            mean_selected_ridge_lambda: ridge_lambdas.iter().sum::<f64>()
                / config.trials as f64,
        });
    }
    Ok(RegularizationResult {
        cells,
        skipped_ridge_points: skipped_total,
    })
}

fn run_trial(
    config: &RegularizationConfig,
    n_train: usize,
    prior_factor: &DMatrix<f64>,
    noise_factor: &DMatrix<f64>,
    trial_seed: u64,
) -> Result<TrialOutcome> {
    let d = config.h.ncols();
    let mut train_stream = rng::substream(trial_seed, 0);
    let ys: Vec<DVector<f64>> = (0..n_train)
        .map(|_| prior_factor * crate::statmodels::standard_normal_vector(d, &mut train_stream))
        .collect();
    let sy_hat = empirical_second_moment(&ys, config.jitter)?;

    let mut val_stream = rng::substream(trial_seed, 1);
    let val = ValidationMoments::collect(
        &config.h,
        noise_factor,
        prior_factor,
        config.validation_size,
        &mut val_stream,
    );

    let test =
        |a: &DMatrix<f64>| linear_bmse(a, &config.h, &config.sigma_w, &config.sigma_y);

    let emmse = lmmse(&config.h, &config.sigma_w, &sy_hat)?;

    let mut best_bce: Option<(f64, f64, f64)> = None; // (val, lambda, test)
    for &lam in &config.bce_grid {
        let a = lbce_model_form(&config.h, &config.sigma_w, &sy_hat, lam)?;
        let v = val.bmse(a.matrix());
        if best_bce.is_none_or(|(bv, _, _)| v < bv) {
            best_bce = Some((v, lam, test(a.matrix())));
        }
    }
    let (_, bce_lambda, bce_test) =
        best_bce.ok_or(Error::InvalidConfig("empty bias-constraint grid"))?;

    let mut best_ridge: Option<(f64, f64, f64)> = None;
    let mut skipped = 0usize;
    for &lam in &config.ridge_grid {
        match ridge_linear(&config.h, &config.sigma_w, &sy_hat, lam) {
            Ok(a) => {
                let v = val.bmse(a.matrix());
                if best_ridge.is_none_or(|(bv, _, _)| v < bv) {
                    best_ridge = Some((v, lam, test(a.matrix())));
                }
            }
            Err(Error::NotPositiveDefinite(_)) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    let (_, ridge_lambda, ridge_test) =
        best_ridge.ok_or(Error::InvalidConfig("entire ridge grid violated positivity"))?;

    Ok(TrialOutcome {
        emmse: test(emmse.matrix()),
        ridge: ridge_test,
        bce: bce_test,
        ridge_lambda,
        bce_lambda,
        skipped,
    })
}

/// Symmetric PSD factor F with F F^T = m (eigendecomposition; tolerates
/// rank deficiency).
fn psd_factor(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    let max_eig = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let tol = 1e-10 * max_eig.max(1.0);
    let mut f = eig.eigenvectors;
    for (k, mut col) in f.column_iter_mut().enumerate() {
        let lam = eig.eigenvalues[k];
        if lam < -tol {
            return Err(Error::NotPositiveDefinite("prior covariance"));
        }
        col *= lam.max(0.0).sqrt();
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(trials: usize, n_list: Vec<usize>) -> RegularizationConfig {
        let mut cfg = RegularizationConfig::paper_default(5);
        // shrink to desk-test scale
        let keep = 6usize;
        cfg.h = cfg.h.view((0, 0), (keep, keep)).into_owned();
        let mut stream = rng::master(17);
        let noise_eigs: alloc::vec::Vec<f64> =
            (0..keep).map(|k| 0.5 + 0.1 * k as f64).collect();
        cfg.sigma_w = datagen::symmetric_with_spectrum(&noise_eigs, &mut stream);
        let mut prior_eigs = alloc::vec![0.01f64; 2];
        prior_eigs.extend(alloc::vec![50.0f64; keep - 2]);
        cfg.sigma_y = datagen::symmetric_with_spectrum(&prior_eigs, &mut stream);
        cfg.trials = trials;
        cfg.n_list = n_list;
        cfg.validation_size = 20_000;
        cfg.bce_grid = (0..40).map(|k| 10.0 * k as f64 / 39.0).collect();
        cfg.ridge_grid = (0..40).map(|k| -0.012 + 0.014 * k as f64 / 39.0).collect();
        cfg
    }

    #[test]
    fn linear_bmse_matches_monte_carlo() {
        let cfg = small_config(1, alloc::vec![4]);
        let a = lmmse(&cfg.h, &cfg.sigma_w, &cfg.sigma_y).unwrap();
        let closed = linear_bmse(a.matrix(), &cfg.h, &cfg.sigma_w, &cfg.sigma_y);

        let prior_factor = psd_factor(&cfg.sigma_y).unwrap();
        let noise_factor = nalgebra::Cholesky::new(cfg.sigma_w.clone()).unwrap().l();
        let mut stream = rng::master(23);
        let val = ValidationMoments::collect(&cfg.h, &noise_factor, &prior_factor, 200_000, &mut stream);
        let mc = val.bmse(a.matrix());
        assert!((mc - closed).abs() / closed < 0.02, "{mc} vs {closed}");
    }

    #[test]
    fn large_n_converges_to_true_prior_lmmse() {
        let cfg = small_config(3, alloc::vec![10_000]);
        let oracle = {
            let a = lmmse(&cfg.h, &cfg.sigma_w, &cfg.sigma_y).unwrap();
            linear_bmse(a.matrix(), &cfg.h, &cfg.sigma_w, &cfg.sigma_y)
        };
        let out = regularization_experiment(&cfg, 31).unwrap();
        let cell = &out.cells[0];
        for m in [cell.emmse.mean, cell.ridge.mean, cell.bce.mean] {
            assert!((m - oracle).abs() / oracle < 0.02, "{m} vs oracle {oracle}");
        }
    }

    #[test]
    fn small_n_favors_the_bias_constraint() {
        let cfg = small_config(40, alloc::vec![3]);
        let out = regularization_experiment(&cfg, 37).unwrap();
        let cell = &out.cells[0];
        assert!(
            cell.bce.mean < cell.emmse.mean,
            "bce {} vs emmse {}",
            cell.bce.mean,
            cell.emmse.mean
        );
        // high-SNR prior: the selected ridge parameter is mostly negative
        assert!(cell.ridge_negative_fraction > 0.5, "{}", cell.ridge_negative_fraction);
        assert_eq!(out.skipped_ridge_points, 0);
    }

    #[test]
    fn deterministic_across_runs() {
        let cfg = small_config(4, alloc::vec![4]);
        let a = regularization_experiment(&cfg, 41).unwrap();
        let b = regularization_experiment(&cfg, 41).unwrap();
        assert_eq!(a.cells[0].emmse.mean.to_bits(), b.cells[0].emmse.mean.to_bits());
        assert_eq!(a.cells[0].bce.mean.to_bits(), b.cells[0].bce.mean.to_bits());
        assert_eq!(a.cells[0].ridge.mean.to_bits(), b.cells[0].ridge.mean.to_bits());
    }
}
