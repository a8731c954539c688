//! Seeded Monte-Carlo measurement of estimator quality.
//!
//! All metrics are per-parameter (frequentist): for a fixed y the harness
//! draws observations, applies the estimator, and reports the empirical bias
//! vector, the variance (trace of the error covariance about the conditional
//! mean), and the MSE, each with standard errors. With these definitions
//! `mse = variance + ||bias||^2` holds exactly in every record.
//!
//! Reps are processed in fixed-size chunks, one rng substream per chunk, and
//! reduced in chunk order — the numbers do not depend on the thread count.

mod regularization;

pub use regularization::{
    linear_bmse, MeanSe, RegularizationCell, RegularizationConfig, RegularizationResult,
    regularization_experiment,
};

use alloc::vec::Vec;
use nalgebra::DVector;
#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::parallel;
use crate::rng;
use crate::statmodels::{ObservationBatch, ParamVector, StatModel, StructuredCovModel};

/// Anything that maps an observation to a parameter estimate.
///
/// `estimate_batch` exists so architectures with batched inference (the
/// networks) can amortize matrix products; the default just maps.
pub trait Estimator: Sync {
    fn estimate(&self, obs: &ObservationBatch) -> DVector<f64>;

    fn estimate_batch(&self, obs: &[ObservationBatch]) -> Vec<DVector<f64>> {
        obs.iter().map(|o| self.estimate(o)).collect()
    }
}

/// Monte-Carlo reps per rng substream; fixed so that results are identical
/// at any thread count.
const CHUNK: usize = 256;

/// Per-parameter Monte-Carlo metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    /// The estimand the metrics refer to.
    pub target: DVector<f64>,
    pub bias: DVector<f64>,
    pub bias_se: DVector<f64>,
    /// Trace of the error covariance about the mean estimate.
    pub variance: f64,
    pub variance_se: f64,
    pub mse: f64,
    pub mse_se: f64,
    pub crb: Option<f64>,
    pub reps: usize,
}

impl MetricsRecord {
    pub fn bias_norm(&self) -> f64 {
        self.bias.norm()
    }

    pub fn mse_over_crb(&self) -> Option<f64> {
        self.crb.map(|c| self.mse / c)
    }
}

/// Draws `reps` observations at `theta` and collects the estimates, chunked
/// and order-deterministic.
fn collect_estimates(
    estimator: &dyn Estimator,
    model: &dyn StatModel,
    theta: &ParamVector,
    reps: usize,
    seed: u64,
) -> Result<Vec<DVector<f64>>> {
    model.validate(theta)?;
    let n_chunks = reps.div_ceil(CHUNK);
    let chunks = parallel::map_indexed(n_chunks, |ci| -> Result<Vec<DVector<f64>>> {
        let mut stream = rng::substream(seed, ci as u64);
        let lo = ci * CHUNK;
        let hi = (lo + CHUNK).min(reps);
        let mut obs = Vec::with_capacity(hi - lo);
        for _ in lo..hi {
            obs.push(model.sample(theta, &mut stream)?);
        }
        Ok(estimator.estimate_batch(&obs))
    });
    let mut estimates = Vec::with_capacity(reps);
    for c in chunks {
        estimates.extend(c?);
    }
    Ok(estimates)
}

/// Monte-Carlo bias/variance/MSE of an estimator at one parameter value.
///
/// `crb` is attached to the record as-is (callers compute it from the model
/// that owns the Fisher information).
pub fn eval_point(
    estimator: &dyn Estimator,
    model: &dyn StatModel,
    theta: &ParamVector,
    crb: Option<f64>,
    reps: usize,
    seed: u64,
) -> Result<MetricsRecord> {
    if reps < 2 {
        return Err(Error::InvalidConfig("eval_point requires reps >= 2"));
    }
    let target = model.target(theta);
    let estimates = collect_estimates(estimator, model, theta, reps, seed)?;
    let dim = target.len();
    for e in &estimates {
        if e.len() != dim {
            return Err(Error::DimensionMismatch {
                context: "estimate vs target dimension",
                expected: dim,
                got: e.len(),
            });
        }
    }
    let rf = reps as f64;

    let mut mean = DVector::<f64>::zeros(dim);
    for e in &estimates {
        mean += e;
    }
    mean /= rf;

    let mut sq_err_sum = 0.0;
    let mut sq_err_sumsq = 0.0;
    let mut var_sum = 0.0;
    let mut var_sumsq = 0.0;
    let mut comp_sumsq = DVector::<f64>::zeros(dim);
    for e in &estimates {
        let se = (e - &target).norm_squared();
        sq_err_sum += se;
        sq_err_sumsq += se * se;
        let sv = (e - &mean).norm_squared();
        var_sum += sv;
        var_sumsq += sv * sv;
        for k in 0..dim {
            let d = e[k] - mean[k];
            comp_sumsq[k] += d * d;
        }
    }
    let mse = sq_err_sum / rf;
    let mse_se = ((sq_err_sumsq / rf - mse * mse).max(0.0) / rf).sqrt();
    let variance = var_sum / rf;
    let variance_se = ((var_sumsq / rf - variance * variance).max(0.0) / rf).sqrt();
    let bias_se = DVector::from_iterator(dim, (0..dim).map(|k| (comp_sumsq[k] / rf / rf).sqrt()));

    Ok(MetricsRecord {
        bias: &mean - &target,
        target,
        bias_se,
        variance,
        variance_se,
        mse,
        mse_se,
        crb,
        reps,
    })
}

/// [`eval_point`] over a parameter grid, preserving grid order.
///
/// `crbs`, when given, must be parallel to the grid.
pub fn eval_sweep(
    estimator: &dyn Estimator,
    model: &dyn StatModel,
    grid: &[ParamVector],
    crbs: Option<&[f64]>,
    reps: usize,
    seed: u64,
) -> Result<Vec<MetricsRecord>> {
    if let Some(c) = crbs {
        if c.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                context: "crbs vs grid",
                expected: grid.len(),
                got: c.len(),
            });
        }
    }
    grid.iter()
        .enumerate()
        .map(|(i, theta)| {
            eval_point(
                estimator,
                model,
                theta,
                crbs.map(|c| c[i]),
                reps,
                rng::derive_seed(seed, i as u64),
            )
        })
        .collect()
}

/// Monte-Carlo mean of (1/yhat - 1/y)^2 with its standard error.
///
/// Finite as long as the estimator keeps its output away from zero (the SNR
/// estimators clip at [`crate::statmodels::SNR_ESTIMATE_MIN`]).
pub fn inverse_snr_mse(
    estimator: &dyn Estimator,
    model: &dyn StatModel,
    theta: &ParamVector,
    reps: usize,
    seed: u64,
) -> Result<MeanSe> {
    if reps < 2 {
        return Err(Error::InvalidConfig("inverse_snr_mse requires reps >= 2"));
    }
    let target = model.target(theta);
    if target.len() != 1 {
        return Err(Error::InvalidConfig("inverse-SNR metric needs a scalar target"));
    }
    let inv_y = 1.0 / target[0];
    let estimates = collect_estimates(estimator, model, theta, reps, seed)?;
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for e in &estimates {
        let v = (1.0 / e[0] - inv_y).powi(2);
        sum += v;
        sumsq += v * v;
    }
    let rf = reps as f64;
    let mean = sum / rf;
    Ok(MeanSe {
        mean,
        se: ((sumsq / rf - mean * mean).max(0.0) / rf).sqrt(),
    })
}

/// One point of a CRB-ordered scatter comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterPoint {
    pub crb: f64,
    pub mse: f64,
    pub target: ParamVector,
}

/// Draws `count` test parameters from `test_prior` (which may differ from the
/// training prior), computes the analytic CRB and the Monte-Carlo MSE per
/// point, and returns the pairs sorted by CRB.
pub fn crb_scatter(
    estimator: &dyn Estimator,
    model: &StructuredCovModel,
    test_prior: &crate::datagen::FictitiousPrior,
    count: usize,
    reps: usize,
    seed: u64,
) -> Result<Vec<ScatterPoint>> {
    if count == 0 {
        return Err(Error::InvalidConfig("crb_scatter requires count >= 1"));
    }
    let mut stream = rng::substream(rng::derive_seed(seed, 0xd7a9), 0);
    let thetas = test_prior.sample(count, &mut stream)?;
    let results = parallel::map_indexed(count, |i| -> Result<ScatterPoint> {
        let theta = &thetas[i];
        let crb = model.fim(theta)?.crb_trace()?;
        let rec = eval_point(
            estimator,
            model,
            theta,
            Some(crb),
            reps,
            rng::derive_seed(seed, 1 + i as u64),
        )?;
        Ok(ScatterPoint {
            crb,
            mse: rec.mse,
            target: theta.clone(),
        })
    });
    let mut points = results.into_iter().collect::<Result<Vec<_>>>()?;
    points.sort_by(|a, b| a.crb.total_cmp(&b.crb));
    Ok(points)
}

/// One row of an averaging curve: the estimator applied to `m_t` i.i.d.
/// observations of the same parameter, outputs averaged.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragingPoint {
    pub m_t: usize,
    pub bias: DVector<f64>,
    pub bias_se: DVector<f64>,
    pub variance: f64,
    pub mse: f64,
    pub mse_se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AveragingCurve {
    pub points: Vec<AveragingPoint>,
}

impl AveragingCurve {
    /// Least-squares slope of log variance against log m_t.
    pub fn log_variance_slope(&self) -> f64 {
        let n = self.points.len() as f64;
        let xs: Vec<f64> = self.points.iter().map(|p| (p.m_t as f64).ln()).collect();
        let ys: Vec<f64> = self.points.iter().map(|p| p.variance.ln()).collect();
        let xm = xs.iter().sum::<f64>() / n;
        let ym = ys.iter().sum::<f64>() / n;
        let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
        let den: f64 = xs.iter().map(|x| (x - xm) * (x - xm)).sum();
        num / den
    }
}

/// Evaluates the averaged (fusion) estimator for each m_t in `m_list`.
pub fn averaging_eval(
    estimator: &dyn Estimator,
    model: &dyn StatModel,
    theta: &ParamVector,
    m_list: &[usize],
    reps: usize,
    seed: u64,
) -> Result<AveragingCurve> {
    if m_list.is_empty() || m_list.windows(2).any(|w| w[0] >= w[1]) || m_list[0] == 0 {
        return Err(Error::InvalidConfig("m_list must be strictly increasing and positive"));
    }
    model.validate(theta)?;
    let target = model.target(theta);
    let dim = target.len();

    let mut points = Vec::with_capacity(m_list.len());
    for (mi, &m_t) in m_list.iter().enumerate() {
        let point_seed = rng::derive_seed(seed, mi as u64);
        let n_chunks = reps.div_ceil(CHUNK);
        let chunks = parallel::map_indexed(n_chunks, |ci| -> Result<Vec<DVector<f64>>> {
            let mut stream = rng::substream(point_seed, ci as u64);
            let lo = ci * CHUNK;
            let hi = (lo + CHUNK).min(reps);
            let mut obs = Vec::with_capacity((hi - lo) * m_t);
            for _ in lo..hi {
                for _ in 0..m_t {
                    obs.push(model.sample(theta, &mut stream)?);
                }
            }
            let locals = estimator.estimate_batch(&obs);
            // fuse: average each consecutive block of m_t local estimates
            let mut fused = Vec::with_capacity(hi - lo);
            for r in 0..(hi - lo) {
                let mut acc = DVector::<f64>::zeros(dim);
                for j in 0..m_t {
                    acc += &locals[r * m_t + j];
                }
                fused.push(acc / m_t as f64);
            }
            Ok(fused)
        });
        let mut fused = Vec::with_capacity(reps);
        for c in chunks {
            fused.extend(c?);
        }

        let rf = reps as f64;
        let mut mean = DVector::<f64>::zeros(dim);
        for e in &fused {
            mean += e;
        }
        mean /= rf;
        let mut var_sum = 0.0;
        let mut sq_sum = 0.0;
        let mut sq_sumsq = 0.0;
        let mut comp_sumsq = DVector::<f64>::zeros(dim);
        for e in &fused {
            var_sum += (e - &mean).norm_squared();
            let se = (e - &target).norm_squared();
            sq_sum += se;
            sq_sumsq += se * se;
            for k in 0..dim {
                let d = e[k] - mean[k];
                comp_sumsq[k] += d * d;
            }
        }
        let mse = sq_sum / rf;
        points.push(AveragingPoint {
            m_t,
            bias: &mean - &target,
            bias_se: DVector::from_iterator(
                dim,
                (0..dim).map(|k| (comp_sumsq[k] / rf / rf).sqrt()),
            ),
            variance: var_sum / rf,
            mse,
            mse_se: ((sq_sumsq / rf - mse * mse).max(0.0) / rf).sqrt(),
        });
    }
    Ok(AveragingCurve { points })
}
