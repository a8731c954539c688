//! Averaging (fusion) experiment: a bias-constrained network applied to M_t
//! independent observations of the same parameter, outputs averaged. The
//! variance of the fused estimate must fall like 1/M_t; a deliberately
//! offset copy of the estimator shows the squared-bias floor instead.

use bce_core::datagen::FictitiousPrior;
use bce_core::evaluation::{averaging_eval, AveragingCurve, Estimator};
use bce_core::neuralnet::{Activation, MlpSpec};
use bce_core::statmodels::{LinearGaussianModel, ObservationBatch};
use bce_core::training::{train_estimator, EstimatorArch, FeatureMap, TrainConfig, TrainedEstimator};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::Result;
use crate::formats::{fmt, write_checkpoint, CsvTable};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AveragingExperimentConfig {
    /// Parameter/observation dimension of the linear-Gaussian testbed.
    pub dim: usize,
    /// Noise scale: Sigma_n = noise_scale * I.
    pub noise_scale: f64,
    /// Parameter value at which the curves are measured.
    pub eval_point: Vec<f64>,
    pub m_list: Vec<usize>,
    pub reps: usize,
    /// Offset added to the first coordinate for the biased control.
    pub bias_offset: f64,
    pub train: TrainConfig,
    pub seed: u64,
}

/// Wraps an estimator with a constant offset on coordinate 0.
struct OffsetEstimator<'a> {
    inner: &'a dyn Estimator,
    offset: f64,
}

impl Estimator for OffsetEstimator<'_> {
    fn estimate(&self, obs: &ObservationBatch) -> DVector<f64> {
        let mut y = self.inner.estimate(obs);
        y[0] += self.offset;
        y
    }

    fn estimate_batch(&self, obs: &[ObservationBatch]) -> Vec<DVector<f64>> {
        let mut out = self.inner.estimate_batch(obs);
        for y in &mut out {
            y[0] += self.offset;
        }
        out
    }
}

#[derive(Debug)]
pub struct AveragingExperimentResult {
    pub estimator: TrainedEstimator,
    pub unbiased: AveragingCurve,
    pub biased_control: AveragingCurve,
}

impl AveragingExperimentResult {
    pub fn variance_slope(&self) -> f64 {
        self.unbiased.log_variance_slope()
    }

    pub fn control_plateau_mse(&self) -> f64 {
        self.biased_control.points.last().expect("nonempty").mse
    }
}

pub fn run(cfg: &AveragingExperimentConfig) -> Result<AveragingExperimentResult> {
    let d = cfg.dim;
    let model = LinearGaussianModel::new(
        DMatrix::<f64>::identity(d, d),
        DMatrix::<f64>::identity(d, d) * cfg.noise_scale,
    )?;
    let prior = FictitiousPrior::gaussian(DVector::zeros(d), DMatrix::identity(d, d))
        ?;
    let arch = EstimatorArch::Mlp {
        spec: MlpSpec::uniform(vec![d, d], Activation::Tanh)?,
        features: FeatureMap::Identity,
        output_clip: None,
    };
    let out = train_estimator(&arch, &cfg.train, &prior, &model)?;

    let theta = DVector::from_column_slice(&cfg.eval_point);
    let unbiased = averaging_eval(
        &out.estimator,
        &model,
        &theta,
        &cfg.m_list,
        cfg.reps,
        bce_core::rng::derive_seed(cfg.seed, 1),
    )?;
    let control = OffsetEstimator {
        inner: &out.estimator,
        offset: cfg.bias_offset,
    };
    let biased_control = averaging_eval(
        &control,
        &model,
        &theta,
        &cfg.m_list,
        cfg.reps,
        bce_core::rng::derive_seed(cfg.seed, 2),
    )?;

    Ok(AveragingExperimentResult {
        estimator: out.estimator,
        unbiased,
        biased_control,
    })
}

pub fn write_artifacts(
    cfg: &AveragingExperimentConfig,
    result: &AveragingExperimentResult,
    out_dir: &Path,
) -> Result<Vec<std::path::PathBuf>> {
    let mut t = CsvTable::new(&["estimator", "m_t", "bias_norm", "variance", "mse", "mse_se"]);
    for (label, curve) in [
        ("bce", &result.unbiased),
        ("biased-control", &result.biased_control),
    ] {
        for p in &curve.points {
            t.push(vec![
                label.to_string(),
                p.m_t.to_string(),
                fmt(p.bias.norm()),
                fmt(p.variance),
                fmt(p.mse),
                fmt(p.mse_se),
            ]);
        }
    }
    let path = out_dir.join("averaging.csv");
    t.write(&path)?;

    let ckpt = out_dir.join("averaging_bce.ckpt");
    write_checkpoint(
        &ckpt,
        &result.estimator,
        cfg.train.seed,
        serde_json::to_value(&cfg.train).expect("config serializes"),
    )?;
    Ok(vec![path, ckpt])
}
