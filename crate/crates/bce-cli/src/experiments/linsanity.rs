//! Linear sanity check: single-layer networks trained on the linear-Gaussian
//! model must land on the corresponding closed forms — the LMMSE at
//! lambda = 0 and the bias-constrained solution at large lambda.

use bce_core::datagen::{self, FictitiousPrior};
use bce_core::linear_bce::{lbce_model_form, lmmse};
use bce_core::neuralnet::{Activation, MlpSpec};
use bce_core::rng;
use bce_core::statmodels::LinearGaussianModel;
use bce_core::training::{train_estimator, EstimatorArch, FeatureMap, TrainConfig, TrainedEstimator};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::Result;
use crate::formats::{fmt, CsvTable};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearSanityConfig {
    pub dim: usize,
    pub emmse: TrainConfig,
    pub bce: TrainConfig,
    /// Closed-form reference weight for the bce run.
    pub bce_lambda: f64,
    pub seed: u64,
}

#[derive(Debug)]
pub struct LinearSanityResult {
    pub emmse_rel_err: f64,
    pub bce_rel_err: f64,
    pub emmse_net: TrainedEstimator,
    pub bce_net: TrainedEstimator,
}

/// A well-conditioned testbed: the design has singular values in [1, 2]
/// and the noise spectrum sits in [0.2, 0.5], keeping the normal matrix
/// comfortably away from singular so the trained nets can hit the closed
/// forms at tight tolerances.
pub fn testbed(dim: usize, seed: u64) -> Result<LinearGaussianModel> {
    let mut stream = rng::master(rng::derive_seed(seed, 0x11b));
    let q1 = datagen::random_orthogonal(dim, &mut stream);
    let q2 = datagen::random_orthogonal(dim, &mut stream);
    let sv = DVector::from_iterator(
        dim,
        (0..dim).map(|k| 1.0 + k as f64 / (dim.max(2) - 1) as f64),
    );
    let h = &q1 * DMatrix::from_diagonal(&sv) * q2.transpose();
    let noise_eigs: Vec<f64> = (0..dim)
        .map(|k| 0.2 + 0.3 * k as f64 / (dim.max(2) - 1) as f64)
        .collect();
    let sigma_n = datagen::symmetric_with_spectrum(&noise_eigs, &mut stream);
    Ok(LinearGaussianModel::new(h, sigma_n)?)
}

pub fn run(cfg: &LinearSanityConfig) -> Result<LinearSanityResult> {
    let d = cfg.dim;
    let model = testbed(d, cfg.seed)?;
    let sigma_y = DMatrix::<f64>::identity(d, d);
    let prior = FictitiousPrior::gaussian(DVector::zeros(d), sigma_y.clone())
        ?;
    let arch = EstimatorArch::Mlp {
        spec: MlpSpec::uniform(vec![d, d], Activation::Tanh)?,
        features: FeatureMap::Identity,
        output_clip: None,
    };

    let emmse_out = train_estimator(&arch, &cfg.emmse, &prior, &model)?;
    let bce_out = train_estimator(&arch, &cfg.bce, &prior, &model)?;

    let a_lmmse = lmmse(model.design(), model.noise_cov(), &sigma_y)?;
    let a_bce = lbce_model_form(model.design(), model.noise_cov(), &sigma_y, cfg.bce_lambda)?;

    let rel = |est: &TrainedEstimator, reference: &DMatrix<f64>| -> f64 {
        let w = est.params().weight(0);
        (w - reference).norm() / reference.norm()
    };

    Ok(LinearSanityResult {
        emmse_rel_err: rel(&emmse_out.estimator, a_lmmse.matrix()),
        bce_rel_err: rel(&bce_out.estimator, a_bce.matrix()),
        emmse_net: emmse_out.estimator,
        bce_net: bce_out.estimator,
    })
}

pub fn write_artifacts(
    result: &LinearSanityResult,
    out_dir: &Path,
) -> Result<Vec<std::path::PathBuf>> {
    let mut t = CsvTable::new(&["net", "closed_form", "relative_frobenius_error"]);
    t.push(vec![
        "emmse".into(),
        "lmmse".into(),
        fmt(result.emmse_rel_err),
    ]);
    t.push(vec![
        "bce".into(),
        "lbce".into(),
        fmt(result.bce_rel_err),
    ]);
    let path = out_dir.join("linear_sanity.csv");
    t.write(&path)?;
    Ok(vec![path])
}
