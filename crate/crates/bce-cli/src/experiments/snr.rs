//! SNR estimation experiment: grid MLE against two identically-shaped
//! networks trained with the plain MSE loss and with the bias-penalized
//! loss, evaluated on a fixed SNR grid with the Monte-Carlo Cramér-Rao
//! bound as reference.

use bce_core::datagen::FictitiousPrior;
use bce_core::evaluation::{eval_point, inverse_snr_mse, MetricsRecord};
use bce_core::neuralnet::{Activation, MlpSpec};
use bce_core::rng;
use bce_core::statmodels::{SnrMle, SnrModel, SNR_ESTIMATE_MAX, SNR_ESTIMATE_MIN};
use bce_core::training::{
    train_estimator, EstimatorArch, FeatureMap, TrainConfig, TrainedEstimator, SNR_FEATURE_DIM,
};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::Result;
use crate::formats::{fmt, write_checkpoint, CsvTable};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnrExperimentConfig {
    /// Symbols per observation.
    pub p: usize,
    /// Training prior: h uniform here ...
    pub h_range: (f64, f64),
    /// ... and the SNR uniform here.
    pub snr_range: (f64, f64),
    /// Signal amplitude used on the evaluation grid (every estimator in
    /// play is scale-invariant, so the choice only fixes a representative).
    pub eval_h: f64,
    pub snr_grid: Vec<f64>,
    /// Monte-Carlo reps per grid point.
    pub reps: usize,
    /// Symbol draws for the Monte-Carlo Fisher information.
    pub crb_reps: usize,
    /// Hidden width of the one-hidden-layer nets.
    pub hidden: usize,
    pub emmse: TrainConfig,
    pub bce: TrainConfig,
    /// Seed for evaluation streams (training seeds live in the sections).
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SnrEstimatorKind {
    Mle,
    Emmse,
    Bce,
}

impl SnrEstimatorKind {
    pub fn label(&self) -> &'static str {
        match self {
            SnrEstimatorKind::Mle => "mle",
            SnrEstimatorKind::Emmse => "emmse",
            SnrEstimatorKind::Bce => "bce",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SnrRow {
    pub estimator: SnrEstimatorKind,
    pub snr: f64,
    pub metrics: MetricsRecord,
    pub inv_mse: f64,
    pub inv_mse_se: f64,
}

#[derive(Debug)]
pub struct SnrExperimentResult {
    pub rows: Vec<SnrRow>,
    pub emmse: TrainedEstimator,
    pub bce: TrainedEstimator,
    pub emmse_loss: Vec<f64>,
    pub bce_loss: Vec<f64>,
    pub crbs: Vec<f64>,
}

fn net_arch(cfg: &SnrExperimentConfig) -> Result<EstimatorArch> {
    Ok(EstimatorArch::Mlp {
        spec: MlpSpec::uniform(vec![SNR_FEATURE_DIM, cfg.hidden, 1], Activation::Tanh)
            ?,
        features: FeatureMap::SnrMoments,
        output_clip: Some((SNR_ESTIMATE_MIN, SNR_ESTIMATE_MAX)),
    })
}

pub fn run(cfg: &SnrExperimentConfig) -> Result<SnrExperimentResult> {
    let model = SnrModel::new(cfg.p)?;
    let prior = FictitiousPrior::snr_composite(cfg.h_range, cfg.snr_range)?;
    let arch = net_arch(cfg)?;

    let emmse_out = train_estimator(&arch, &cfg.emmse, &prior, &model)?;
    let bce_out = train_estimator(&arch, &cfg.bce, &prior, &model)?;
    let mle = SnrMle::new(model);

    // grid points share the evaluation amplitude; sigma^2 = h^2 / y
    let thetas: Vec<DVector<f64>> = cfg
        .snr_grid
        .iter()
        .map(|&y| DVector::from_vec(vec![cfg.eval_h, cfg.eval_h * cfg.eval_h / y]))
        .collect();

    let mut crbs = Vec::with_capacity(thetas.len());
    for (i, theta) in thetas.iter().enumerate() {
        let mut stream = rng::substream(rng::derive_seed(cfg.seed, 0xc4b0 + i as u64), 0);
        let (_, crb_y) = model.monte_carlo_fim(theta[0], theta[1], cfg.crb_reps, &mut stream)?;
        crbs.push(crb_y);
    }

    let mut rows = Vec::new();
    let estimators: [(&dyn bce_core::evaluation::Estimator, SnrEstimatorKind); 3] = [
        (&mle, SnrEstimatorKind::Mle),
        (&emmse_out.estimator, SnrEstimatorKind::Emmse),
        (&bce_out.estimator, SnrEstimatorKind::Bce),
    ];
    for (e_idx, (est, kind)) in estimators.into_iter().enumerate() {
        for (i, theta) in thetas.iter().enumerate() {
            let seed = rng::derive_seed(cfg.seed, ((e_idx as u64 + 1) << 32) ^ i as u64);
            let metrics = eval_point(est, &model, theta, Some(crbs[i]), cfg.reps, seed)?;
            let inv = inverse_snr_mse(est, &model, theta, cfg.reps, seed)?;
            rows.push(SnrRow {
                estimator: kind,
                snr: cfg.snr_grid[i],
                metrics,
                inv_mse: inv.mean,
                inv_mse_se: inv.se,
            });
        }
    }

    Ok(SnrExperimentResult {
        rows,
        emmse: emmse_out.estimator,
        bce: bce_out.estimator,
        emmse_loss: emmse_out.loss_history,
        bce_loss: bce_out.loss_history,
        crbs,
    })
}

pub fn write_artifacts(
    cfg: &SnrExperimentConfig,
    result: &SnrExperimentResult,
    out_dir: &Path,
) -> Result<Vec<std::path::PathBuf>> {
    let mut written = Vec::new();

    let mut table = CsvTable::new(&[
        "estimator",
        "snr",
        "snr_db",
        "bias",
        "bias_se",
        "variance",
        "mse",
        "mse_se",
        "mse_over_y2",
        "crb",
        "mse_over_crb",
        "inv_snr_mse",
        "inv_snr_mse_se",
    ]);
    for row in &result.rows {
        let y = row.snr;
        let m = &row.metrics;
        table.push(vec![
            row.estimator.label().to_string(),
            fmt(y),
            fmt(10.0 * y.log10()),
            fmt(m.bias[0]),
            fmt(m.bias_se[0]),
            fmt(m.variance),
            fmt(m.mse),
            fmt(m.mse_se),
            fmt(m.mse / (y * y)),
            fmt(m.crb.unwrap_or(f64::NAN)),
            fmt(m.mse_over_crb().unwrap_or(f64::NAN)),
            fmt(row.inv_mse),
            fmt(row.inv_mse_se),
        ]);
    }
    let metrics_path = out_dir.join("snr_metrics.csv");
    table.write(&metrics_path)?;
    written.push(metrics_path);

    for (name, losses) in [
        ("snr_loss_emmse.csv", &result.emmse_loss),
        ("snr_loss_bce.csv", &result.bce_loss),
    ] {
        let mut t = CsvTable::new(&["step", "loss"]);
        for (s, l) in losses.iter().enumerate() {
            t.push(vec![s.to_string(), fmt(*l)]);
        }
        let p = out_dir.join(name);
        t.write(&p)?;
        written.push(p);
    }

    for (name, est, train) in [
        ("snr_emmse.ckpt", &result.emmse, &cfg.emmse),
        ("snr_bce.ckpt", &result.bce, &cfg.bce),
    ] {
        let p = out_dir.join(name);
        write_checkpoint(
            &p,
            est,
            train.seed,
            serde_json::to_value(train).expect("config serializes"),
        )?;
        written.push(p);
    }

    Ok(written)
}
