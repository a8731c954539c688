//! Structured covariance experiment: refinement networks trained with and
//! without the bias penalty, scattered against the Cramér-Rao bound on the
//! training prior and on a shifted test prior.

use bce_core::datagen::FictitiousPrior;
use bce_core::evaluation::{crb_scatter, ScatterPoint};
use bce_core::statmodels::{StructuredCovModel, COV_PARAM_DIM};
use bce_core::training::{train_estimator, CovNetSpec, EstimatorArch, TrainConfig, TrainedEstimator};
use bce_core::rng;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::Result;
use crate::formats::{fmt, write_checkpoint, CsvTable};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovarianceExperimentConfig {
    /// I.i.d. vectors per observation.
    pub p_samples: usize,
    pub covnet: CovNetSpec,
    /// Upper bound of the shifted test prior U(0, shifted_upper)^9.
    pub shifted_upper: f64,
    /// Scatter points per prior.
    pub scatter_count: usize,
    /// Monte-Carlo reps per scatter point.
    pub scatter_reps: usize,
    pub emmse: TrainConfig,
    pub bce: TrainConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestPriorKind {
    Train,
    Shifted,
}

impl TestPriorKind {
    pub fn label(&self) -> &'static str {
        match self {
            TestPriorKind::Train => "train-prior",
            TestPriorKind::Shifted => "shifted-prior",
        }
    }
}

#[derive(Debug)]
pub struct CovarianceExperimentResult {
    pub emmse: TrainedEstimator,
    pub bce: TrainedEstimator,
    pub emmse_loss: Vec<f64>,
    pub bce_loss: Vec<f64>,
    /// (net label, prior kind, scatter).
    pub scatters: Vec<(String, TestPriorKind, Vec<ScatterPoint>)>,
}

impl CovarianceExperimentResult {
    /// Mean mse/crb over a scatter.
    pub fn mean_ratio(points: &[ScatterPoint]) -> f64 {
        points.iter().map(|p| p.mse / p.crb).sum::<f64>() / points.len() as f64
    }

    pub fn ratio(&self, net: &str, prior: TestPriorKind) -> f64 {
        self.scatters
            .iter()
            .find(|(n, p, _)| n == net && *p == prior)
            .map(|(_, _, pts)| Self::mean_ratio(pts))
            .expect("scatter present")
    }
}

pub fn run(cfg: &CovarianceExperimentConfig) -> Result<CovarianceExperimentResult> {
    let model = StructuredCovModel::new(cfg.p_samples)?;
    let train_prior = FictitiousPrior::uniform_box(
        DVector::zeros(COV_PARAM_DIM),
        DVector::from_element(COV_PARAM_DIM, 1.0),
    )?;
    let shifted_prior = FictitiousPrior::uniform_box(
        DVector::zeros(COV_PARAM_DIM),
        DVector::from_element(COV_PARAM_DIM, cfg.shifted_upper),
    )?;

    let arch = EstimatorArch::CovNet(cfg.covnet);
    let emmse_out = train_estimator(&arch, &cfg.emmse, &train_prior, &model)?;
    let bce_out = train_estimator(&arch, &cfg.bce, &train_prior, &model)?;

    let mut scatters = Vec::new();
    for (n_idx, (label, est)) in [
        ("emmse", &emmse_out.estimator),
        ("bce", &bce_out.estimator),
    ]
    .into_iter()
    .enumerate()
    {
        for (p_idx, (kind, prior)) in [
            (TestPriorKind::Train, &train_prior),
            (TestPriorKind::Shifted, &shifted_prior),
        ]
        .into_iter()
        .enumerate()
        {
            let seed = rng::derive_seed(cfg.seed, ((n_idx as u64) << 8) | p_idx as u64);
            let pts = crb_scatter(
                est,
                &model,
                prior,
                cfg.scatter_count,
                cfg.scatter_reps,
                seed,
            )?;
            scatters.push((label.to_string(), kind, pts));
        }
    }

    Ok(CovarianceExperimentResult {
        emmse: emmse_out.estimator,
        bce: bce_out.estimator,
        emmse_loss: emmse_out.loss_history,
        bce_loss: bce_out.loss_history,
        scatters,
    })
}

pub fn write_artifacts(
    cfg: &CovarianceExperimentConfig,
    result: &CovarianceExperimentResult,
    out_dir: &Path,
) -> Result<Vec<std::path::PathBuf>> {
    let mut written = Vec::new();

    for (net, prior, pts) in &result.scatters {
        let mut t = CsvTable::new(&["crb", "mse", "mse_over_crb"]);
        for p in pts {
            t.push(vec![fmt(p.crb), fmt(p.mse), fmt(p.mse / p.crb)]);
        }
        let path = out_dir.join(format!("cov_scatter_{}_{}.csv", net, prior.label()));
        t.write(&path)?;
        written.push(path);
    }

    for (name, losses) in [
        ("cov_loss_emmse.csv", &result.emmse_loss),
        ("cov_loss_bce.csv", &result.bce_loss),
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
        ("cov_emmse.ckpt", &result.emmse, &cfg.emmse),
        ("cov_bce.ckpt", &result.bce, &cfg.bce),
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
