//! End-to-end experiment drivers. Each module exposes a pure `run` that
//! returns the result struct and a `write_artifacts` that lays files into an
//! output directory; the CLI stitches them together with a summary JSON.

pub mod averaging;
pub mod covariance;
pub mod linreg;
pub mod linsanity;
pub mod snr;

use serde::{Deserialize, Serialize};

/// Top-level experiment config; the `experiment` tag selects the driver.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "kebab-case")]
pub enum ExperimentConfig {
    Snr(snr::SnrExperimentConfig),
    Covariance(covariance::CovarianceExperimentConfig),
    LinearReg(linreg::LinearRegConfig),
    Averaging(averaging::AveragingExperimentConfig),
    LinearSanity(linsanity::LinearSanityConfig),
}

impl ExperimentConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentConfig::Snr(_) => "snr",
            ExperimentConfig::Covariance(_) => "covariance",
            ExperimentConfig::LinearReg(_) => "linear-reg",
            ExperimentConfig::Averaging(_) => "averaging",
            ExperimentConfig::LinearSanity(_) => "linear-sanity",
        }
    }
}
