//! Command-line companion to `bce-core`: config parsing, binary dataset and
//! checkpoint formats, CSV output, and the end-to-end experiment drivers.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiments;
pub mod formats;

pub use error::{CliError, Result};

/// Embedded default configs, one per experiment; also checked in under
/// `configs/` for copying and editing.
pub mod defaults {
    pub const SNR: &str = include_str!("../configs/snr.json");
    pub const COVARIANCE: &str = include_str!("../configs/covariance.json");
    pub const LINEAR_REG: &str = include_str!("../configs/linear-reg.json");
    pub const AVERAGING: &str = include_str!("../configs/averaging.json");
    pub const LINEAR_SANITY: &str = include_str!("../configs/linear-sanity.json");

    pub fn for_experiment(name: &str) -> Option<&'static str> {
        match name {
            "snr" => Some(SNR),
            "covariance" => Some(COVARIANCE),
            "linear-reg" => Some(LINEAR_REG),
            "averaging" => Some(AVERAGING),
            "linear-sanity" => Some(LINEAR_SANITY),
            _ => None,
        }
    }
}
