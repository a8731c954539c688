//! The gen / train / eval subcommands (the experiment drivers live in
//! `experiments`).

use bce_core::datagen::gen_dataset;
use bce_core::evaluation::{eval_point, Estimator};
use bce_core::linear_bce::{lbce_model_form, lmmse, wls};
use bce_core::neuralnet::{Activation, MlpSpec};
use bce_core::rng;
use bce_core::statmodels::{
    LinearGaussianModel, ObservationBatch, SnrMle, SnrModel, StatModel, StructuredCovModel,
};
use bce_core::training::{train_estimator, CovNetSpec, EstimatorArch, FeatureMap, TrainConfig};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::config::{MatrixSpec, ModelConfig, PriorConfig};
use crate::error::{CliError, Result};
use crate::formats::{
    fmt, read_checkpoint, write_checkpoint, write_dataset, CsvTable, DatasetHeader,
};

/// A model built into its concrete type (the dyn interface hides the
/// Fisher-information accessors the eval command needs).
pub enum BuiltModel {
    Linear(LinearGaussianModel),
    Snr(SnrModel),
    Cov(StructuredCovModel),
}

impl BuiltModel {
    pub fn build(cfg: &ModelConfig) -> Result<Self> {
        Ok(match cfg {
            ModelConfig::LinearGaussian { h, sigma_n } => {
                BuiltModel::Linear(LinearGaussianModel::new(h.build()?, sigma_n.build()?)?)
            }
            ModelConfig::Snr { p } => BuiltModel::Snr(SnrModel::new(*p)?),
            ModelConfig::StructuredCov { p_samples } => {
                BuiltModel::Cov(StructuredCovModel::new(*p_samples)?)
            }
        })
    }

    pub fn as_dyn(&self) -> &dyn StatModel {
        match self {
            BuiltModel::Linear(m) => m,
            BuiltModel::Snr(m) => m,
            BuiltModel::Cov(m) => m,
        }
    }
}

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenConfig {
    pub model: ModelConfig,
    pub prior: PriorConfig,
    pub records: usize,
    pub obs_per_record: usize,
    pub seed: u64,
    /// Output file name (inside the --out directory).
    pub output: String,
}

pub fn run_gen(cfg: &GenConfig, out_dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let model = BuiltModel::build(&cfg.model)?;
    let prior = cfg.prior.build()?;
    let ds = gen_dataset(
        &prior,
        model.as_dyn(),
        cfg.records,
        cfg.obs_per_record,
        cfg.seed,
    )?;
    let first = ds.observation(0, 0);
    let header = DatasetHeader {
        model: cfg.model.clone(),
        prior: cfg.prior.clone(),
        records: cfg.records,
        obs_per_record: cfg.obs_per_record,
        seed: cfg.seed,
        param_dim: ds.params(0).len(),
        obs_dim: first.dim(),
        obs_count: first.count(),
    };
    let path = out_dir.join(&cfg.output);
    write_dataset(&path, &header, &ds)?;
    Ok(vec![path])
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ArchConfig {
    Mlp {
        widths: Vec<usize>,
        activation: Activation,
        features: FeatureMap,
        #[serde(default)]
        output_clip: Option<(f64, f64)>,
    },
    CovNet { spec: CovNetSpec },
}

impl ArchConfig {
    pub fn build(&self) -> Result<EstimatorArch> {
        Ok(match self {
            ArchConfig::Mlp {
                widths,
                activation,
                features,
                output_clip,
            } => EstimatorArch::Mlp {
                spec: MlpSpec::uniform(widths.clone(), *activation)
                    ?,
                features: *features,
                output_clip: *output_clip,
            },
            ArchConfig::CovNet { spec } => EstimatorArch::CovNet(*spec),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainCmdConfig {
    pub model: ModelConfig,
    pub prior: PriorConfig,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    /// Checkpoint file name (inside --out).
    pub output: String,
    /// Loss-history CSV file name; omit to skip.
    #[serde(default)]
    pub loss_output: Option<String>,
}

pub fn run_train(cfg: &TrainCmdConfig, out_dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let model = BuiltModel::build(&cfg.model)?;
    let prior = cfg.prior.build()?;
    let arch = cfg.arch.build()?;
    let out = train_estimator(&arch, &cfg.train, &prior, model.as_dyn())?;

    let mut written = Vec::new();
    let ckpt = out_dir.join(&cfg.output);
    write_checkpoint(
        &ckpt,
        &out.estimator,
        cfg.train.seed,
        serde_json::to_value(&cfg.train).expect("config serializes"),
    )?;
    written.push(ckpt);

    if let Some(name) = &cfg.loss_output {
        let mut t = CsvTable::new(&["step", "loss"]);
        for (s, l) in out.loss_history.iter().enumerate() {
            t.push(vec![s.to_string(), fmt(*l)]);
        }
        let p = out_dir.join(name);
        t.write(&p)?;
        written.push(p);
    }
    Ok(written)
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EstimatorSource {
    /// Load a trained network checkpoint (path relative to the config's
    /// working directory).
    Checkpoint { path: String },
    Wls,
    Lmmse { sigma_y: MatrixSpec },
    Lbce { sigma_y: MatrixSpec, lambda: f64 },
    SnrMle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CrbConfig {
    None,
    /// Closed-form Fisher information (linear-Gaussian and structured
    /// covariance models).
    Analytic,
    /// Monte-Carlo Fisher information (SNR model).
    SnrMonteCarlo { reps: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalCmdConfig {
    pub model: ModelConfig,
    pub estimator: EstimatorSource,
    /// Parameter grid, one vector per point (for the SNR model each point is
    /// (h, sigma2)).
    pub grid: Vec<Vec<f64>>,
    pub reps: usize,
    pub crb: CrbConfig,
    pub seed: u64,
    pub output: String,
}

fn build_estimator(
    source: &EstimatorSource,
    model: &BuiltModel,
) -> Result<Box<dyn Estimator>> {
    match (source, model) {
        (EstimatorSource::Checkpoint { path }, _) => {
            let (_, est) = read_checkpoint(Path::new(path))?;
            Ok(Box::new(est))
        }
        (EstimatorSource::Wls, BuiltModel::Linear(m)) => {
            Ok(Box::new(wls(m.design(), m.noise_cov())?))
        }
        (EstimatorSource::Lmmse { sigma_y }, BuiltModel::Linear(m)) => Ok(Box::new(lmmse(
            m.design(),
            m.noise_cov(),
            &sigma_y.build()?,
        )?)),
        (EstimatorSource::Lbce { sigma_y, lambda }, BuiltModel::Linear(m)) => Ok(Box::new(
            lbce_model_form(m.design(), m.noise_cov(), &sigma_y.build()?, *lambda)?,
        )),
        (EstimatorSource::SnrMle, BuiltModel::Snr(m)) => Ok(Box::new(SnrMle::new(*m))),
        _ => Err(CliError::Config(
            "estimator kind does not match the model kind".into(),
        )),
    }
}

pub fn run_eval(cfg: &EvalCmdConfig, out_dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let model = BuiltModel::build(&cfg.model)?;
    let estimator = build_estimator(&cfg.estimator, &model)?;
    if cfg.grid.is_empty() {
        return Err(CliError::Config("evaluation grid is empty".into()));
    }

    let thetas: Vec<DVector<f64>> = cfg
        .grid
        .iter()
        .map(|v| DVector::from_column_slice(v))
        .collect();

    let mut crbs: Vec<Option<f64>> = Vec::with_capacity(thetas.len());
    for (i, theta) in thetas.iter().enumerate() {
        let crb = match (cfg.crb, &model) {
            (CrbConfig::None, _) => None,
            (CrbConfig::Analytic, BuiltModel::Linear(m)) => Some(m.fim().crb_trace()?),
            (CrbConfig::Analytic, BuiltModel::Cov(m)) => Some(m.fim(theta)?.crb_trace()?),
            (CrbConfig::Analytic, BuiltModel::Snr(_)) => {
                return Err(CliError::Config(
                    "the SNR model has no closed-form information; use snr-monte-carlo".into(),
                ))
            }
            (CrbConfig::SnrMonteCarlo { reps }, BuiltModel::Snr(m)) => {
                let mut stream = rng::substream(rng::derive_seed(cfg.seed, 0xcb + i as u64), 0);
                Some(m.monte_carlo_fim(theta[0], theta[1], reps, &mut stream)?.1)
            }
            (CrbConfig::SnrMonteCarlo { .. }, _) => {
                return Err(CliError::Config(
                    "snr-monte-carlo bound only applies to the SNR model".into(),
                ))
            }
        };
        crbs.push(crb);
    }

    let t_dim = model.as_dyn().target_dim();
    let mut header: Vec<String> = Vec::new();
    for k in 0..t_dim {
        header.push(format!("y{k}"));
    }
    for k in 0..t_dim {
        header.push(format!("bias{k}"));
    }
    for k in 0..t_dim {
        header.push(format!("bias{k}_se"));
    }
    header.extend(
        ["variance", "variance_se", "mse", "mse_se", "crb"]
            .iter()
            .map(|s| s.to_string()),
    );
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut table = CsvTable::new(&header_refs);

    for (i, theta) in thetas.iter().enumerate() {
        let rec = eval_point(
            estimator.as_ref(),
            model.as_dyn(),
            theta,
            crbs[i],
            cfg.reps,
            rng::derive_seed(cfg.seed, i as u64),
        )?;
        let mut row = Vec::with_capacity(header.len());
        row.extend(rec.target.iter().map(|v| fmt(*v)));
        row.extend(rec.bias.iter().map(|v| fmt(*v)));
        row.extend(rec.bias_se.iter().map(|v| fmt(*v)));
        row.push(fmt(rec.variance));
        row.push(fmt(rec.variance_se));
        row.push(fmt(rec.mse));
        row.push(fmt(rec.mse_se));
        row.push(rec.crb.map(fmt).unwrap_or_default());
        table.push(row);
    }

    let path = out_dir.join(&cfg.output);
    table.write(&path)?;
    Ok(vec![path])
}

/// Sanity helper shared by tests: evaluate a checkpointed estimator on one
/// observation.
pub fn apply_checkpoint(path: &Path, obs: &ObservationBatch) -> Result<DVector<f64>> {
    let (_, est) = read_checkpoint(path)?;
    Ok(est.estimate(obs))
}
