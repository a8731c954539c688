//! Experiment-specific training loops.
//!
//! [`train_estimator`] runs Adam on the grouped bias-regularized loss for
//! one of two estimator families:
//!
//! - a plain MLP over a feature map of the observation (the SNR and linear
//!   problems), or
//! - the iterative covariance refinement network ([`CovNetSpec`]).
//!
//! Batches are either freshly generated per step (each step consumes its own
//! substream, so the data really is independent across batches and the run
//! is reproducible) or drawn from a fixed pre-generated dataset.

mod covnet;

pub use covnet::{
    covnet_backward_batch, covnet_forward, covnet_forward_batch, covnet_forward_batch_tape,
    CovNetSpec, CovNetTape,
};

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::Rng;

use crate::datagen::{gen_batch, gen_dataset, DatasetNM, FictitiousPrior};
use crate::error::{Error, Result};
use crate::evaluation::Estimator;
use crate::neuralnet::{
    backward_batch, bce_loss, forward_batch, forward_batch_tape, AdamHyper, AdamState,
    MlpParams, MlpSpec, MseTerm, Schedule,
};
use crate::rng;
use crate::statmodels::{ObservationBatch, ParamVector, StatModel};

/// Fixed transforms applied to an observation before the network sees it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum FeatureMap {
    /// Flatten the observation (column-major).
    Identity,
    /// The six scale-invariant SNR moment features of [`snr_features`].
    SnrMoments,
}

impl FeatureMap {
    pub fn apply(&self, obs: &ObservationBatch) -> Result<DVector<f64>> {
        match self {
            FeatureMap::Identity => Ok(obs.flatten()),
            FeatureMap::SnrMoments => snr_features(obs),
        }
    }

    pub fn output_dim(&self, obs: &ObservationBatch) -> usize {
        match self {
            FeatureMap::Identity => obs.dim() * obs.count(),
            FeatureMap::SnrMoments => SNR_FEATURE_DIM,
        }
    }
}

pub const SNR_FEATURE_DIM: usize = 6;

/// Scale-invariant moment features for the SNR problem.
///
/// The observation is normalized by its root second moment; with
/// m_k = (1/p) sum_l u_l^k of the normalized values u, the features are
/// (m4, m6, m4^2, m6^(2/3), m4/m6^(2/3), log m4). Pure noise drives
/// (m4, m6) toward the Gaussian values (3, 15); noiseless binary symbols
/// toward (1, 1). By Jensen m4 >= 1, so the logarithm is safe.
pub fn snr_features(x: &ObservationBatch) -> Result<DVector<f64>> {
    let values = x.values();
    let p = values.len();
    if p < 2 {
        return Err(Error::InvalidConfig("snr_features requires p >= 2"));
    }
    let m2 = values.iter().map(|v| v * v).sum::<f64>() / p as f64;
    if m2 <= 0.0 {
        return Err(Error::DegenerateInput("zero second moment"));
    }
    let (mut m4, mut m6) = (0.0, 0.0);
    for &v in values {
        let u2 = v * v / m2;
        m4 += u2 * u2;
        m6 += u2 * u2 * u2;
    }
    m4 /= p as f64;
    m6 /= p as f64;
    let m6_23 = m6.powf(2.0 / 3.0);
    Ok(DVector::from_vec(alloc::vec![
        m4,
        m6,
        m4 * m4,
        m6_23,
        m4 / m6_23,
        m4.ln()
    ]))
}

/// Where training batches come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "mode", rename_all = "kebab-case"))]
pub enum DataMode {
    /// A new batch from the prior/model at every step.
    FreshPerBatch,
    /// One dataset of `records` x `obs_per_record` generated up front;
    /// batches subsample it with replacement.
    FixedDataset { records: usize, obs_per_record: usize },
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    /// Bias-penalty weight.
    pub lambda: f64,
    /// Groups per batch (distinct parameter draws).
    pub batch_groups: usize,
    /// Observations per group.
    pub group_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub adam: AdamHyper,
    pub schedule: Schedule,
    pub seed: u64,
    pub data_mode: DataMode,
    pub mse_term: MseTerm,
    /// Every this many steps the windowed mean loss is appended to the
    /// metric history driving plateau schedules.
    pub metric_window: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_groups == 0 || self.group_size == 0 {
            return Err(Error::InvalidConfig("batch sizes must be positive"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig("lambda must be finite and >= 0"));
        }
        if self.learning_rate <= 0.0 || self.learning_rate.is_nan() {
            return Err(Error::InvalidConfig("learning rate must be positive"));
        }
        if self.metric_window == 0 {
            return Err(Error::InvalidConfig("metric window must be positive"));
        }
        if let DataMode::FixedDataset {
            records,
            obs_per_record,
        } = self.data_mode
        {
            if records == 0 || obs_per_record == 0 {
                return Err(Error::InvalidConfig("fixed dataset dimensions must be positive"));
            }
        }
        Ok(())
    }
}

/// What to train.
#[derive(Debug, Clone, PartialEq)]
pub enum EstimatorArch {
    Mlp {
        spec: MlpSpec,
        features: FeatureMap,
        /// Optional clamp on every output coordinate.
        output_clip: Option<(f64, f64)>,
    },
    CovNet(CovNetSpec),
}

/// A trained estimator: frozen parameters plus whatever fixed transform the
/// architecture needs at inference time.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedEstimator {
    Mlp {
        params: MlpParams,
        features: FeatureMap,
        output_clip: Option<(f64, f64)>,
    },
    CovNet {
        spec: CovNetSpec,
        params: MlpParams,
    },
}

impl TrainedEstimator {
    pub fn params(&self) -> &MlpParams {
        match self {
            TrainedEstimator::Mlp { params, .. } => params,
            TrainedEstimator::CovNet { params, .. } => params,
        }
    }
}

impl Estimator for TrainedEstimator {
    fn estimate(&self, obs: &ObservationBatch) -> DVector<f64> {
        match self {
            TrainedEstimator::Mlp {
                params,
                features,
                output_clip,
            } => {
                let input = features.apply(obs).expect("feature map failed");
                let mut y = crate::neuralnet::forward(params, &input).expect("forward failed");
                if let Some((lo, hi)) = output_clip {
                    y.apply(|v| *v = v.clamp(*lo, *hi));
                }
                y
            }
            TrainedEstimator::CovNet { spec, params } => {
                covnet_forward(spec, params, &obs.sample_covariance()).expect("covnet failed")
            }
        }
    }

    fn estimate_batch(&self, obs: &[ObservationBatch]) -> Vec<DVector<f64>> {
        match self {
            TrainedEstimator::Mlp {
                params,
                features,
                output_clip,
            } => {
                if obs.is_empty() {
                    return Vec::new();
                }
                let in_dim = features.output_dim(&obs[0]);
                let mut inputs = DMatrix::<f64>::zeros(in_dim, obs.len());
                for (j, o) in obs.iter().enumerate() {
                    inputs.set_column(j, &features.apply(o).expect("feature map failed"));
                }
                let mut out = forward_batch(params, &inputs).expect("forward failed");
                if let Some((lo, hi)) = output_clip {
                    out.apply(|v| *v = v.clamp(*lo, *hi));
                }
                out.column_iter().map(|c| c.into_owned()).collect()
            }
            TrainedEstimator::CovNet { spec, params } => {
                let covs: Vec<DMatrix<f64>> =
                    obs.iter().map(|o| o.sample_covariance()).collect();
                let out = covnet_forward_batch(spec, params, &covs).expect("covnet failed");
                out.column_iter().map(|c| c.into_owned()).collect()
            }
        }
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub estimator: TrainedEstimator,
    /// Per-step training loss.
    pub loss_history: Vec<f64>,
}

/// Grouped inputs of one batch, in the representation each family consumes.
enum BatchInputs {
    Features(DMatrix<f64>),
    Covariances(Vec<DMatrix<f64>>),
}

/// Trains an estimator with the grouped bias-regularized loss.
pub fn train_estimator(
    arch: &EstimatorArch,
    cfg: &TrainConfig,
    prior: &FictitiousPrior,
    model: &dyn StatModel,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (mlp_spec, features) = match arch {
        EstimatorArch::Mlp { spec, features, .. } => (spec.clone(), Some(*features)),
        EstimatorArch::CovNet(cov) => (cov.mlp_spec()?, None),
    };
    if let EstimatorArch::Mlp { spec, .. } = arch {
        if spec.output_dim() != model.target_dim() {
            return Err(Error::DimensionMismatch {
                context: "network output vs target",
                expected: model.target_dim(),
                got: spec.output_dim(),
            });
        }
    }

    let mut params = MlpParams::init(mlp_spec, rng::derive_seed(cfg.seed, 0x1217));
    if features == Some(FeatureMap::SnrMoments) {
        // the moment features have very unequal scales which saturate the
        // first tanh layer at init; whiten the first layer on a pilot batch
        standardize_first_layer(&mut params, prior, model, FeatureMap::SnrMoments, cfg.seed)?;
    }
    let mut adam = AdamState::new(&params, cfg.adam);
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut metric_history: Vec<f64> = Vec::new();
    let mut window_acc = 0.0;

    let fixed = match cfg.data_mode {
        DataMode::FreshPerBatch => None,
        DataMode::FixedDataset {
            records,
            obs_per_record,
        } => Some(gen_dataset(
            prior,
            model,
            records,
            obs_per_record,
            rng::derive_seed(cfg.seed, 0x5eed),
        )?),
    };

    for step in 0..cfg.steps {
        let (inputs, targets) = make_batch(cfg, prior, model, features, fixed.as_ref(), step)?;
        let lr = cfg
            .schedule
            .lr_at(cfg.learning_rate, step, &metric_history);

        let (loss, grads) = match (&inputs, arch) {
            (BatchInputs::Features(x), _) => {
                let (outputs, tape) = forward_batch_tape(&params, x)?;
                let (loss, d_out) =
                    bce_loss(&outputs, &targets, cfg.group_size, cfg.lambda, cfg.mse_term)?;
                let (grads, _) = backward_batch(&params, &tape, &d_out);
                (loss, grads)
            }
            (BatchInputs::Covariances(covs), EstimatorArch::CovNet(cov_spec)) => {
                let (outputs, tape) = covnet_forward_batch_tape(cov_spec, &params, covs)?;
                let (loss, d_out) =
                    bce_loss(&outputs, &targets, cfg.group_size, cfg.lambda, cfg.mse_term)?;
                let grads = covnet_backward_batch(cov_spec, &params, &tape, &d_out);
                (loss, grads)
            }
            _ => unreachable!("batch representation matches the architecture"),
        };

        if !loss.is_finite() {
            return Err(Error::Diverged { step });
        }
        adam.step(&mut params, &grads, lr);
        losses.push(loss);

        window_acc += loss;
        if (step + 1) % cfg.metric_window == 0 {
            metric_history.push(window_acc / cfg.metric_window as f64);
            window_acc = 0.0;
        }
    }

    let estimator = match arch {
        EstimatorArch::Mlp {
            features,
            output_clip,
            ..
        } => TrainedEstimator::Mlp {
            params,
            features: *features,
            output_clip: *output_clip,
        },
        EstimatorArch::CovNet(spec) => TrainedEstimator::CovNet {
            spec: *spec,
            params,
        },
    };
    Ok(TrainOutcome {
        estimator,
        loss_history: losses,
    })
}

/// Rescales layer 0 so that the effective input at init is the z-scored
/// feature vector: W[:,k] /= sigma_k and b -= W mu. Training then adapts the
/// weights freely; inference still consumes raw features.
fn standardize_first_layer(
    params: &mut MlpParams,
    prior: &FictitiousPrior,
    model: &dyn StatModel,
    features: FeatureMap,
    seed: u64,
) -> Result<()> {
    const PILOT: usize = 512;
    let (_, obs) = gen_batch(prior, model, PILOT, 1, rng::derive_seed(seed, 0x9101), 0)?;
    let dim = features.output_dim(&obs[0][0]);
    let mut mean = DVector::<f64>::zeros(dim);
    let mut sq = DVector::<f64>::zeros(dim);
    for group in &obs {
        let f = features.apply(&group[0])?;
        mean += &f;
        sq += f.component_mul(&f);
    }
    mean /= PILOT as f64;
    let std = DVector::from_iterator(
        dim,
        (0..dim).map(|k| (sq[k] / PILOT as f64 - mean[k] * mean[k]).max(1e-12).sqrt()),
    );
    for k in 0..dim {
        let mut col = params.weight_mut(0).column_mut(k);
        col /= std[k];
    }
    let shift = params.weight(0) * &mean;
    *params.bias_mut(0) -= shift;
    Ok(())
}

fn make_batch(
    cfg: &TrainConfig,
    prior: &FictitiousPrior,
    model: &dyn StatModel,
    features: Option<FeatureMap>,
    fixed: Option<&DatasetNM>,
    step: usize,
) -> Result<(BatchInputs, DMatrix<f64>)> {
    let n = cfg.batch_groups;
    let m = cfg.group_size;
    let (thetas, obs): (Vec<ParamVector>, Vec<Vec<ObservationBatch>>) = match fixed {
        None => gen_batch(prior, model, n, m, rng::derive_seed(cfg.seed, 0xba7c), step as u64)?,
        Some(ds) => {
            let mut stream =
                rng::substream(rng::derive_seed(cfg.seed, 0xf1f0), step as u64);
            let mut thetas = Vec::with_capacity(n);
            let mut groups = Vec::with_capacity(n);
            for _ in 0..n {
                let i = stream.random_range(0..ds.records());
                thetas.push(ds.params(i).clone());
                let picks = (0..m)
                    .map(|_| {
                        ds.observation(i, stream.random_range(0..ds.obs_per_record()))
                            .clone()
                    })
                    .collect();
                groups.push(picks);
            }
            (thetas, groups)
        }
    };

    let mut targets = DMatrix::<f64>::zeros(model.target_dim(), n);
    for (i, theta) in thetas.iter().enumerate() {
        targets.set_column(i, &model.target(theta));
    }

    let inputs = match features {
        Some(fm) => {
            let in_dim = fm.output_dim(&obs[0][0]);
            let mut x = DMatrix::<f64>::zeros(in_dim, n * m);
            for (i, group) in obs.iter().enumerate() {
                for (j, o) in group.iter().enumerate() {
                    x.set_column(i * m + j, &fm.apply(o)?);
                }
            }
            BatchInputs::Features(x)
        }
        None => {
            let mut covs = Vec::with_capacity(n * m);
            for group in &obs {
                for o in group {
                    covs.push(o.sample_covariance());
                }
            }
            BatchInputs::Covariances(covs)
        }
    };
    Ok((inputs, targets))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear_bce;
    use crate::neuralnet::Activation;
    use crate::rng as rngmod;
    use crate::statmodels::{LinearGaussianModel, SnrModel};
    use alloc::vec;

    #[test]
    fn features_are_scale_invariant() {
        let m = SnrModel::new(32).unwrap();
        let mut r = rngmod::master(1);
        let x = m.sample_symbols(2.0, 1.0, &mut r).unwrap();
        let f1 = snr_features(&x).unwrap();
        let scaled = ObservationBatch::new(x.samples() * 7.3).unwrap();
        let f2 = snr_features(&scaled).unwrap();
        assert!((f1 - f2).amax() < 1e-12);
    }

    #[test]
    fn features_of_pure_noise_hit_gaussian_moments() {
        let m = SnrModel::new(1_000_000).unwrap();
        let mut r = rngmod::master(2);
        // h tiny relative to the noise: effectively pure Gaussian samples
        let x = m.sample_symbols(1e-6, 1.0, &mut r).unwrap();
        let f = snr_features(&x).unwrap();
        assert!((f[0] - 3.0).abs() / 3.0 < 0.01, "m4 = {}", f[0]);
        assert!((f[1] - 15.0).abs() / 15.0 < 0.015, "m6 = {}", f[1]);
    }

    #[test]
    fn features_of_noiseless_symbols_are_unit_moments() {
        let vals: Vec<f64> = (0..64).map(|i| if i % 2 == 0 { 2.5 } else { -2.5 }).collect();
        let x = ObservationBatch::new(DMatrix::from_row_slice(1, 64, &vals)).unwrap();
        let f = snr_features(&x).unwrap();
        assert!((f[0] - 1.0).abs() < 1e-12);
        assert!((f[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn features_reject_zero_signal() {
        let x = ObservationBatch::new(DMatrix::zeros(1, 8)).unwrap();
        assert!(matches!(snr_features(&x), Err(Error::DegenerateInput(_))));
    }

    fn linear_setup(d: usize) -> (LinearGaussianModel, FictitiousPrior) {
        let h = DMatrix::<f64>::identity(d, d);
        let sn = DMatrix::<f64>::identity(d, d) * 0.25;
        let model = LinearGaussianModel::new(h, sn).unwrap();
        let prior =
            FictitiousPrior::gaussian(DVector::zeros(d), DMatrix::identity(d, d)).unwrap();
        (model, prior)
    }

    fn linear_arch(d: usize) -> EstimatorArch {
        EstimatorArch::Mlp {
            spec: MlpSpec::uniform(vec![d, d], Activation::Tanh).unwrap(),
            features: FeatureMap::Identity,
            output_clip: None,
        }
    }

    fn base_cfg(lambda: f64, steps: usize) -> TrainConfig {
        TrainConfig {
            lambda,
            batch_groups: 16,
            group_size: 8,
            steps,
            learning_rate: 0.02,
            adam: AdamHyper::default(),
            schedule: Schedule::Multistep {
                milestones: vec![steps * 6 / 10, steps * 8 / 10],
                factor: 0.1,
            },
            seed: 42,
            data_mode: DataMode::FreshPerBatch,
            mse_term: MseTerm::AllPairs,
            metric_window: 100,
        }
    }

    #[test]
    fn zero_step_run_returns_initialization() {
        let (model, prior) = linear_setup(3);
        let arch = linear_arch(3);
        let mut cfg = base_cfg(0.0, 0);
        cfg.steps = 0;
        let out = train_estimator(&arch, &cfg, &prior, &model).unwrap();
        let init = MlpParams::init(
            MlpSpec::uniform(vec![3, 3], Activation::Tanh).unwrap(),
            rngmod::derive_seed(42, 0x1217),
        );
        assert_eq!(out.estimator.params(), &init);
        assert!(out.loss_history.is_empty());
    }

    #[test]
    fn training_is_seed_deterministic() {
        let (model, prior) = linear_setup(2);
        let arch = linear_arch(2);
        let cfg = base_cfg(1.0, 50);
        let a = train_estimator(&arch, &cfg, &prior, &model).unwrap();
        let b = train_estimator(&arch, &cfg, &prior, &model).unwrap();
        assert_eq!(a.estimator.params(), b.estimator.params());
        assert_eq!(a.loss_history, b.loss_history);
    }

    #[test]
    fn linear_net_converges_to_lmmse() {
        let d = 4usize;
        let (model, prior) = linear_setup(d);
        let arch = linear_arch(d);
        let cfg = base_cfg(0.0, 6000);
        let out = train_estimator(&arch, &cfg, &prior, &model).unwrap();

        let closed = linear_bce::lmmse(model.design(), model.noise_cov(), &DMatrix::identity(d, d))
            .unwrap();
        // a single linear layer's weight matrix should match A
        let w = out.estimator.params().weight(0);
        let rel = (w - closed.matrix()).norm() / closed.matrix().norm();
        assert!(rel < 0.02, "relative error {rel}");
    }

    #[test]
    fn linear_net_with_large_lambda_approaches_bias_constrained_form() {
        let d = 4usize;
        let (model, prior) = linear_setup(d);
        let arch = linear_arch(d);
        let mut cfg = base_cfg(1000.0, 8000);
        cfg.group_size = 64;
        cfg.batch_groups = 4;
        let out = train_estimator(&arch, &cfg, &prior, &model).unwrap();

        let closed = linear_bce::lbce_model_form(
            model.design(),
            model.noise_cov(),
            &DMatrix::identity(d, d),
            1000.0,
        )
        .unwrap();
        let w = out.estimator.params().weight(0);
        let rel = (w - closed.matrix()).norm() / closed.matrix().norm();
        assert!(rel < 0.02, "relative error {rel}");
    }

    #[test]
    fn fixed_dataset_mode_trains() {
        let (model, prior) = linear_setup(2);
        let arch = linear_arch(2);
        let mut cfg = base_cfg(0.0, 100);
        cfg.data_mode = DataMode::FixedDataset {
            records: 64,
            obs_per_record: 4,
        };
        let out = train_estimator(&arch, &cfg, &prior, &model).unwrap();
        assert_eq!(out.loss_history.len(), 100);
        assert!(out.loss_history.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn divergence_is_reported() {
        let (model, prior) = linear_setup(2);
        let arch = linear_arch(2);
        let mut cfg = base_cfg(0.0, 500);
        cfg.learning_rate = 1e200; // blow up on purpose
        let res = train_estimator(&arch, &cfg, &prior, &model);
        assert!(matches!(res, Err(Error::Diverged { .. })), "{res:?}");
    }
}
