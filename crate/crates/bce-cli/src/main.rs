use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bce_cli::commands::{self, EvalCmdConfig, GenConfig, TrainCmdConfig};
use bce_cli::config::load_config;
use bce_cli::experiments::{self, ExperimentConfig};
use bce_cli::formats::write_json;
use bce_cli::{defaults, CliError};
use bce_core::neuralnet::{grad_check, Activation, MlpSpec};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "bce",
    version,
    about = "Bias-constrained estimation: synthetic data, training, and Monte-Carlo evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Config file (JSON, // and /* */ comments allowed). Experiments fall
    /// back to their embedded default config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config's top-level seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Cap worker threads (default: all cores). Results are identical at
    /// any thread count.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "bce-out")]
    out: PathBuf,

    /// Override a config key by dot path, e.g. --set train.lambda=1000
    /// (repeatable).
    #[arg(long = "set", global = true, value_parser = parse_key_val)]
    set: Vec<(String, String)>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic grouped dataset file.
    Gen,
    /// Train an estimator and write a checkpoint.
    Train,
    /// Evaluate an estimator on a parameter grid, writing a metrics CSV.
    Eval,
    /// Run a full experiment end to end.
    Experiment {
        #[command(subcommand)]
        which: ExperimentName,
    },
    /// Verify analytic gradients against finite differences.
    GradCheck {
        /// Seed for the random nets and batches.
        #[arg(long, default_value_t = 7)]
        check_seed: u64,
    },
}

#[derive(Subcommand, Clone, Copy)]
enum ExperimentName {
    Snr,
    Covariance,
    LinearReg,
    Averaging,
    LinearSanity,
}

impl ExperimentName {
    fn as_str(self) -> &'static str {
        match self {
            ExperimentName::Snr => "snr",
            ExperimentName::Covariance => "covariance",
            ExperimentName::LinearReg => "linear-reg",
            ExperimentName::Averaging => "averaging",
            ExperimentName::LinearSanity => "linear-sanity",
        }
    }
}

fn parse_key_val(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .ok_or_else(|| format!("expected key=value, got '{s}'"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: could not configure thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn ensure_out_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(CliError::io(dir))
}

fn overrides(cli: &Cli) -> Vec<(String, String)> {
    let mut set = cli.set.clone();
    if let Some(seed) = cli.seed {
        set.push(("seed".to_string(), seed.to_string()));
    }
    set
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Gen => {
            let (cfg, effective) = load_config::<GenConfig>(
                cli.config.as_deref(),
                "",
                &overrides(cli),
            )?;
            ensure_out_dir(&cli.out)?;
            write_json(&cli.out.join("effective-config.json"), &effective)?;
            let files = commands::run_gen(&cfg, &cli.out)?;
            report_files(&files);
            Ok(())
        }
        Command::Train => {
            let (cfg, effective) = load_config::<TrainCmdConfig>(
                cli.config.as_deref(),
                "",
                &overrides(cli),
            )?;
            ensure_out_dir(&cli.out)?;
            write_json(&cli.out.join("effective-config.json"), &effective)?;
            let files = commands::run_train(&cfg, &cli.out)?;
            report_files(&files);
            Ok(())
        }
        Command::Eval => {
            let (cfg, effective) = load_config::<EvalCmdConfig>(
                cli.config.as_deref(),
                "",
                &overrides(cli),
            )?;
            ensure_out_dir(&cli.out)?;
            write_json(&cli.out.join("effective-config.json"), &effective)?;
            let files = commands::run_eval(&cfg, &cli.out)?;
            report_files(&files);
            Ok(())
        }
        Command::Experiment { which } => run_experiment(cli, *which),
        Command::GradCheck { check_seed } => run_grad_check(*check_seed),
    }
}

fn report_files(files: &[PathBuf]) {
    for f in files {
        println!("wrote {}", f.display());
    }
}

fn run_experiment(cli: &Cli, which: ExperimentName) -> Result<(), CliError> {
    let default_text = defaults::for_experiment(which.as_str())
        .expect("every experiment has an embedded default");
    let (cfg, effective) = load_config::<ExperimentConfig>(
        cli.config.as_deref(),
        default_text,
        &overrides(cli),
    )?;
    if cfg.name() != which.as_str() {
        return Err(CliError::Config(format!(
            "config is for experiment '{}' but '{}' was requested",
            cfg.name(),
            which.as_str()
        )));
    }
    let out_dir = cli.out.join(which.as_str());
    ensure_out_dir(&out_dir)?;
    write_json(&out_dir.join("effective-config.json"), &effective)?;

    let mut files = vec![out_dir.join("effective-config.json")];
    let summary = match &cfg {
        ExperimentConfig::Snr(c) => {
            let result = experiments::snr::run(c)?;
            files.extend(experiments::snr::write_artifacts(c, &result, &out_dir)?);
            summarize_snr(&result)
        }
        ExperimentConfig::Covariance(c) => {
            let result = experiments::covariance::run(c)?;
            files.extend(experiments::covariance::write_artifacts(c, &result, &out_dir)?);
            summarize_covariance(&result)
        }
        ExperimentConfig::LinearReg(c) => {
            let result = experiments::linreg::run(c)?;
            files.extend(experiments::linreg::write_artifacts(&result, &out_dir)?);
            summarize_linreg(&result)
        }
        ExperimentConfig::Averaging(c) => {
            let result = experiments::averaging::run(c)?;
            files.extend(experiments::averaging::write_artifacts(c, &result, &out_dir)?);
            summarize_averaging(&result)
        }
        ExperimentConfig::LinearSanity(c) => {
            let result = experiments::linsanity::run(c)?;
            files.extend(experiments::linsanity::write_artifacts(&result, &out_dir)?);
            summarize_linsanity(&result)
        }
    };
    let summary_path = out_dir.join("summary.json");
    write_json(&summary_path, &summary)?;
    files.push(summary_path);

    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    report_files(&files);
    Ok(())
}

fn summarize_snr(result: &experiments::snr::SnrExperimentResult) -> serde_json::Value {
    let mut per_estimator = serde_json::Map::new();
    for kind in ["mle", "emmse", "bce"] {
        let rows: Vec<_> = result
            .rows
            .iter()
            .filter(|r| r.estimator.label() == kind)
            .collect();
        let table: Vec<serde_json::Value> = rows
            .iter()
            .map(|r| {
                serde_json::json!({
                    "snr": r.snr,
                    "bias": r.metrics.bias[0],
                    "mse": r.metrics.mse,
                    "crb": r.metrics.crb,
                    "mse_over_crb": r.metrics.mse_over_crb(),
                    "inv_snr_mse": r.inv_mse,
                })
            })
            .collect();
        per_estimator.insert(kind.to_string(), serde_json::Value::Array(table));
    }
    serde_json::Value::Object(per_estimator)
}

fn summarize_covariance(
    result: &experiments::covariance::CovarianceExperimentResult,
) -> serde_json::Value {
    use experiments::covariance::TestPriorKind;
    let bce_train = result.ratio("bce", TestPriorKind::Train);
    let bce_shift = result.ratio("bce", TestPriorKind::Shifted);
    let emmse_train = result.ratio("emmse", TestPriorKind::Train);
    let emmse_shift = result.ratio("emmse", TestPriorKind::Shifted);
    serde_json::json!({
        "mean_mse_over_crb": {
            "bce": { "train_prior": bce_train, "shifted_prior": bce_shift },
            "emmse": { "train_prior": emmse_train, "shifted_prior": emmse_shift },
        },
        "bce_relative_ratio_change": (bce_shift - bce_train).abs() / bce_train,
        "emmse_ratio_degradation": emmse_shift - emmse_train,
        "bce_ratio_degradation": bce_shift - bce_train,
    })
}

fn summarize_linreg(
    result: &bce_core::evaluation::RegularizationResult,
) -> serde_json::Value {
    let cells: Vec<serde_json::Value> = result
        .cells
        .iter()
        .map(|c| {
            serde_json::json!({
                "n": c.n,
                "emmse": { "mean": c.emmse.mean, "se": c.emmse.se },
                "ridge": { "mean": c.ridge.mean, "se": c.ridge.se },
                "bce": { "mean": c.bce.mean, "se": c.bce.se },
                "ridge_negative_fraction": c.ridge_negative_fraction,
                "mean_bce_lambda": c.mean_selected_bce_lambda,
                "mean_ridge_lambda": c.mean_selected_ridge_lambda,
            })
        })
        .collect();
    serde_json::json!({
        "cells": cells,
        "skipped_ridge_points": result.skipped_ridge_points,
    })
}

fn summarize_averaging(
    result: &experiments::averaging::AveragingExperimentResult,
) -> serde_json::Value {
    serde_json::json!({
        "log_variance_slope": result.variance_slope(),
        "control_plateau_mse": result.control_plateau_mse(),
    })
}

fn summarize_linsanity(
    result: &experiments::linsanity::LinearSanityResult,
) -> serde_json::Value {
    serde_json::json!({
        "emmse_vs_lmmse_rel_frobenius": result.emmse_rel_err,
        "bce_vs_closed_form_rel_frobenius": result.bce_rel_err,
    })
}

fn run_grad_check(seed: u64) -> Result<(), CliError> {
    let tanh = MlpSpec::uniform(vec![3, 8, 2], Activation::Tanh).map_err(CliError::from)?;
    let relu = MlpSpec::uniform(vec![3, 10, 2], Activation::Relu).map_err(CliError::from)?;
    let mut worst = 0.0f64;
    for (name, spec) in [("tanh", &tanh), ("relu", &relu)] {
        for lambda in [0.0, 1.0, 1000.0] {
            let report = grad_check(spec, lambda, seed).map_err(CliError::from)?;
            println!(
                "{name} lambda={lambda}: max relative error {:.3e} over {} parameters",
                report.max_rel_error, report.params_checked
            );
            worst = worst.max(report.max_rel_error);
        }
    }
    if worst <= 1e-5 {
        println!("gradient check passed (worst {worst:.3e} <= 1e-5)");
        Ok(())
    } else {
        Err(CliError::Numerical(bce_core::Error::InvalidConfig(
            "gradient check exceeded 1e-5",
        )))
    }
}
