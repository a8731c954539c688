//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with its measured numbers (run with `--nocapture` to see them).
//!
//! The heavy end-to-end criteria share a mutex so their runtime bounds are
//! measured without contention from each other; the quick algebraic ones run
//! freely in parallel.

use std::sync::Mutex;
use std::time::Instant;

use bce_cli::config::strip_json_comments;
use bce_cli::defaults;
use bce_cli::experiments::{self, ExperimentConfig};
use bce_core::datagen;
use bce_core::linear_bce::{
    bmse_n_expectation, lbce_model_form, lbce_moment_form, lmmse, ridge_equiv_lambda,
    scalar_lbce, scalar_ridge, wls, SecondMoments,
};
use bce_core::neuralnet::{grad_check, Activation, MlpSpec};
use bce_core::rng;
use nalgebra::DMatrix;

static HEAVY: Mutex<()> = Mutex::new(());

fn heavy() -> std::sync::MutexGuard<'static, ()> {
    HEAVY.lock().unwrap_or_else(|e| e.into_inner())
}

fn load<T>(text: &str) -> T
where
    T: serde::de::DeserializeOwned,
{
    serde_json::from_str(&strip_json_comments(text)).expect("default config parses")
}

fn random_spd(n: usize, lo: f64, hi: f64, stream: &mut bce_core::RngStream) -> DMatrix<f64> {
    let eigs: Vec<f64> = (0..n)
        .map(|k| lo + (hi - lo) * k as f64 / (n.max(2) - 1) as f64)
        .collect();
    datagen::symmetric_with_spectrum(&eigs, stream)
}

#[test]
fn criterion_01_closed_form_equivalence() {
    let t = Instant::now();
    let mut stream = rng::master(0xacce01);
    let lambdas = [0.0, 0.1, 1.0, 10.0, 1e3];
    let mut worst = 0.0f64;
    for inst in 0..100u64 {
        let n = 1 + (rng::derive_seed(0xacce01, 2 * inst) % 20) as usize;
        let d = 1 + (rng::derive_seed(0xacce01, 2 * inst + 1) % 20) as usize;
        let h = datagen::gaussian_matrix(n, d, &mut stream);
        let sn = random_spd(n, 0.3, 3.0, &mut stream);
        let sy = random_spd(d, 0.3, 3.0, &mut stream);
        let m = SecondMoments::from_linear_model(&h, &sn, &sy);
        for &lam in &lambdas {
            let a = lbce_moment_form(&m, lam).unwrap();
            let b = lbce_model_form(&h, &sn, &sy, lam).unwrap();
            worst = worst.max((a.matrix() - b.matrix()).norm());
        }
    }
    let secs = t.elapsed().as_secs_f64();
    assert!(worst < 1e-8, "worst Frobenius gap {worst}");
    assert!(secs < 10.0, "runtime {secs:.1} s exceeds 10 s");
    println!(
        "criterion 01 (closed-form equivalence): PASS — max Frobenius gap {worst:.3e} over 100 instances x 5 lambdas ({secs:.1} s)"
    );
}

#[test]
fn criterion_02_endpoint_reductions() {
    let t = Instant::now();
    let mut stream = rng::master(0xacce02);
    let mut worst_lmmse = 0.0f64;
    let mut worst_wls_limit = 0.0f64;
    let mut worst_unbiased = 0.0f64;
    for inst in 0..20u64 {
        let n = 2 + (rng::derive_seed(0xacce02, 2 * inst) % 19) as usize;
        let d = 1 + (rng::derive_seed(0xacce02, 2 * inst + 1) % n as u64) as usize;
        // full-column-rank design with singular values in [0.7, 2]: the
        // 1/(lambda+1) prior term must vanish relative to a well-posed
        // normal matrix for the WLS limit to be meaningful
        let q1 = datagen::random_orthogonal(n, &mut stream);
        let q2 = datagen::random_orthogonal(d, &mut stream);
        let mut sv = DMatrix::<f64>::zeros(n, d);
        for k in 0..d {
            sv[(k, k)] = 0.7 + 1.3 * k as f64 / d.max(2) as f64;
        }
        let h = &q1 * sv * q2.transpose();
        let sn = random_spd(n, 0.3, 3.0, &mut stream);
        let sy = random_spd(d, 0.3, 3.0, &mut stream);

        let a0 = lbce_model_form(&h, &sn, &sy, 0.0).unwrap();
        let lm = lmmse(&h, &sn, &sy).unwrap();
        worst_lmmse = worst_lmmse.max((a0.matrix() - lm.matrix()).norm());

        let ainf = lbce_model_form(&h, &sn, &sy, 1e6).unwrap();
        let w = wls(&h, &sn).unwrap();
        worst_wls_limit = worst_wls_limit.max((ainf.matrix() - w.matrix()).norm());

        let ah = w.matrix() * &h - DMatrix::<f64>::identity(d, d);
        worst_unbiased = worst_unbiased.max(ah.amax());
    }
    let secs = t.elapsed().as_secs_f64();
    assert!(worst_lmmse < 1e-12, "lambda=0 vs LMMSE gap {worst_lmmse}");
    assert!(worst_wls_limit < 1e-3, "lambda=1e6 vs WLS gap {worst_wls_limit}");
    assert!(worst_unbiased < 1e-10, "A H - I deviation {worst_unbiased}");
    assert!(secs < 5.0, "runtime {secs:.1} s exceeds 5 s");
    println!(
        "criterion 02 (endpoint reductions): PASS — lmmse gap {worst_lmmse:.3e}, wls-limit gap {worst_wls_limit:.3e}, A*H-I {worst_unbiased:.3e} ({secs:.1} s)"
    );
}

#[test]
fn criterion_03_scalar_bmse_optimum() {
    let t = Instant::now();
    let reps = 100_000usize;
    let lambdas: Vec<f64> = (0..30)
        .map(|k| 10f64.powf(-3.0 + 4.0 * k as f64 / 29.0))
        .collect();

    let sweep = |rho: f64, tag: u64| {
        let mut base_rng = rng::substream(rng::derive_seed(0xacce03, tag), 0);
        let base = bmse_n_expectation(5, rho, 0.0, reps, &mut base_rng).unwrap();
        let mut best = base;
        let mut best_lambda = 0.0;
        for (k, &lam) in lambdas.iter().enumerate() {
            let mut r = rng::substream(rng::derive_seed(0xacce03, tag), 1 + k as u64);
            let e = bmse_n_expectation(5, rho, lam, reps, &mut r).unwrap();
            if e.mean < best.mean {
                best = e;
                best_lambda = lam;
            }
        }
        let margin = 3.0 * (base.std_error.powi(2) + best.std_error.powi(2)).sqrt();
        (base, best, best_lambda, margin)
    };

    let (base_hi, best_hi, lam_hi, margin_hi) = sweep(100.0, 0);
    assert!(
        best_hi.mean < base_hi.mean - margin_hi,
        "rho=100: best {} (lambda {lam_hi}) vs base {} margin {margin_hi}",
        best_hi.mean,
        base_hi.mean
    );

    let (base_lo, best_lo, _, margin_lo) = sweep(0.01, 1);
    assert!(
        best_lo.mean >= base_lo.mean - margin_lo,
        "rho=0.01: best {} vs base {} margin {margin_lo}",
        best_lo.mean,
        base_lo.mean
    );
    let secs = t.elapsed().as_secs_f64();
    assert!(secs < 30.0, "runtime {secs:.1} s exceeds 30 s");
    println!(
        "criterion 03 (scalar BMSE optimum): PASS — rho=100 gain {:.4} (> {margin_hi:.4}) at lambda={lam_hi:.3}; rho=0.01 none ({secs:.1} s)",
        base_hi.mean - best_hi.mean
    );
}

#[test]
fn criterion_04_ridge_equivalence() {
    let t = Instant::now();
    let mut worst = 0.0f64;
    for &lam in &[0.0, 0.5, 1.0, 10.0, 1e3] {
        for &rho in &[0.1, 1.0, 100.0] {
            for &ybar2 in &[0.2, 1.0, 5.0] {
                let lr = ridge_equiv_lambda(lam, rho);
                let gap = (scalar_ridge(ybar2, rho, lr) - scalar_lbce(ybar2, lam)).abs();
                worst = worst.max(gap);
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    assert!(worst < 1e-12, "worst equivalence gap {worst}");
    println!(
        "criterion 04 (ridge equivalence): PASS — max gap {worst:.3e} over the lambda x rho grid ({secs:.2} s)"
    );
}

#[test]
fn criterion_05_gradient_exactness() {
    let t = Instant::now();
    let tanh = MlpSpec::uniform(vec![3, 8, 2], Activation::Tanh).unwrap();
    let relu = MlpSpec::uniform(vec![3, 10, 2], Activation::Relu).unwrap();
    let mut worst = 0.0f64;
    for spec in [&tanh, &relu] {
        for &lam in &[0.0, 1.0, 1000.0] {
            let report = grad_check(spec, lam, 0xacce05).unwrap();
            worst = worst.max(report.max_rel_error);
        }
    }
    let secs = t.elapsed().as_secs_f64();
    assert!(worst <= 1e-5, "max relative error {worst}");
    assert!(secs < 10.0, "runtime {secs:.1} s exceeds 10 s");
    println!(
        "criterion 05 (gradient exactness): PASS — max relative error {worst:.3e} across tanh/relu x lambda ({secs:.1} s)"
    );
}

#[test]
fn criterion_06_linear_sanity_training() {
    let _guard = heavy();
    let t = Instant::now();
    let cfg: ExperimentConfig = load(defaults::LINEAR_SANITY);
    let ExperimentConfig::LinearSanity(cfg) = cfg else {
        panic!("default config has the wrong experiment tag");
    };
    let result = experiments::linsanity::run(&cfg).unwrap();
    let secs = t.elapsed().as_secs_f64();
    assert!(
        result.emmse_rel_err < 0.02,
        "lambda=0 net vs LMMSE: {}",
        result.emmse_rel_err
    );
    assert!(
        result.bce_rel_err < 0.02,
        "lambda=1000 net vs closed form: {}",
        result.bce_rel_err
    );
    assert!(secs < 120.0, "runtime {secs:.1} s exceeds 2 min");
    println!(
        "criterion 06 (linear-sanity training): PASS — rel errors {:.4} (lambda=0) / {:.4} (lambda=1000) ({secs:.1} s)",
        result.emmse_rel_err, result.bce_rel_err
    );
}

#[test]
fn criterion_07_snr_experiment() {
    let _guard = heavy();
    let t = Instant::now();
    let cfg: ExperimentConfig = load(defaults::SNR);
    let ExperimentConfig::Snr(cfg) = cfg else {
        panic!("default config has the wrong experiment tag");
    };
    let result = experiments::snr::run(&cfg).unwrap();
    let secs = t.elapsed().as_secs_f64();

    let rows = |kind: &str| -> Vec<&experiments::snr::SnrRow> {
        result
            .rows
            .iter()
            .filter(|r| r.estimator.label() == kind)
            .collect()
    };
    let mle = rows("mle");
    let emmse = rows("emmse");
    let bce = rows("bce");

    // (a) bias dominance at SNR >= 10
    for (b, e) in bce.iter().zip(&emmse) {
        if b.snr >= 10.0 {
            assert!(
                b.metrics.bias[0].abs() <= e.metrics.bias[0].abs(),
                "(a) at snr {}: |bce| {} > |emmse| {}",
                b.snr,
                b.metrics.bias[0].abs(),
                e.metrics.bias[0].abs()
            );
        }
    }
    // (b) efficiency band for MLE and the bias-constrained net
    for r in mle.iter().chain(&bce) {
        let ratio = r.metrics.mse_over_crb().unwrap();
        assert!(
            (0.8..=3.0).contains(&ratio),
            "(b) {} at snr {}: mse/crb {}",
            r.estimator.label(),
            r.snr,
            ratio
        );
    }
    // (c) inverse-SNR gap at the lowest grid point
    assert!(
        emmse[0].inv_mse >= 2.0 * bce[0].inv_mse,
        "(c) emmse {} vs bce {}",
        emmse[0].inv_mse,
        bce[0].inv_mse
    );
    assert!(secs < 900.0, "runtime {secs:.1} s exceeds 15 min");

    let worst_ratio = mle
        .iter()
        .chain(&bce)
        .map(|r| r.metrics.mse_over_crb().unwrap())
        .fold(f64::NAN, f64::max);
    println!(
        "criterion 07 (SNR experiment): PASS — bias dominance at snr>=10, mse/crb in band (max {worst_ratio:.2}), inverse gap {:.1}x ({secs:.0} s)",
        emmse[0].inv_mse / bce[0].inv_mse
    );
}

#[test]
fn criterion_08_covariance_experiment() {
    let _guard = heavy();
    let t = Instant::now();
    let cfg: ExperimentConfig = load(defaults::COVARIANCE);
    let ExperimentConfig::Covariance(cfg) = cfg else {
        panic!("default config has the wrong experiment tag");
    };
    let result = experiments::covariance::run(&cfg).unwrap();
    let secs = t.elapsed().as_secs_f64();

    use experiments::covariance::TestPriorKind;
    let bce_train = result.ratio("bce", TestPriorKind::Train);
    let bce_shift = result.ratio("bce", TestPriorKind::Shifted);
    let emmse_train = result.ratio("emmse", TestPriorKind::Train);
    let emmse_shift = result.ratio("emmse", TestPriorKind::Shifted);

    let bce_change = (bce_shift - bce_train).abs() / bce_train;
    assert!(
        bce_change < 0.30,
        "bce ratio change {bce_change} (train {bce_train}, shifted {bce_shift})"
    );
    let bce_degradation = bce_shift - bce_train;
    let emmse_degradation = emmse_shift - emmse_train;
    assert!(
        emmse_degradation > bce_degradation,
        "emmse degradation {emmse_degradation} not larger than bce {bce_degradation}"
    );
    assert!(secs < 1800.0, "runtime {secs:.1} s exceeds 30 min");
    println!(
        "criterion 08 (covariance experiment): PASS — bce ratio {bce_train:.3} -> {bce_shift:.3} ({:.1}% change), emmse {emmse_train:.3} -> {emmse_shift:.3} ({secs:.0} s)",
        100.0 * bce_change
    );
}

#[test]
fn criterion_09_averaging() {
    let _guard = heavy();
    let t = Instant::now();
    let cfg: ExperimentConfig = load(defaults::AVERAGING);
    let ExperimentConfig::Averaging(cfg) = cfg else {
        panic!("default config has the wrong experiment tag");
    };
    let result = experiments::averaging::run(&cfg).unwrap();
    let secs = t.elapsed().as_secs_f64();

    let slope = result.variance_slope();
    assert!(
        (slope + 1.0).abs() <= 0.1,
        "log-log variance slope {slope} not in -1 +- 0.1"
    );
    let plateau = result.control_plateau_mse();
    assert!(
        (plateau - 0.25).abs() <= 0.025,
        "biased-control plateau {plateau} not within 0.25 +- 10%"
    );
    assert!(secs < 300.0, "runtime {secs:.1} s exceeds 5 min");
    println!(
        "criterion 09 (averaging): PASS — variance slope {slope:.3}, control plateau {plateau:.4} ({secs:.0} s)"
    );
}

#[test]
fn criterion_10_regularization_experiment() {
    let _guard = heavy();
    let t = Instant::now();
    let cfg: ExperimentConfig = load(defaults::LINEAR_REG);
    let ExperimentConfig::LinearReg(cfg) = cfg else {
        panic!("default config has the wrong experiment tag");
    };
    let result = experiments::linreg::run(&cfg).unwrap();
    let secs = t.elapsed().as_secs_f64();

    let n5 = result
        .cells
        .iter()
        .find(|c| c.n == 5)
        .expect("N = 5 cell present");
    let margin = 3.0 * (n5.emmse.se.powi(2) + n5.bce.se.powi(2)).sqrt();
    assert!(
        n5.bce.mean < n5.emmse.mean - margin,
        "N=5: bce {} vs emmse {} (margin {margin})",
        n5.bce.mean,
        n5.emmse.mean
    );
    assert!(
        n5.ridge_negative_fraction > 0.5,
        "negative ridge fraction {}",
        n5.ridge_negative_fraction
    );
    assert!(secs < 600.0, "runtime {secs:.1} s exceeds 10 min");
    println!(
        "criterion 10 (regularization): PASS — N=5 bce {:.2} < emmse {:.2} - {margin:.2}, negative ridge in {:.0}% of trials ({secs:.0} s)",
        n5.bce.mean,
        n5.emmse.mean,
        100.0 * n5.ridge_negative_fraction
    );
}

#[test]
fn criterion_11_determinism_across_threads() {
    let _guard = heavy();
    let t = Instant::now();

    // reduced-scale configs: the point is to exercise every artifact
    // pipeline's rng layout and assembly order, not statistical quality
    let mut snr: experiments::snr::SnrExperimentConfig =
        match load::<ExperimentConfig>(defaults::SNR) {
            ExperimentConfig::Snr(c) => c,
            _ => unreachable!(),
        };
    snr.emmse.steps = 60;
    snr.bce.steps = 60;
    snr.reps = 200;
    snr.crb_reps = 10_000;

    let mut cov: experiments::covariance::CovarianceExperimentConfig =
        match load::<ExperimentConfig>(defaults::COVARIANCE) {
            ExperimentConfig::Covariance(c) => c,
            _ => unreachable!(),
        };
    cov.emmse.steps = 25;
    cov.bce.steps = 25;
    cov.covnet.iterations = 8;
    cov.covnet.hidden = 24;
    cov.scatter_count = 6;
    cov.scatter_reps = 80;

    let mut reg: experiments::linreg::LinearRegConfig =
        match load::<ExperimentConfig>(defaults::LINEAR_REG) {
            ExperimentConfig::LinearReg(c) => c,
            _ => unreachable!(),
        };
    reg.trials = 4;
    reg.n_list = vec![4];
    reg.validation_size = 4000;
    reg.bce_grid_points = 12;
    reg.ridge_grid_points = 12;

    let mut avg: experiments::averaging::AveragingExperimentConfig =
        match load::<ExperimentConfig>(defaults::AVERAGING) {
            ExperimentConfig::Averaging(c) => c,
            _ => unreachable!(),
        };
    avg.train.steps = 80;
    avg.reps = 200;
    avg.m_list = vec![1, 4];

    let gen: bce_cli::commands::GenConfig = serde_json::from_str(
        r#"{
            "model": { "kind": "structured-cov", "p_samples": 6 },
            "prior": { "kind": "uniform-box",
                       "lower": [0,0,0,0,0,0,0,0,0],
                       "upper": [1,1,1,1,1,1,1,1,1] },
            "records": 32, "obs_per_record": 3, "seed": 9,
            "output": "dataset.bin"
        }"#,
    )
    .unwrap();

    let run_all = |dir: &std::path::Path| {
        let r = experiments::snr::run(&snr).unwrap();
        experiments::snr::write_artifacts(&snr, &r, dir).unwrap();
        let r = experiments::covariance::run(&cov).unwrap();
        experiments::covariance::write_artifacts(&cov, &r, dir).unwrap();
        let r = experiments::linreg::run(&reg).unwrap();
        experiments::linreg::write_artifacts(&r, dir).unwrap();
        let r = experiments::averaging::run(&avg).unwrap();
        experiments::averaging::write_artifacts(&avg, &r, dir).unwrap();
        bce_cli::commands::run_gen(&gen, dir).unwrap();
    };

    let run_with_threads = |threads: usize, dir: &std::path::Path| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| run_all(dir));
    };

    let base = tempfile::tempdir().unwrap();
    let d_a = base.path().join("t1-a");
    let d_b = base.path().join("t1-b");
    let d_c = base.path().join("t8");
    for d in [&d_a, &d_b, &d_c] {
        std::fs::create_dir_all(d).unwrap();
    }
    run_with_threads(1, &d_a);
    run_with_threads(1, &d_b);
    run_with_threads(8, &d_c);

    let mut names: Vec<String> = std::fs::read_dir(&d_a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert!(!names.is_empty());
    for name in &names {
        let a = std::fs::read(d_a.join(name)).unwrap();
        let b = std::fs::read(d_b.join(name)).unwrap();
        let c = std::fs::read(d_c.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between two single-threaded runs");
        assert_eq!(a, c, "{name} differs between 1 and 8 threads");
    }
    let secs = t.elapsed().as_secs_f64();
    println!(
        "criterion 11 (determinism): PASS — {} artifacts byte-identical across reruns and thread counts 1/8 ({secs:.0} s)",
        names.len()
    );
}
