//! A minimal dense-network engine: forward/backward with exact analytic
//! gradients of the grouped bias-regularized loss, Adam, schedules, and a
//! finite-difference gradient check.

mod loss;
mod mlp;
mod optim;

pub use loss::{bce_loss, BceBatch, MseTerm};
pub use mlp::{
    backward_batch, forward, forward_batch, forward_batch_tape, Activation, ForwardTape,
    Gradients, MlpParams, MlpSpec,
};
pub use optim::{AdamHyper, AdamState, Schedule};

use alloc::vec::Vec;
use nalgebra::DMatrix;
#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::Rng;

use crate::error::Result;
use crate::rng;

/// Loss and parameter gradient of a grouped batch in one call.
pub fn backward(params: &MlpParams, batch: &BceBatch) -> Result<(f64, Gradients)> {
    let (outputs, tape) = forward_batch_tape(params, &batch.inputs)?;
    let (loss, d_out) = bce_loss(
        &outputs,
        &batch.targets,
        batch.group_size,
        batch.lambda,
        batch.mse_term,
    )?;
    let (grads, _) = backward_batch(params, &tape, &d_out);
    Ok((loss, grads))
}

/// Result of [`grad_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub params_checked: usize,
}

/// Central-difference step for the gradient check.
const FD_STEP: f64 = 1e-5;
/// Relative-error denominators are floored here so that parameters with
/// near-zero gradients do not dominate the report with rounding noise.
const REL_FLOOR: f64 = 1e-4;

/// Compares the analytic gradient against central finite differences over
/// every parameter of a small random network and random grouped batch.
///
/// For ReLU networks the batch is redrawn until every pre-activation is at
/// least 10^-3 away from the kink, so the finite-difference stencil never
/// crosses it.
pub fn grad_check(spec: &MlpSpec, lambda: f64, seed: u64) -> Result<GradCheckReport> {
    let params = MlpParams::init(spec.clone(), rng::derive_seed(seed, 0));
    let n_groups = 3usize;
    let group_size = 4usize;

    let mut batch = None;
    for attempt in 0..200u64 {
        let mut stream = rng::substream(rng::derive_seed(seed, 1), attempt);
        let inputs = DMatrix::from_fn(spec.input_dim(), n_groups * group_size, |_, _| {
            stream.sample::<f64, _>(rand_distr::StandardNormal)
        });
        let targets = DMatrix::from_fn(spec.output_dim(), n_groups, |_, _| {
            stream.sample::<f64, _>(rand_distr::StandardNormal)
        });
        if !has_relu(spec) || min_abs_preactivation(&params, &inputs) > 1e-3 {
            batch = Some(BceBatch::new(
                inputs,
                targets,
                group_size,
                lambda,
                MseTerm::AllPairs,
            )?);
            break;
        }
    }
    let batch = batch.ok_or(crate::error::Error::InvalidConfig(
        "could not find a kink-avoiding batch for the ReLU gradient check",
    ))?;

    let (_, analytic) = backward(&params, &batch)?;
    let analytic = analytic.flatten();

    let flat = params.flatten();
    let mut max_rel = 0.0f64;
    for k in 0..flat.len() {
        let mut plus = flat.clone();
        plus[k] += FD_STEP;
        let mut minus = flat.clone();
        minus[k] -= FD_STEP;
        let lp = loss_of(spec, &plus, &batch)?;
        let lm = loss_of(spec, &minus, &batch)?;
        let numeric = (lp - lm) / (2.0 * FD_STEP);
        let denom = analytic[k].abs().max(numeric.abs()).max(REL_FLOOR);
        max_rel = max_rel.max((analytic[k] - numeric).abs() / denom);
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        params_checked: flat.len(),
    })
}

fn loss_of(spec: &MlpSpec, flat: &[f64], batch: &BceBatch) -> Result<f64> {
    let params = MlpParams::from_flat(spec.clone(), flat)?;
    let outputs = forward_batch(&params, &batch.inputs)?;
    Ok(bce_loss(
        &outputs,
        &batch.targets,
        batch.group_size,
        batch.lambda,
        batch.mse_term,
    )?
    .0)
}

fn has_relu(spec: &MlpSpec) -> bool {
    spec.activations.contains(&Activation::Relu)
}

/// Smallest |pre-activation| over all hidden layers for a batch.
fn min_abs_preactivation(params: &MlpParams, inputs: &DMatrix<f64>) -> f64 {
    let mut a = inputs.clone();
    let mut min_abs = f64::INFINITY;
    let layers = params.spec().layers();
    for l in 0..layers {
        let mut z = params.weight(l) * &a;
        for mut col in z.column_iter_mut() {
            col += params.bias(l);
        }
        if l + 1 < layers {
            for v in z.iter() {
                min_abs = min_abs.min(v.abs());
            }
            match params.spec().activations[l] {
                Activation::Relu => z.apply(|v| *v = v.max(0.0)),
                Activation::Tanh => z.apply(|v| *v = v.tanh()),
            }
        }
        a = z;
    }
    min_abs
}

/// Convenience vector of per-step losses -> running best (diagnostics).
pub fn best_so_far(losses: &[f64]) -> Vec<f64> {
    let mut best = f64::INFINITY;
    losses
        .iter()
        .map(|&l| {
            best = best.min(l);
            best
        })
        .collect()
}
