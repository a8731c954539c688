//! Iterative refinement network for structured covariance estimation.
//!
//! The sample covariance C_0 is the sufficient statistic, so the network
//! consumes it directly. A parameter guess alpha_0 = 0.5 * 1 and a state
//! vector v_0 = 0 are refined for K iterations: a shared one-hidden-layer MLP
//! maps (vec(C_k), v_k) to increments (d_alpha, d_v), the guess moves by
//! `step_scale` times the increment (clamped into [0,1]^9 so Sigma(alpha)
//! stays in-domain), and C_{k+1} = Sigma(alpha_{k+1}) re-enters the next
//! iteration. The final alpha_K is the estimate.
//!
//! Training needs the exact gradient through the unrolled loop; the backward
//! pass walks the iterations in reverse, threading adjoints through the
//! clamp, the shared MLP, and the affine map alpha -> vec(Sigma(alpha)).

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::neuralnet::{
    backward_batch, forward_batch, forward_batch_tape, Activation, ForwardTape, Gradients,
    MlpParams, MlpSpec,
};
use crate::statmodels::{self, COV_DIM, COV_PARAM_DIM};

const VEC_DIM: usize = COV_DIM * COV_DIM;

/// Architecture of the refinement network.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CovNetSpec {
    /// Refinement iterations K.
    pub iterations: usize,
    /// Increment scale on (d_alpha, d_v).
    pub step_scale: f64,
    /// Hidden width of the shared fully connected block.
    pub hidden: usize,
    /// Width of the carried state vector v_k.
    pub state_width: usize,
}

impl Default for CovNetSpec {
    fn default() -> Self {
        Self {
            iterations: 50,
            step_scale: 0.1,
            hidden: 128,
            state_width: 16,
        }
    }
}

impl CovNetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("covnet needs at least one iteration"));
        }
        if self.step_scale <= 0.0 || self.step_scale.is_nan() {
            return Err(Error::InvalidConfig("covnet step scale must be positive"));
        }
        if self.hidden == 0 {
            return Err(Error::InvalidConfig("covnet hidden width must be positive"));
        }
        Ok(())
    }

    /// The shared MLP: (vec(C), v) -> (d_alpha, d_v), one tanh hidden layer.
    pub fn mlp_spec(&self) -> Result<MlpSpec> {
        self.validate()?;
        MlpSpec::uniform(
            alloc::vec![
                VEC_DIM + self.state_width,
                self.hidden,
                COV_PARAM_DIM + self.state_width
            ],
            Activation::Tanh,
        )
    }
}

/// vec(Sigma(alpha)) = P alpha + vec(I): the constant 25x9 pattern matrix P.
fn pattern_matrix() -> DMatrix<f64> {
    let mut p = DMatrix::<f64>::zeros(VEC_DIM, COV_PARAM_DIM);
    for k in 0..COV_PARAM_DIM {
        let pat = statmodels::pattern(k);
        p.set_column(k, &DVector::from_column_slice(pat.as_slice()));
    }
    p
}

fn identity_vec() -> DVector<f64> {
    let eye = DMatrix::<f64>::identity(COV_DIM, COV_DIM);
    DVector::from_column_slice(eye.as_slice())
}

/// Per-iteration records needed by the backward pass.
pub struct CovNetTape {
    mlp_tapes: Vec<ForwardTape>,
    clamp_masks: Vec<DMatrix<f64>>,
}

/// Runs the refinement loop on a batch of sample covariances (one 5x5 matrix
/// per sample) and returns the 9 x batch estimates.
pub fn covnet_forward_batch(
    spec: &CovNetSpec,
    params: &MlpParams,
    covs: &[DMatrix<f64>],
) -> Result<DMatrix<f64>> {
    run_forward(spec, params, covs, false).map(|(alpha, _)| alpha)
}

/// Forward pass that also records the tape for [`covnet_backward_batch`].
pub fn covnet_forward_batch_tape(
    spec: &CovNetSpec,
    params: &MlpParams,
    covs: &[DMatrix<f64>],
) -> Result<(DMatrix<f64>, CovNetTape)> {
    let (alpha, tape) = run_forward(spec, params, covs, true)?;
    Ok((alpha, tape.expect("tape requested")))
}

/// Single-input convenience wrapper.
pub fn covnet_forward(
    spec: &CovNetSpec,
    params: &MlpParams,
    sample_cov: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let out = covnet_forward_batch(spec, params, core::slice::from_ref(sample_cov))?;
    Ok(out.column(0).into_owned())
}

fn run_forward(
    spec: &CovNetSpec,
    params: &MlpParams,
    covs: &[DMatrix<f64>],
    want_tape: bool,
) -> Result<(DMatrix<f64>, Option<CovNetTape>)> {
    spec.validate()?;
    if covs.is_empty() {
        return Err(Error::InvalidConfig("covnet batch is empty"));
    }
    let b = covs.len();
    let mut c = DMatrix::<f64>::zeros(VEC_DIM, b);
    for (j, cov) in covs.iter().enumerate() {
        if cov.nrows() != COV_DIM || cov.ncols() != COV_DIM {
            return Err(Error::DimensionMismatch {
                context: "covnet sample covariance",
                expected: COV_DIM,
                got: cov.nrows(),
            });
        }
        if (cov - cov.transpose()).amax() > 1e-9 * (1.0 + cov.amax()) {
            return Err(Error::InvalidConfig("covnet input must be symmetric"));
        }
        c.set_column(j, &DVector::from_column_slice(cov.as_slice()));
    }

    let p = pattern_matrix();
    let ivec = identity_vec();
    let s = spec.step_scale;
    let mut alpha = DMatrix::<f64>::from_element(COV_PARAM_DIM, b, 0.5);
    let mut v = DMatrix::<f64>::zeros(spec.state_width, b);

    let mut mlp_tapes = Vec::new();
    let mut clamp_masks = Vec::new();

    for _ in 0..spec.iterations {
        let mut input = DMatrix::<f64>::zeros(VEC_DIM + spec.state_width, b);
        input.rows_mut(0, VEC_DIM).copy_from(&c);
        input.rows_mut(VEC_DIM, spec.state_width).copy_from(&v);

        let out = if want_tape {
            let (out, tape) = forward_batch_tape(params, &input)?;
            mlp_tapes.push(tape);
            out
        } else {
            forward_batch(params, &input)?
        };

        let d_alpha = out.rows(0, COV_PARAM_DIM);
        let d_v = out.rows(COV_PARAM_DIM, spec.state_width);

        let raw = &alpha + d_alpha * s;
        if want_tape {
            clamp_masks.push(raw.map(|x| if x > 0.0 && x < 1.0 { 1.0 } else { 0.0 }));
        }
        alpha = raw.map(|x| x.clamp(0.0, 1.0));
        v += d_v * s;

        // C_{k+1} = Sigma(alpha_{k+1}), vectorized: P alpha + vec(I)
        c = &p * &alpha;
        for mut col in c.column_iter_mut() {
            col += &ivec;
        }
    }

    let tape = want_tape.then_some(CovNetTape {
        mlp_tapes,
        clamp_masks,
    });
    Ok((alpha, tape))
}

/// Gradient of a scalar loss wrt the shared MLP parameters, given the loss
/// gradient wrt the final alpha_K.
pub fn covnet_backward_batch(
    spec: &CovNetSpec,
    params: &MlpParams,
    tape: &CovNetTape,
    d_alpha_out: &DMatrix<f64>,
) -> Gradients {
    let b = d_alpha_out.ncols();
    let p = pattern_matrix();
    let s = spec.step_scale;
    let mut grads = Gradients::zeros_like(params);
    let mut d_alpha = d_alpha_out.clone();
    let mut d_v = DMatrix::<f64>::zeros(spec.state_width, b);

    for k in (0..spec.iterations).rev() {
        // through the clamp: alpha_{k+1} = clamp(alpha_k + s * inc)
        let g = d_alpha.component_mul(&tape.clamp_masks[k]);

        let mut d_out = DMatrix::<f64>::zeros(COV_PARAM_DIM + spec.state_width, b);
        d_out.rows_mut(0, COV_PARAM_DIM).copy_from(&(&g * s));
        d_out
            .rows_mut(COV_PARAM_DIM, spec.state_width)
            .copy_from(&(&d_v * s));

        let (layer_grads, d_input) = backward_batch(params, &tape.mlp_tapes[k], &d_out);
        grads.add_assign(&layer_grads);

        let d_c = d_input.rows(0, VEC_DIM);
        let d_v_in = d_input.rows(VEC_DIM, spec.state_width);

        d_v += d_v_in;
        // direct path alpha_k -> alpha_{k+1}, plus (for k > 0) the path
        // through c_k = P alpha_k + vec(I)
        d_alpha = g;
        if k > 0 {
            d_alpha += p.transpose() * d_c;
        }
    }
    grads
}
