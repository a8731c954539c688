//! Dense feed-forward networks with exact batched gradients.
//!
//! Inputs and outputs are column batches (one column per sample). Hidden
//! layers apply ReLU or tanh; the output layer is linear. The backward pass
//! recovers activation derivatives from the stored post-activations, so the
//! tape holds one matrix per layer boundary and nothing else.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply_in_place(&self, m: &mut DMatrix<f64>) {
        match self {
            Activation::Relu => m.apply(|v| *v = v.max(0.0)),
            Activation::Tanh => m.apply(|v| *v = v.tanh()),
        }
    }

    /// Derivative expressed through the post-activation value.
    fn derivative_from_output(&self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// Layer widths (input, hidden.., output) and one activation per hidden
/// layer; the output layer is always linear.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub activations: Vec<Activation>,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, activations: Vec<Activation>) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidConfig("MlpSpec needs at least input and output widths"));
        }
        if widths.contains(&0) {
            return Err(Error::InvalidConfig("layer widths must be positive"));
        }
        if activations.len() != widths.len() - 2 {
            return Err(Error::InvalidConfig(
                "need exactly one activation per hidden layer",
            ));
        }
        Ok(Self {
            widths,
            activations,
        })
    }

    /// All hidden layers share one activation.
    pub fn uniform(widths: Vec<usize>, activation: Activation) -> Result<Self> {
        let hidden = widths.len().saturating_sub(2);
        Self::new(widths, alloc::vec![activation; hidden])
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("non-empty widths")
    }

    /// Number of affine layers.
    pub fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.widths
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }
}

/// Weights and biases, shaped per an [`MlpSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    spec: MlpSpec,
    weights: Vec<DMatrix<f64>>,
    biases: Vec<DVector<f64>>,
}

impl MlpParams {
    /// Scaled-uniform initialization: entries of layer l drawn uniformly in
    /// +-sqrt(6/(fan_in+fan_out)); biases start at zero.
    pub fn init(spec: MlpSpec, seed: u64) -> Self {
        let mut stream = rng::master(seed);
        let mut weights = Vec::with_capacity(spec.layers());
        let mut biases = Vec::with_capacity(spec.layers());
        for w in spec.widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push(DMatrix::from_fn(fan_out, fan_in, |_, _| {
                (2.0 * stream.random::<f64>() - 1.0) * bound
            }));
            biases.push(DVector::zeros(fan_out));
        }
        Self {
            spec,
            weights,
            biases,
        }
    }

    pub fn zeros(spec: MlpSpec) -> Self {
        let weights = spec
            .widths
            .windows(2)
            .map(|w| DMatrix::zeros(w[1], w[0]))
            .collect();
        let biases = spec.widths.windows(2).map(|w| DVector::zeros(w[1])).collect();
        Self {
            spec,
            weights,
            biases,
        }
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn weight(&self, layer: usize) -> &DMatrix<f64> {
        &self.weights[layer]
    }

    pub fn bias(&self, layer: usize) -> &DVector<f64> {
        &self.biases[layer]
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut DMatrix<f64> {
        &mut self.weights[layer]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut DVector<f64> {
        &mut self.biases[layer]
    }

    /// Parameters in a flat buffer: per layer, weight entries (column-major)
    /// then bias entries.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.spec.param_count());
        for l in 0..self.spec.layers() {
            out.extend_from_slice(self.weights[l].as_slice());
            out.extend_from_slice(self.biases[l].as_slice());
        }
        out
    }

    pub fn from_flat(spec: MlpSpec, flat: &[f64]) -> Result<Self> {
        if flat.len() != spec.param_count() {
            return Err(Error::DimensionMismatch {
                context: "flat parameter buffer",
                expected: spec.param_count(),
                got: flat.len(),
            });
        }
        let mut weights = Vec::with_capacity(spec.layers());
        let mut biases = Vec::with_capacity(spec.layers());
        let mut at = 0usize;
        for w in spec.widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let wlen = fan_in * fan_out;
            weights.push(DMatrix::from_column_slice(fan_out, fan_in, &flat[at..at + wlen]));
            at += wlen;
            biases.push(DVector::from_column_slice(&flat[at..at + fan_out]));
            at += fan_out;
        }
        Ok(Self {
            spec,
            weights,
            biases,
        })
    }
}

/// Gradient container mirroring [`MlpParams`] shapes.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

impl Gradients {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            weights: params.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
            biases: params.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(other.weights.iter()) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(other.biases.iter()) {
            *a += b;
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in 0..self.weights.len() {
            out.extend_from_slice(self.weights[l].as_slice());
            out.extend_from_slice(self.biases[l].as_slice());
        }
        out
    }
}

/// Activations recorded by [`forward_batch_tape`]: entry 0 is the input,
/// entry l the output of layer l-1.
pub struct ForwardTape {
    pub activations: Vec<DMatrix<f64>>,
}

fn affine(w: &DMatrix<f64>, b: &DVector<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut z = w * x;
    for mut col in z.column_iter_mut() {
        col += b;
    }
    z
}

/// Single-sample forward pass.
pub fn forward(params: &MlpParams, input: &DVector<f64>) -> Result<DVector<f64>> {
    let x = DMatrix::from_column_slice(input.len(), 1, input.as_slice());
    let y = forward_batch(params, &x)?;
    Ok(y.column(0).into_owned())
}

/// Batched forward pass (columns are samples).
pub fn forward_batch(params: &MlpParams, input: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_input(params, input)?;
    let mut a = input.clone();
    for l in 0..params.spec.layers() {
        let mut z = affine(&params.weights[l], &params.biases[l], &a);
        if l + 1 < params.spec.layers() {
            params.spec.activations[l].apply_in_place(&mut z);
        }
        a = z;
    }
    Ok(a)
}

/// Forward pass that records the per-layer activations for [`backward_batch`].
pub fn forward_batch_tape(
    params: &MlpParams,
    input: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, ForwardTape)> {
    check_input(params, input)?;
    let mut activations = Vec::with_capacity(params.spec.layers() + 1);
    activations.push(input.clone());
    for l in 0..params.spec.layers() {
        let mut z = affine(&params.weights[l], &params.biases[l], activations.last().expect("seeded"));
        if l + 1 < params.spec.layers() {
            params.spec.activations[l].apply_in_place(&mut z);
        }
        activations.push(z);
    }
    let output = activations.last().expect("at least one layer").clone();
    Ok((output, ForwardTape { activations }))
}

/// Exact gradient of `sum_over_batch(loss)` wrt parameters and input, given
/// the loss gradient wrt the network output.
pub fn backward_batch(
    params: &MlpParams,
    tape: &ForwardTape,
    d_output: &DMatrix<f64>,
) -> (Gradients, DMatrix<f64>) {
    let layers = params.spec.layers();
    assert_eq!(tape.activations.len(), layers + 1, "tape/spec mismatch");
    let mut grads = Gradients::zeros_like(params);
    let mut d = d_output.clone();
    for l in (0..layers).rev() {
        if l + 1 < layers {
            // activation derivative from the recorded post-activation
            let act = params.spec.activations[l];
            let post = &tape.activations[l + 1];
            d.zip_apply(post, |dv, a| *dv *= act.derivative_from_output(a));
        }
        grads.weights[l] = &d * tape.activations[l].transpose();
        grads.biases[l] = d.column_sum();
        d = params.weights[l].transpose() * d;
    }
    (grads, d)
}

fn check_input(params: &MlpParams, input: &DMatrix<f64>) -> Result<()> {
    if input.nrows() != params.spec.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "network input",
            expected: params.spec.input_dim(),
            got: input.nrows(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn zero_network_outputs_zero() {
        let spec = MlpSpec::uniform(vec![3, 5, 2], Activation::Relu).unwrap();
        let params = MlpParams::zeros(spec);
        let y = forward(&params, &DVector::from_vec(vec![0.3, -0.7, 1.1])).unwrap();
        assert_eq!(y, DVector::zeros(2));
    }

    #[test]
    fn identity_linear_layer() {
        let spec = MlpSpec::uniform(vec![3, 3], Activation::Tanh).unwrap();
        let mut params = MlpParams::zeros(spec);
        params.weight_mut(0).fill_with_identity();
        let x = DVector::from_vec(vec![0.3, -0.7, 1.1]);
        assert_eq!(forward(&params, &x).unwrap(), x);
    }

    #[test]
    fn dead_relu_passes_only_output_bias() {
        // one hidden relu layer driven fully negative: output = output bias
        let spec = MlpSpec::uniform(vec![2, 4, 2], Activation::Relu).unwrap();
        let mut params = MlpParams::zeros(spec);
        params.weight_mut(0).fill(1.0);
        params.bias_mut(0).fill(-10.0); // pre-activations all negative for small inputs
        params.weight_mut(1).fill(1.0);
        params.bias_mut(1).copy_from_slice(&[0.25, -0.5]);
        let y = forward(&params, &DVector::from_vec(vec![0.1, 0.2])).unwrap();
        assert_eq!(y, DVector::from_vec(vec![0.25, -0.5]));
    }

    #[test]
    fn flatten_round_trip() {
        let spec = MlpSpec::uniform(vec![4, 7, 3], Activation::Tanh).unwrap();
        let params = MlpParams::init(spec.clone(), 42);
        let flat = params.flatten();
        assert_eq!(flat.len(), spec.param_count());
        let back = MlpParams::from_flat(spec, &flat).unwrap();
        assert_eq!(params, back);
    }

    #[test]
    fn batch_and_single_forward_agree() {
        let spec = MlpSpec::uniform(vec![3, 8, 2], Activation::Tanh).unwrap();
        let params = MlpParams::init(spec, 7);
        let x1 = DVector::from_vec(vec![0.1, 0.2, -0.3]);
        let x2 = DVector::from_vec(vec![-1.0, 0.5, 2.0]);
        let mut batch = DMatrix::zeros(3, 2);
        batch.set_column(0, &x1);
        batch.set_column(1, &x2);
        let y = forward_batch(&params, &batch).unwrap();
        assert!((y.column(0) - forward(&params, &x1).unwrap()).norm() < 1e-15);
        assert!((y.column(1) - forward(&params, &x2).unwrap()).norm() < 1e-15);
    }

    #[test]
    fn rejects_wrong_input_dim() {
        let spec = MlpSpec::uniform(vec![3, 2], Activation::Tanh).unwrap();
        let params = MlpParams::zeros(spec);
        assert!(forward(&params, &DVector::zeros(4)).is_err());
    }

    #[test]
    fn init_is_seed_deterministic() {
        let spec = MlpSpec::uniform(vec![3, 5, 2], Activation::Tanh).unwrap();
        let a = MlpParams::init(spec.clone(), 11);
        let b = MlpParams::init(spec, 11);
        assert_eq!(a, b);
    }
}
