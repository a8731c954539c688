//! Adam and learning-rate schedules.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
#[cfg(not(feature = "std"))]
use num_traits::Float;

use super::mlp::{Gradients, MlpParams};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment accumulators per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    hyper: AdamHyper,
    m_w: Vec<DMatrix<f64>>,
    v_w: Vec<DMatrix<f64>>,
    m_b: Vec<DVector<f64>>,
    v_b: Vec<DVector<f64>>,
    step: usize,
}

impl AdamState {
    pub fn new(params: &MlpParams, hyper: AdamHyper) -> Self {
        let layers = params.spec().layers();
        let m_w = (0..layers)
            .map(|l| DMatrix::zeros(params.weight(l).nrows(), params.weight(l).ncols()))
            .collect::<Vec<_>>();
        let m_b = (0..layers)
            .map(|l| DVector::zeros(params.bias(l).len()))
            .collect::<Vec<_>>();
        Self {
            hyper,
            v_w: m_w.clone(),
            v_b: m_b.clone(),
            m_w,
            m_b,
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// One bias-corrected Adam update. A zero learning rate or an all-zero
    /// gradient history leaves the parameters untouched.
    pub fn step(&mut self, params: &mut MlpParams, grads: &Gradients, learning_rate: f64) {
        self.step += 1;
        let t = self.step as i32;
        let AdamHyper {
            beta1,
            beta2,
            epsilon,
        } = self.hyper;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for l in 0..params.spec().layers() {
            update(
                params.weight_mut(l).as_mut_slice(),
                grads.weights[l].as_slice(),
                self.m_w[l].as_mut_slice(),
                self.v_w[l].as_mut_slice(),
                beta1,
                beta2,
                epsilon,
                bc1,
                bc2,
                learning_rate,
            );
            update(
                params.bias_mut(l).as_mut_slice(),
                grads.biases[l].as_slice(),
                self.m_b[l].as_mut_slice(),
                self.v_b[l].as_mut_slice(),
                beta1,
                beta2,
                epsilon,
                bc1,
                bc2,
                learning_rate,
            );
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn update(
    theta: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    bc1: f64,
    bc2: f64,
    lr: f64,
) {
    for i in 0..theta.len() {
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
        let mhat = m[i] / bc1;
        let vhat = v[i] / bc2;
        theta[i] -= lr * mhat / (vhat.sqrt() + epsilon);
    }
}

/// Learning-rate schedule, evaluated as a pure function of the step index
/// and the recorded metric history (for the plateau rule).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "kebab-case"))]
pub enum Schedule {
    Constant,
    /// Multiply by `factor` at each milestone step.
    Multistep { milestones: Vec<usize>, factor: f64 },
    /// Multiply by `factor` after `patience` metric evaluations without
    /// improvement over the best seen so far.
    ReduceOnPlateau { patience: usize, factor: f64 },
}

impl Schedule {
    pub fn lr_at(&self, base: f64, step: usize, metric_history: &[f64]) -> f64 {
        match self {
            Schedule::Constant => base,
            Schedule::Multistep { milestones, factor } => {
                let hits = milestones.iter().filter(|&&m| m <= step).count();
                base * factor.powi(hits as i32)
            }
            Schedule::ReduceOnPlateau { patience, factor } => {
                let mut scale = 1.0;
                let mut best = f64::INFINITY;
                let mut stale = 0usize;
                for &v in metric_history {
                    if v < best {
                        best = v;
                        stale = 0;
                    } else {
                        stale += 1;
                        if stale >= *patience {
                            scale *= factor;
                            stale = 0;
                        }
                    }
                }
                base * scale
            }
        }
    }
}
