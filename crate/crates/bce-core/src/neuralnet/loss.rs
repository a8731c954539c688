//! The bias-regularized grouped loss and its gradient.
//!
//! Outputs come in `n_groups` groups of `group_size` columns; every column in
//! group i is a prediction for the same target y_i. The loss is
//!
//! ```text
//! L = mse_term + lambda * (1/N) sum_i || (1/M) sum_j yhat_ij - y_i ||^2
//! ```
//!
//! where the empirical-bias term needs M > 1 to do anything useful. The MSE
//! term has two variants: averaged over all N*M predictions (default; at
//! M = 1 it reduces exactly to the plain empirical MSE), or over the first
//! prediction of each group only, which mirrors the grouped objective written
//! with a single x_i per group.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Which predictions enter the MSE term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum MseTerm {
    #[default]
    AllPairs,
    FirstPerGroup,
}

/// A grouped training batch: inputs are group-major columns (group i occupies
/// columns i*M .. (i+1)*M), targets one column per group.
#[derive(Debug, Clone)]
pub struct BceBatch {
    pub inputs: DMatrix<f64>,
    pub targets: DMatrix<f64>,
    pub group_size: usize,
    pub lambda: f64,
    pub mse_term: MseTerm,
}

impl BceBatch {
    pub fn new(
        inputs: DMatrix<f64>,
        targets: DMatrix<f64>,
        group_size: usize,
        lambda: f64,
        mse_term: MseTerm,
    ) -> Result<Self> {
        if group_size == 0 {
            return Err(Error::InvalidConfig("group size must be >= 1"));
        }
        if inputs.ncols() != targets.ncols() * group_size {
            return Err(Error::DimensionMismatch {
                context: "grouped batch columns",
                expected: targets.ncols() * group_size,
                got: inputs.ncols(),
            });
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidConfig("lambda must be finite and >= 0"));
        }
        Ok(Self {
            inputs,
            targets,
            group_size,
            lambda,
            mse_term,
        })
    }

    pub fn n_groups(&self) -> usize {
        self.targets.ncols()
    }
}

/// Loss value and gradient with respect to every prediction column.
pub fn bce_loss(
    outputs: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    group_size: usize,
    lambda: f64,
    mse_term: MseTerm,
) -> Result<(f64, DMatrix<f64>)> {
    let n_groups = targets.ncols();
    let m = group_size;
    if m == 0 || n_groups == 0 {
        return Err(Error::InvalidConfig("empty grouped batch"));
    }
    if outputs.ncols() != n_groups * m {
        return Err(Error::DimensionMismatch {
            context: "grouped outputs",
            expected: n_groups * m,
            got: outputs.ncols(),
        });
    }
    if outputs.nrows() != targets.nrows() {
        return Err(Error::DimensionMismatch {
            context: "output vs target dimension",
            expected: targets.nrows(),
            got: outputs.nrows(),
        });
    }

    let nm = (n_groups * m) as f64;
    let mut loss = 0.0;
    let mut grad = DMatrix::<f64>::zeros(outputs.nrows(), outputs.ncols());

    for i in 0..n_groups {
        let target = targets.column(i);
        // group bias b_i = mean_j yhat_ij - y_i
        let mut bias = -target.into_owned();
        for j in 0..m {
            bias += outputs.column(i * m + j) / m as f64;
        }
        loss += lambda * bias.norm_squared() / n_groups as f64;

        for j in 0..m {
            let col = i * m + j;
            let resid = outputs.column(col) - target;
            match mse_term {
                MseTerm::AllPairs => {
                    loss += resid.norm_squared() / nm;
                    grad.column_mut(col)
                        .zip_apply(&(resid * (2.0 / nm)), |g, v| *g += v);
                }
                MseTerm::FirstPerGroup => {
                    if j == 0 {
                        loss += resid.norm_squared() / n_groups as f64;
                        grad.column_mut(col)
                            .zip_apply(&(resid * (2.0 / n_groups as f64)), |g, v| *g += v);
                    }
                }
            }
            // bias-term gradient: (2 lambda / (N M)) b_i on every column of
            // the group
            grad.column_mut(col)
                .zip_apply(&(&bias * (2.0 * lambda / nm)), |g, v| *g += v);
        }
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions_have_zero_loss_and_gradient() {
        let targets = DMatrix::from_row_slice(1, 2, &[1.0, -2.0]);
        let outputs = DMatrix::from_row_slice(1, 4, &[1.0, 1.0, -2.0, -2.0]);
        let (loss, grad) = bce_loss(&outputs, &targets, 2, 5.0, MseTerm::AllPairs).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grad, DMatrix::zeros(1, 4));
    }

    #[test]
    fn lambda_zero_is_plain_grouped_mse() {
        let targets = DMatrix::from_row_slice(1, 2, &[0.5, 2.0]);
        let outputs = DMatrix::from_row_slice(1, 4, &[0.0, 1.0, 2.5, 1.5]);
        let (loss, _) = bce_loss(&outputs, &targets, 2, 0.0, MseTerm::AllPairs).unwrap();
        let want = (0.25 + 0.25 + 0.25 + 0.25) / 4.0;
        assert!((loss - want).abs() < 1e-15);
    }

    #[test]
    fn hand_case_opposite_errors() {
        // yhat = (1, 3), y = 2, lambda = 1: group mean hits the target, so
        // only the MSE term remains.
        let targets = DMatrix::from_element(1, 1, 2.0);
        let outputs = DMatrix::from_row_slice(1, 2, &[1.0, 3.0]);
        let (loss, grad) = bce_loss(&outputs, &targets, 2, 1.0, MseTerm::AllPairs).unwrap();
        assert!((loss - 1.0).abs() < 1e-15);
        assert!((grad[(0, 0)] - (-1.0)).abs() < 1e-15);
        assert!((grad[(0, 1)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn hand_case_common_bias() {
        // yhat = (3, 3), y = 2, lambda = 1: MSE term 1, bias term 1, and
        // each prediction's gradient is 1 + 1 = 2.
        let targets = DMatrix::from_element(1, 1, 2.0);
        let outputs = DMatrix::from_row_slice(1, 2, &[3.0, 3.0]);
        let (loss, grad) = bce_loss(&outputs, &targets, 2, 1.0, MseTerm::AllPairs).unwrap();
        assert!((loss - 2.0).abs() < 1e-15);
        assert!((grad[(0, 0)] - 2.0).abs() < 1e-15);
        assert!((grad[(0, 1)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn first_per_group_variant() {
        // M = 2, one group: MSE term uses only the first column
        let targets = DMatrix::from_element(1, 1, 0.0);
        let outputs = DMatrix::from_row_slice(1, 2, &[1.0, 3.0]);
        let (loss, grad) = bce_loss(&outputs, &targets, 2, 0.0, MseTerm::FirstPerGroup).unwrap();
        assert!((loss - 1.0).abs() < 1e-15);
        assert!((grad[(0, 0)] - 2.0).abs() < 1e-15);
        assert_eq!(grad[(0, 1)], 0.0);
    }

    #[test]
    fn bias_gradient_vanishes_when_group_means_hit_targets() {
        let targets = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        // two predictions symmetric around the target
        let outputs = DMatrix::from_row_slice(
            2,
            2,
            &[
                1.3, 0.7, //
                -0.4, -1.6,
            ],
        );
        let (_, g_l0) = bce_loss(&outputs, &targets, 2, 0.0, MseTerm::AllPairs).unwrap();
        let (_, g_l9) = bce_loss(&outputs, &targets, 2, 9.0, MseTerm::AllPairs).unwrap();
        assert!((g_l0 - g_l9).norm() < 1e-15);
    }

    #[test]
    fn loss_is_nonnegative_and_zero_only_at_perfection() {
        let targets = DMatrix::from_row_slice(1, 1, &[0.3]);
        let outputs = DMatrix::from_row_slice(1, 2, &[0.3, 0.4]);
        let (loss, _) = bce_loss(&outputs, &targets, 2, 2.0, MseTerm::AllPairs).unwrap();
        assert!(loss > 0.0);
    }

    #[test]
    fn rejects_ragged_shapes() {
        let targets = DMatrix::from_row_slice(1, 2, &[0.0, 0.0]);
        let outputs = DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 0.0]);
        assert!(bce_loss(&outputs, &targets, 2, 0.0, MseTerm::AllPairs).is_err());
    }

    #[test]
    fn batch_constructor_validates() {
        let inputs = DMatrix::zeros(3, 4);
        let targets = DMatrix::zeros(1, 2);
        assert!(BceBatch::new(inputs.clone(), targets.clone(), 2, 1.0, MseTerm::AllPairs).is_ok());
        assert!(BceBatch::new(inputs.clone(), targets.clone(), 3, 1.0, MseTerm::AllPairs).is_err());
        assert!(BceBatch::new(inputs, targets, 2, -1.0, MseTerm::AllPairs).is_err());
    }
}
