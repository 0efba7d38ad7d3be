//! Regression losses over the linear predictor `eta` (n x p).
//!
//! Every estimator in the crate writes its regression term as a function of
//! `eta = X D + (1/2) T X A Gamma` (the `X D` part only for the low-rank full
//! model), so one loss value and one derivative with respect to `eta` are
//! enough to drive all block updates through the chain rule.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::OutcomeKind;
use crate::model::{log1p_exp, logistic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegressionLoss {
    /// Squared error `||Y - eta||_F^2`.
    Gaussian,
    /// Negative Bernoulli log-likelihood with logit `eta`.
    Bernoulli,
    /// Negative multinomial log-likelihood with softmax over each row of `eta`.
    Multinomial,
    /// Negative Poisson log-likelihood with log-rate `eta`.
    Poisson,
}

impl RegressionLoss {
    /// Loss matching an outcome kind.
    pub fn for_kind(kind: OutcomeKind) -> Self {
        match kind {
            OutcomeKind::Continuous => Self::Gaussian,
            OutcomeKind::Binary => Self::Bernoulli,
            OutcomeKind::Multiclass => Self::Multinomial,
            OutcomeKind::Count => Self::Poisson,
        }
    }

    pub fn outcome_kind(self) -> OutcomeKind {
        match self {
            Self::Gaussian => OutcomeKind::Continuous,
            Self::Bernoulli => OutcomeKind::Binary,
            Self::Multinomial => OutcomeKind::Multiclass,
            Self::Poisson => OutcomeKind::Count,
        }
    }

    pub fn value(self, eta: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
        match self {
            Self::Gaussian => (y - eta).norm_squared(),
            Self::Bernoulli => eta.iter().zip(y.iter()).map(|(&z, &yv)| log1p_exp(z) - yv * z).sum(),
            Self::Multinomial => {
                let mut total = 0.0;
                for i in 0..eta.nrows() {
                    let row = eta.row(i);
                    let lse = log_sum_exp(row.iter().copied());
                    for j in 0..eta.ncols() {
                        total += y[(i, j)] * (lse - row[j]);
                    }
                }
                total
            }
            Self::Poisson => eta
                .iter()
                .zip(y.iter())
                .map(|(&z, &yv)| z.exp() - yv * z + log_factorial(yv))
                .sum(),
        }
    }

    /// Derivative of [`value`](Self::value) with respect to `eta`.
    pub fn deriv(self, eta: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Self::Gaussian => (eta - y) * 2.0,
            Self::Bernoulli => eta.zip_map(y, |z, yv| logistic(z) - yv),
            Self::Multinomial => {
                let mut out = DMatrix::zeros(eta.nrows(), eta.ncols());
                for i in 0..eta.nrows() {
                    let row = eta.row(i);
                    let lse = log_sum_exp(row.iter().copied());
                    let weight: f64 = y.row(i).sum();
                    for j in 0..eta.ncols() {
                        out[(i, j)] = weight * (row[j] - lse).exp() - y[(i, j)];
                    }
                }
                out
            }
            Self::Poisson => eta.zip_map(y, |z, yv| z.exp() - yv),
        }
    }
}

pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `log(y!)` through the log-gamma function.
pub fn log_factorial(y: f64) -> f64 {
    if y <= 1.0 {
        0.0
    } else {
        libm::lgamma(y + 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn log_factorial_matches_products() {
        assert_eq!(log_factorial(0.0), 0.0);
        assert_eq!(log_factorial(1.0), 0.0);
        assert_abs_diff_eq!(log_factorial(3.0), 6f64.ln(), epsilon = 1e-13);
        assert_abs_diff_eq!(log_factorial(10.0), 3628800f64.ln(), epsilon = 1e-11);
    }

    #[test]
    fn log_sum_exp_is_stable() {
        assert_abs_diff_eq!(log_sum_exp([1000.0, 1000.0].into_iter()), 1000.0 + 2f64.ln());
        assert_abs_diff_eq!(log_sum_exp([0.0, 0.0, 0.0].into_iter()), 3f64.ln());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let eta = DMatrix::from_row_slice(2, 3, &[0.3, -1.2, 0.7, 2.0, 0.1, -0.4]);
        let cases = [
            (
                RegressionLoss::Gaussian,
                DMatrix::from_row_slice(2, 3, &[0.5, 1.0, -2.0, 0.0, 0.3, 1.1]),
            ),
            (
                RegressionLoss::Bernoulli,
                DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0]),
            ),
            (
                RegressionLoss::Multinomial,
                DMatrix::from_row_slice(2, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0]),
            ),
            (
                RegressionLoss::Poisson,
                DMatrix::from_row_slice(2, 3, &[0.0, 3.0, 1.0, 7.0, 2.0, 0.0]),
            ),
        ];
        for (loss, y) in cases {
            let g = loss.deriv(&eta, &y);
            for k in 0..eta.len() {
                let h = 1e-6;
                let mut up = eta.clone();
                up[k] += h;
                let mut dn = eta.clone();
                dn[k] -= h;
                let fd = (loss.value(&up, &y) - loss.value(&dn, &y)) / (2.0 * h);
                assert_abs_diff_eq!(g[k], fd, epsilon = 1e-6);
            }
        }
    }
}
