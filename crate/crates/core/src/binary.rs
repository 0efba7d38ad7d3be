//! Structured multiple logistic regression with modified outcomes for
//! binary outcomes.
//!
//! The log-odds ratio of outcome `j` for subject `i` is `t_i gamma_j' A' x_i / 2`;
//! the fit minimizes the negative log-likelihood plus the same PCA and L1
//! terms as the continuous solver.

use nalgebra::{DMatrix, DVector};

use crate::data::{scale_rows, OutcomeKind, Problem};
use crate::engine::{fit_simultaneous, Block, Engine, Params, Steps};
use crate::error::{Error, Result};
use crate::loss::RegressionLoss;
use crate::model::{FactorModel, FitResult, Hyperparameters};

/// Binary outcomes together with the hyperparameters of the fit.
#[derive(Debug, Clone)]
pub struct BinaryProblem {
    data: Problem,
    hyper: Hyperparameters,
}

impl BinaryProblem {
    pub fn new(data: Problem, hyper: Hyperparameters) -> Result<Self> {
        if data.kind() != OutcomeKind::Binary {
            return Err(Error::KindMismatch {
                expected: OutcomeKind::Binary.to_string(),
                found: data.kind().to_string(),
            });
        }
        hyper.validate_for(&data.x)?;
        Ok(Self { data, hyper })
    }

    pub fn data(&self) -> &Problem {
        &self.data
    }

    pub fn hyper(&self) -> &Hyperparameters {
        &self.hyper
    }

    fn engine(&self) -> Engine<'_> {
        Engine::new(
            self.data.x.values(),
            self.data.t.labels(),
            self.data.y.values(),
            Some(RegressionLoss::Bernoulli),
            &self.hyper,
        )
    }

    fn params(&self, model: &FactorModel) -> Result<Params> {
        model.check_against(&self.data.x, self.data.p())?;
        Ok(Params::from_model(model.clone(), None))
    }

    /// Half-scaled signed residuals `(t_i / 2) (y_ij - sigma(z_ij))`.
    fn signed_residual(&self, model: &FactorModel) -> DMatrix<f64> {
        let x = self.data.x.values();
        let z = scale_rows(&(x * &model.a * &model.gamma), self.data.t.labels(), 0.5);
        let r = self.data.y.values().zip_map(&z, |y, z| y - crate::model::logistic(z));
        scale_rows(&r, self.data.t.labels(), 0.5)
    }
}

/// Log-likelihood `sum_ij [(t_i/2) y_ij g_ij - log(1 + exp(t_i g_ij / 2))]`
/// with `g_ij = gamma_j' A' x_i`.
pub fn log_likelihood_binary(prob: &BinaryProblem, model: &FactorModel) -> Result<f64> {
    let p = prob.params(model)?;
    Ok(-prob.engine().regression_value(&p))
}

/// `-loglik + omega ||X - X A B'||^2 + lambda_a |A|_1 + lambda_gamma |Gamma|_1`.
pub fn objective_binary(prob: &BinaryProblem, model: &FactorModel) -> Result<f64> {
    let p = prob.params(model)?;
    Ok(prob.engine().objective(&p))
}

/// Derivative of the log-likelihood with respect to column `k` of `A`
/// (zero-based). The PCA part is not included.
pub fn grad_a_k_binary(prob: &BinaryProblem, model: &FactorModel, k: usize) -> Result<DVector<f64>> {
    model.check_against(&prob.data.x, prob.data.p())?;
    if k >= model.d() {
        return Err(Error::IndexOutOfRange {
            context: "component",
            index: k,
            len: model.d(),
        });
    }
    let r = prob.signed_residual(model);
    let weights = r * model.gamma.row(k).transpose();
    Ok(prob.data.x.values().transpose() * weights)
}

/// Derivative of the log-likelihood with respect to column `j` of `Gamma`
/// (zero-based).
pub fn grad_gamma_j_binary(prob: &BinaryProblem, model: &FactorModel, j: usize) -> Result<DVector<f64>> {
    model.check_against(&prob.data.x, prob.data.p())?;
    if j >= model.p() {
        return Err(Error::IndexOutOfRange {
            context: "outcome",
            index: j,
            len: model.p(),
        });
    }
    let r = prob.signed_residual(model);
    let scores = prob.data.x.values() * &model.a;
    Ok(scores.transpose() * r.column(j))
}

/// Proximal-gradient update of every column of `A`, all evaluated at the
/// current iterate.
pub fn update_a_binary(prob: &BinaryProblem, model: &FactorModel) -> Result<DMatrix<f64>> {
    let mut p = prob.params(model)?;
    let mut steps = Steps::initial(&prob.hyper);
    prob.engine().prox_update(&mut p, Block::A, &mut steps.a)?;
    Ok(p.a)
}

/// Procrustes update, shared with the continuous solver.
pub fn update_b_binary(prob: &BinaryProblem, model: &FactorModel) -> Result<DMatrix<f64>> {
    let mut p = prob.params(model)?;
    prob.engine().update_b(&mut p);
    Ok(p.b)
}

/// Proximal-gradient update of every column of `Gamma`.
pub fn update_gamma_binary(prob: &BinaryProblem, model: &FactorModel) -> Result<DMatrix<f64>> {
    let mut p = prob.params(model)?;
    let mut steps = Steps::initial(&prob.hyper);
    prob.engine().prox_update(&mut p, Block::Gamma, &mut steps.gamma)?;
    Ok(p.gamma)
}

/// Alternating minimization for binary outcomes. `effect` is on the
/// log-odds-ratio scale.
pub fn fit_binary(prob: &BinaryProblem, init: Option<&FactorModel>, seed: u64) -> Result<FitResult> {
    fit_simultaneous(&prob.data, &prob.hyper, RegressionLoss::Bernoulli, init, false, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DesignMatrix, OutcomeMatrix, TreatmentAssignment};
    use crate::model::predict_binary_prob;
    use approx::assert_abs_diff_eq;

    fn tiny(y: &[f64]) -> BinaryProblem {
        let x = DesignMatrix::new(DMatrix::from_row_slice(
            4,
            3,
            &[1.0, 0.5, -1.0, 1.0, -0.2, 0.3, 1.0, 1.5, 0.8, 1.0, -0.9, -0.4],
        ))
        .unwrap();
        let t = TreatmentAssignment::new(vec![1.0, -1.0, -1.0, 1.0]).unwrap();
        let y = OutcomeMatrix::binary(DMatrix::from_row_slice(4, 2, y)).unwrap();
        let hyper = Hyperparameters {
            d: 2,
            ..Default::default()
        };
        BinaryProblem::new(Problem::new(x, t, y).unwrap(), hyper).unwrap()
    }

    fn model() -> FactorModel {
        let a = DMatrix::from_row_slice(3, 2, &[0.3, 0.1, -0.5, 0.4, 0.2, -0.7]);
        let b = crate::linalg::procrustes(&a);
        FactorModel::new(a, b, DMatrix::from_row_slice(2, 2, &[0.8, -1.1, 0.5, 0.9])).unwrap()
    }

    const Y: [f64; 8] = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0];

    #[test]
    fn zero_model_loglik() {
        let prob = tiny(&Y);
        let zero = FactorModel::zeros(3, 2, 2);
        assert_abs_diff_eq!(
            log_likelihood_binary(&prob, &zero).unwrap(),
            -8.0 * 2f64.ln(),
            epsilon = 1e-14
        );
        let x = prob.data.x.values();
        assert_abs_diff_eq!(
            objective_binary(&prob, &zero).unwrap(),
            8.0 * 2f64.ln() + 0.1 * x.norm_squared(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn loglik_matches_probability_form() {
        let prob = tiny(&Y);
        let m = model();
        let q = predict_binary_prob(&prob.data.x, &prob.data.t, &m).unwrap();
        let y = prob.data.y.values();
        let direct: f64 = q
            .iter()
            .zip(y.iter())
            .map(|(q, y)| if *y == 1.0 { q.ln() } else { (1.0 - q).ln() })
            .sum();
        assert_abs_diff_eq!(log_likelihood_binary(&prob, &m).unwrap(), direct, epsilon = 1e-12);
        assert!(direct <= 0.0);
    }

    #[test]
    fn label_flip_symmetry() {
        let prob = tiny(&Y);
        let flipped_y: Vec<f64> = Y.iter().map(|v| 1.0 - v).collect();
        let flipped = Problem::new(
            prob.data.x.clone(),
            prob.data.t.flipped(),
            OutcomeMatrix::binary(DMatrix::from_row_slice(4, 2, &flipped_y)).unwrap(),
        )
        .unwrap();
        let flipped = BinaryProblem::new(flipped, prob.hyper.clone()).unwrap();
        let m = model();
        assert_abs_diff_eq!(
            log_likelihood_binary(&prob, &m).unwrap(),
            log_likelihood_binary(&flipped, &m).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn single_cell_value() {
        let x = DesignMatrix::new(DMatrix::from_row_slice(1, 2, &[1.0, 1.0])).unwrap();
        let t = TreatmentAssignment::new(vec![1.0]).unwrap();
        let y = OutcomeMatrix::binary(DMatrix::from_element(1, 1, 1.0)).unwrap();
        let hyper = Hyperparameters::default();
        let prob = BinaryProblem::new(Problem::new(x, t, y).unwrap(), hyper).unwrap();
        let a = DMatrix::from_row_slice(2, 1, &[2.0, 2.0]);
        let m = FactorModel::new(
            a,
            DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        assert_abs_diff_eq!(log_likelihood_binary(&prob, &m).unwrap(), -0.126928, epsilon = 1e-6);
    }

    #[test]
    fn gradient_at_zero_gamma_vanishes() {
        let prob = tiny(&Y);
        let mut m = model();
        m.gamma.fill(0.0);
        for k in 0..2 {
            assert!(grad_a_k_binary(&prob, &m, k).unwrap().amax() == 0.0);
        }
        assert!(grad_a_k_binary(&prob, &m, 2).is_err());
        assert!(grad_gamma_j_binary(&prob, &m, 2).is_err());
    }

    #[test]
    fn gradient_hand_expansion_at_half() {
        // every probability is 1/2 when A = 0
        let prob = tiny(&[1.0; 8]);
        let mut m = model();
        m.a.fill(0.0);
        m.gamma.fill(1.0);
        let x = prob.data.x.values();
        let t = prob.data.t.labels();
        let expected = x.transpose() * t * 0.25 * 2.0;
        for k in 0..2 {
            let g = grad_a_k_binary(&prob, &m, k).unwrap();
            assert!((g - &expected).amax() < 1e-14);
        }
    }

    #[test]
    fn gamma_gradient_hand_expansion_at_half() {
        let prob = tiny(&Y);
        let mut m = model();
        m.gamma.fill(0.0);
        let x = prob.data.x.values();
        let t = prob.data.t.labels();
        let scores = x * &m.a;
        for j in 0..2 {
            let mut expected = DVector::zeros(2);
            for i in 0..4 {
                let w = t[i] / 2.0 * (prob.data.y.values()[(i, j)] - 0.5);
                expected += scores.row(i).transpose() * w;
            }
            assert!((grad_gamma_j_binary(&prob, &m, j).unwrap() - expected).amax() < 1e-14);
        }
    }

    #[test]
    fn huge_penalties_give_zero_updates() {
        let mut prob = tiny(&Y);
        prob.hyper.lambda_a = 1e6;
        prob.hyper.lambda_gamma = 1e6;
        let m = model();
        assert!(update_a_binary(&prob, &m).unwrap().iter().all(|v| *v == 0.0));
        assert!(update_gamma_binary(&prob, &m).unwrap().iter().all(|v| *v == 0.0));
        let b = update_b_binary(&prob, &m).unwrap();
        assert!(crate::linalg::orthonormality_error(&b) < 1e-12);
    }
}
