//! Generalized version of the estimator with a pluggable regression loss.
//!
//! The minimization problem is
//! `L_reg(Y; X, T, A, Gamma) + omega L_DR(X, A, B) + P1(A) + P2(Gamma)` with
//! the PCA reconstruction loss as `L_DR` and L1 penalties. The Gaussian and
//! Bernoulli losses reproduce the continuous and binary solvers; the
//! multinomial and Poisson losses cover multiclass and count outcomes.
//!
//! Multiclass coefficients are not identified: adding the same vector to
//! every column of `Gamma` leaves the softmax unchanged.

use nalgebra::DMatrix;

use crate::data::{scale_rows, Problem};
use crate::engine::fit_simultaneous;
use crate::error::{Error, Result};
use crate::linalg::l1_penalty;
use crate::model::{FactorModel, FitResult, Hyperparameters};

pub use crate::loss::RegressionLoss;

/// PCA reconstruction loss `||X - X A B'||_F^2`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DimensionReductionLoss;

impl DimensionReductionLoss {
    pub fn value(&self, x: &DMatrix<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (x - x * a * b.transpose()).norm_squared()
    }

    /// Gradient with respect to `A`, assuming `B'B = I`.
    pub fn grad_a(&self, x: &DMatrix<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        let gram = x.transpose() * x;
        &gram * a * 2.0 - &gram * b * 2.0
    }
}

/// L1 penalties on `A` and `Gamma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltySpec {
    pub lambda_a: f64,
    pub lambda_gamma: f64,
}

impl PenaltySpec {
    pub fn from_hyper(hyper: &Hyperparameters) -> Self {
        Self {
            lambda_a: hyper.lambda_a,
            lambda_gamma: hyper.lambda_gamma,
        }
    }

    pub fn value(&self, model: &FactorModel) -> f64 {
        l1_penalty(self.lambda_a, &model.a) + l1_penalty(self.lambda_gamma, &model.gamma)
    }
}

/// Gradients of a regression loss with respect to `A` and `Gamma`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub a: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
}

/// Outcomes of any kind together with the hyperparameters of the fit.
#[derive(Debug, Clone)]
pub struct GlmProblem {
    data: Problem,
    hyper: Hyperparameters,
}

impl GlmProblem {
    pub fn new(data: Problem, hyper: Hyperparameters) -> Result<Self> {
        hyper.validate_for(&data.x)?;
        Ok(Self { data, hyper })
    }

    pub fn data(&self) -> &Problem {
        &self.data
    }

    pub fn hyper(&self) -> &Hyperparameters {
        &self.hyper
    }

    fn eta(&self, model: &FactorModel) -> DMatrix<f64> {
        scale_rows(
            &(self.data.x.values() * &model.a * &model.gamma),
            self.data.t.labels(),
            0.5,
        )
    }

    fn check(&self, model: &FactorModel, loss: RegressionLoss) -> Result<()> {
        model.check_against(&self.data.x, self.data.p())?;
        if loss.outcome_kind() != self.data.kind() {
            return Err(Error::KindMismatch {
                expected: loss.outcome_kind().to_string(),
                found: self.data.kind().to_string(),
            });
        }
        Ok(())
    }

    /// Value of `loss` at `model`.
    pub fn loss(&self, model: &FactorModel, loss: RegressionLoss) -> Result<f64> {
        self.check(model, loss)?;
        Ok(loss.value(&self.eta(model), self.data.y.values()))
    }

    /// Gradient of `loss` with respect to `A` and `Gamma`.
    pub fn gradient(&self, model: &FactorModel, loss: RegressionLoss) -> Result<LossGradient> {
        self.check(model, loss)?;
        let x = self.data.x.values();
        let deriv = loss.deriv(&self.eta(model), self.data.y.values());
        let r = scale_rows(&deriv, self.data.t.labels(), 0.5);
        Ok(LossGradient {
            a: x.transpose() * (&r * model.gamma.transpose()),
            gamma: (x * &model.a).transpose() * r,
        })
    }

    /// Full penalized objective under `loss`.
    pub fn objective(&self, model: &FactorModel, loss: RegressionLoss) -> Result<f64> {
        let reg = self.loss(model, loss)?;
        let dr = DimensionReductionLoss.value(self.data.x.values(), &model.a, &model.b);
        Ok(reg + self.hyper.omega * dr + PenaltySpec::from_hyper(&self.hyper).value(model))
    }
}

/// Negative multinomial log-likelihood.
pub fn loss_multiclass(prob: &GlmProblem, model: &FactorModel) -> Result<f64> {
    prob.loss(model, RegressionLoss::Multinomial)
}

pub fn grad_multiclass(prob: &GlmProblem, model: &FactorModel) -> Result<LossGradient> {
    prob.gradient(model, RegressionLoss::Multinomial)
}

/// Negative Poisson log-likelihood, including `log y!`.
pub fn loss_poisson(prob: &GlmProblem, model: &FactorModel) -> Result<f64> {
    prob.loss(model, RegressionLoss::Poisson)
}

pub fn grad_poisson(prob: &GlmProblem, model: &FactorModel) -> Result<LossGradient> {
    prob.gradient(model, RegressionLoss::Poisson)
}

/// Alternating minimization with the plugged loss. The Gaussian and
/// Bernoulli cases give exactly the continuous and binary solver outputs.
pub fn fit_gsmr(prob: &GlmProblem, loss: RegressionLoss, init: Option<&FactorModel>, seed: u64) -> Result<FitResult> {
    fit_simultaneous(&prob.data, &prob.hyper, loss, init, false, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DesignMatrix, OutcomeKind, OutcomeMatrix, TreatmentAssignment};
    use crate::loss::log_factorial;
    use approx::assert_abs_diff_eq;

    fn design() -> (DesignMatrix, TreatmentAssignment) {
        let x = DesignMatrix::new(DMatrix::from_row_slice(
            4,
            3,
            &[1.0, 0.5, -1.0, 1.0, -0.2, 0.3, 1.0, 1.5, 0.8, 1.0, -0.9, -0.4],
        ))
        .unwrap();
        (x, TreatmentAssignment::new(vec![1.0, -1.0, -1.0, 1.0]).unwrap())
    }

    fn problem(y: OutcomeMatrix) -> GlmProblem {
        let (x, t) = design();
        GlmProblem::new(Problem::new(x, t, y).unwrap(), Hyperparameters::default()).unwrap()
    }

    fn model(p: usize) -> FactorModel {
        let a = DMatrix::from_row_slice(3, 1, &[0.3, -0.5, 0.2]);
        let b = &a / a.norm();
        let gamma = DMatrix::from_fn(1, p, |_, j| 0.7 - 0.4 * j as f64);
        FactorModel::new(a, b, gamma).unwrap()
    }

    fn one_hot() -> OutcomeMatrix {
        let y = DMatrix::from_row_slice(4, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        OutcomeMatrix::new(y, OutcomeKind::Multiclass).unwrap()
    }

    #[test]
    fn multiclass_zero_model_is_uniform() {
        let prob = problem(one_hot());
        let zero = FactorModel::zeros(3, 1, 3);
        assert_abs_diff_eq!(loss_multiclass(&prob, &zero).unwrap(), 4.0 * 3f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn multiclass_shift_invariance() {
        let prob = problem(one_hot());
        let m = model(3);
        let mut shifted = m.clone();
        shifted.gamma.add_scalar_mut(0.37);
        assert_abs_diff_eq!(
            loss_multiclass(&prob, &m).unwrap(),
            loss_multiclass(&prob, &shifted).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn two_class_reduces_to_bernoulli() {
        let y2 = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0]);
        let prob = problem(OutcomeMatrix::new(y2.clone(), OutcomeKind::Multiclass).unwrap());
        let m = model(2);
        // class 0 against class 1 is a logistic model in the logit difference
        let diff = m.gamma.column(0) - m.gamma.column(1);
        let bern = FactorModel::new(
            m.a.clone(),
            m.b.clone(),
            DMatrix::from_iterator(1, 1, diff.iter().copied()),
        )
        .unwrap();
        let ybin = OutcomeMatrix::binary(DMatrix::from_iterator(4, 1, y2.column(0).iter().copied())).unwrap();
        let bprob = problem(ybin);
        assert_abs_diff_eq!(
            loss_multiclass(&prob, &m).unwrap(),
            bprob.loss(&bern, RegressionLoss::Bernoulli).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn multiclass_gradient_vanishes_when_a_is_zero() {
        let prob = problem(one_hot());
        let mut m = model(3);
        m.a.fill(0.0);
        assert_eq!(grad_multiclass(&prob, &m).unwrap().gamma.amax(), 0.0);
    }

    #[test]
    fn multiclass_balanced_zero_model_symmetry() {
        let y = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
        let prob = problem(OutcomeMatrix::new(y, OutcomeKind::Multiclass).unwrap());
        let mut m = model(2);
        m.gamma.fill(0.0);
        let g = grad_multiclass(&prob, &m).unwrap().gamma;
        // rows of the gradient sum to zero across classes at the uniform point
        for k in 0..g.nrows() {
            assert_abs_diff_eq!(g.row(k).sum(), 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn poisson_values() {
        let y = DMatrix::from_row_slice(4, 2, &[0.0, 1.0, 2.0, 3.0, 0.0, 5.0, 1.0, 1.0]);
        let prob = problem(OutcomeMatrix::new(y.clone(), OutcomeKind::Count).unwrap());
        let zero = FactorModel::zeros(3, 1, 2);
        let lf: f64 = y.iter().map(|v| log_factorial(*v)).sum();
        assert_abs_diff_eq!(loss_poisson(&prob, &zero).unwrap(), 8.0 + lf, epsilon = 1e-12);

        let x = DesignMatrix::new(DMatrix::from_row_slice(1, 2, &[1.0, 1.0])).unwrap();
        let t = TreatmentAssignment::new(vec![1.0]).unwrap();
        let y = OutcomeMatrix::new(DMatrix::from_element(1, 1, 3.0), OutcomeKind::Count).unwrap();
        let single = GlmProblem::new(Problem::new(x, t, y).unwrap(), Hyperparameters::default()).unwrap();
        let m = FactorModel::new(
            DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        assert_abs_diff_eq!(
            loss_poisson(&single, &m).unwrap(),
            std::f64::consts::E + 6f64.ln() - 3.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn poisson_stationary_when_counts_match_rates() {
        // with y = exp(eta) the loss derivative vanishes identically
        let (x, t) = design();
        let m = model(2);
        let eta = scale_rows(&(x.values() * &m.a * &m.gamma), t.labels(), 0.5);
        let deriv = RegressionLoss::Poisson.deriv(&eta, &eta.map(f64::exp));
        assert!(deriv.amax() < 1e-15);
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let prob = problem(one_hot());
        assert!(loss_poisson(&prob, &model(3)).is_err());
        assert!(fit_gsmr(&prob, RegressionLoss::Gaussian, None, 0).is_err());
    }

    #[test]
    fn dimension_reduction_loss_zero_at_exact_reconstruction() {
        let (x, _) = design();
        let eye = DMatrix::identity(3, 3);
        assert!(DimensionReductionLoss.value(x.values(), &eye, &eye) < 1e-24);
        assert!(DimensionReductionLoss.value(x.values(), &DMatrix::zeros(3, 1), &DMatrix::zeros(3, 1)) > 0.0);
    }
}
