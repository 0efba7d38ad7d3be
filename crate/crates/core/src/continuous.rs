//! Structured multiple regression with modified outcomes for continuous
//! outcomes.
//!
//! Minimizes
//! `||Y - (1/2) T X A Gamma||_F^2 + omega ||X - X A B'||_F^2 + lambda_a |A|_1 + lambda_gamma |Gamma|_1`
//! subject to `B'B = I` by alternating a proximal-gradient step on `A`, an
//! orthogonal Procrustes step on `B` and a proximal-gradient step on `Gamma`.

use nalgebra::DMatrix;

use crate::data::{scale_rows, OutcomeKind, Problem};
use crate::engine::{fit_simultaneous, Block, Engine, Params, Steps};
use crate::error::{Error, Result};
use crate::loss::RegressionLoss;
use crate::model::{FactorModel, FitResult, Hyperparameters};

/// Continuous outcomes together with the hyperparameters of the fit.
#[derive(Debug, Clone)]
pub struct ContinuousProblem {
    data: Problem,
    hyper: Hyperparameters,
}

impl ContinuousProblem {
    pub fn new(data: Problem, hyper: Hyperparameters) -> Result<Self> {
        if data.kind() != OutcomeKind::Continuous {
            return Err(Error::KindMismatch {
                expected: OutcomeKind::Continuous.to_string(),
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
            Some(RegressionLoss::Gaussian),
            &self.hyper,
        )
    }

    fn params(&self, model: &FactorModel) -> Result<Params> {
        model.check_against(&self.data.x, self.data.p())?;
        Ok(Params::from_model(model.clone(), None))
    }
}

/// Full penalized objective.
pub fn objective_continuous(prob: &ContinuousProblem, model: &FactorModel) -> Result<f64> {
    let p = prob.params(model)?;
    Ok(prob.engine().objective(&p))
}

/// Gradient of the smooth part with respect to `A`:
/// `-X'TY Gamma' + (1/2) X'X A Gamma Gamma' + omega (-2 X'X B + 2 X'X A)`.
///
/// The reconstruction part uses `B'B = I`.
pub fn grad_a_continuous(prob: &ContinuousProblem, model: &FactorModel) -> Result<DMatrix<f64>> {
    model.check_against(&prob.data.x, prob.data.p())?;
    let x = prob.data.x.values();
    let gram = x.transpose() * x;
    let xty = x.transpose() * scale_rows(prob.data.y.values(), prob.data.t.labels(), 1.0);
    let gt = model.gamma.transpose();
    let regression = -(&xty * &gt) + &gram * &model.a * &model.gamma * &gt * 0.5;
    let reconstruction = (&gram * &model.b * -2.0 + &gram * &model.a * 2.0) * prob.hyper.omega;
    Ok(regression + reconstruction)
}

/// Gradient of the smooth part with respect to `Gamma`:
/// `-A'X'TY + (1/2) A'X'X A Gamma`.
pub fn grad_gamma_continuous(prob: &ContinuousProblem, model: &FactorModel) -> Result<DMatrix<f64>> {
    model.check_against(&prob.data.x, prob.data.p())?;
    let x = prob.data.x.values();
    let scores = x * &model.a;
    let ty = scale_rows(prob.data.y.values(), prob.data.t.labels(), 1.0);
    Ok(-(scores.transpose() * ty) + scores.transpose() * &scores * &model.gamma * 0.5)
}

/// One proximal-gradient update of `A` with the configured step policy.
pub fn update_a(prob: &ContinuousProblem, model: &FactorModel) -> Result<DMatrix<f64>> {
    let mut p = prob.params(model)?;
    let mut steps = Steps::initial(&prob.hyper);
    prob.engine().prox_update(&mut p, Block::A, &mut steps.a)?;
    Ok(p.a)
}

/// Procrustes update `B = U V'` with `X'X A = U S V'`.
pub fn update_b(prob: &ContinuousProblem, model: &FactorModel) -> Result<DMatrix<f64>> {
    let mut p = prob.params(model)?;
    prob.engine().update_b(&mut p);
    Ok(p.b)
}

/// One proximal-gradient update of `Gamma` with the configured step policy.
pub fn update_gamma(prob: &ContinuousProblem, model: &FactorModel) -> Result<DMatrix<f64>> {
    let mut p = prob.params(model)?;
    let mut steps = Steps::initial(&prob.hyper);
    prob.engine().prox_update(&mut p, Block::Gamma, &mut steps.gamma)?;
    Ok(p.gamma)
}

/// Runs the alternating minimization to convergence or `max_sweeps`.
///
/// Without `init` the fit starts from the top-`d` right singular vectors of
/// `X` for `A` and `B` and `Gamma = 0`; that start is deterministic, so
/// `seed` is only recorded in the result.
pub fn fit_continuous(prob: &ContinuousProblem, init: Option<&FactorModel>, seed: u64) -> Result<FitResult> {
    fit_simultaneous(&prob.data, &prob.hyper, RegressionLoss::Gaussian, init, false, seed)
}
