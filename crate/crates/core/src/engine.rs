//! Alternating proximal-gradient / Procrustes minimization shared by every
//! simultaneous estimator.
//!
//! The objective is
//!
//! ```text
//! L(eta) + omega ||X - X A B'||_F^2 + lambda_a |A|_1 + lambda_gamma |Gamma|_1 + lambda_d |D|_1
//! eta = X D + (1/2) T X A Gamma
//! ```
//!
//! where `L` is one of the [`RegressionLoss`] kinds, the `D` block exists
//! only for the low-rank full model and the regression term is absent when
//! fitting sparse PCA alone. Each sweep updates `A` (proximal gradient),
//! `B` (orthogonal Procrustes), `D` (proximal gradient) and `Gamma`
//! (proximal gradient), in that order.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::data::{scale_rows, Problem, Standardization};
use crate::error::{Error, Result};
use crate::linalg::{
    dot, l1_penalty, orthonormality_error, procrustes, soft_threshold_matrix, top_right_singular_vectors,
};
use crate::loss::RegressionLoss;
use crate::model::{treatment_effect, Estimator, FactorModel, FitResult, Hyperparameters, StepSize};

/// Halvings tried by the line search before a block update is rejected.
const MAX_HALVINGS: usize = 40;
/// Starting step length for backtracking.
const INITIAL_STEP: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Params {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub d: Option<DMatrix<f64>>,
}

impl Params {
    pub fn from_model(model: FactorModel, d: Option<DMatrix<f64>>) -> Self {
        Self {
            a: model.a,
            b: model.b,
            gamma: model.gamma,
            d,
        }
    }

    pub fn model(&self) -> FactorModel {
        FactorModel {
            a: self.a.clone(),
            b: self.b.clone(),
            gamma: self.gamma.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Block {
    A,
    Gamma,
    D,
}

/// Current step lengths of the three proximal blocks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Steps {
    pub a: f64,
    pub gamma: f64,
    pub d: f64,
}

impl Steps {
    pub fn initial(hyper: &Hyperparameters) -> Self {
        let start = |s: StepSize| match s {
            StepSize::Auto => INITIAL_STEP,
            StepSize::Fixed(v) => v,
        };
        Self {
            a: start(hyper.step_a),
            gamma: start(hyper.step_gamma),
            d: start(hyper.step_gamma),
        }
    }
}

pub(crate) struct FitOutput {
    pub params: Params,
    pub trace: Vec<f64>,
    pub converged: bool,
    pub max_orthonormality_error: f64,
}

pub(crate) struct Engine<'a> {
    x: &'a DMatrix<f64>,
    t: &'a DVector<f64>,
    y: &'a DMatrix<f64>,
    loss: Option<RegressionLoss>,
    hyper: &'a Hyperparameters,
    gram: DMatrix<f64>,
}

impl<'a> Engine<'a> {
    pub fn new(
        x: &'a DMatrix<f64>,
        t: &'a DVector<f64>,
        y: &'a DMatrix<f64>,
        loss: Option<RegressionLoss>,
        hyper: &'a Hyperparameters,
    ) -> Self {
        Self {
            x,
            t,
            y,
            loss,
            hyper,
            gram: x.transpose() * x,
        }
    }

    /// Default starting point: `A = B` = top-`d` right singular vectors of
    /// `X`, `Gamma = 0`, `D = 0`.
    pub fn default_init(&self, d: usize, with_main_effect: bool) -> Params {
        let a = top_right_singular_vectors(self.x, d);
        Params {
            b: a.clone(),
            gamma: DMatrix::zeros(d, self.y.ncols()),
            d: with_main_effect.then(|| DMatrix::zeros(self.x.ncols(), self.y.ncols())),
            a,
        }
    }

    fn eta(&self, scores: &DMatrix<f64>, p: &Params) -> DMatrix<f64> {
        let interaction = scale_rows(&(scores * &p.gamma), self.t, 0.5);
        match &p.d {
            Some(d) => self.x * d + interaction,
            None => interaction,
        }
    }

    fn reconstruction(&self, scores: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        self.hyper.omega * (self.x - scores * b.transpose()).norm_squared()
    }

    /// Regression loss plus weighted reconstruction error.
    pub fn smooth(&self, p: &Params) -> f64 {
        let scores = self.x * &p.a;
        let reg = match self.loss {
            Some(loss) => loss.value(&self.eta(&scores, p), self.y),
            None => 0.0,
        };
        reg + self.reconstruction(&scores, &p.b)
    }

    pub fn regression_value(&self, p: &Params) -> f64 {
        match self.loss {
            Some(loss) => loss.value(&self.eta(&(self.x * &p.a), p), self.y),
            None => 0.0,
        }
    }

    pub fn penalty(&self, p: &Params) -> f64 {
        let mut total = l1_penalty(self.hyper.lambda_a, &p.a) + l1_penalty(self.hyper.lambda_gamma, &p.gamma);
        if let Some(d) = &p.d {
            total += l1_penalty(self.hyper.effective_lambda_d(), d);
        }
        total
    }

    pub fn objective(&self, p: &Params) -> f64 {
        self.smooth(p) + self.penalty(p)
    }

    /// `T dL/deta` scaled by one half, the common factor of the `A` and
    /// `Gamma` gradients.
    fn half_signed_residual(&self, scores: &DMatrix<f64>, p: &Params) -> Option<DMatrix<f64>> {
        let loss = self.loss?;
        let deriv = loss.deriv(&self.eta(scores, p), self.y);
        Some(scale_rows(&deriv, self.t, 0.5))
    }

    pub fn grad_a(&self, p: &Params) -> DMatrix<f64> {
        let scores = self.x * &p.a;
        let omega = self.hyper.omega;
        let pca = (&self.gram * &p.b * -2.0 + &self.gram * &p.a * 2.0) * omega;
        match self.half_signed_residual(&scores, p) {
            Some(r) => self.x.transpose() * (r * p.gamma.transpose()) + pca,
            None => pca,
        }
    }

    pub fn grad_gamma(&self, p: &Params) -> DMatrix<f64> {
        let scores = self.x * &p.a;
        match self.half_signed_residual(&scores, p) {
            Some(r) => scores.transpose() * r,
            None => DMatrix::zeros(p.gamma.nrows(), p.gamma.ncols()),
        }
    }

    pub fn grad_d(&self, p: &Params) -> Option<DMatrix<f64>> {
        let loss = self.loss?;
        p.d.as_ref()?;
        let scores = self.x * &p.a;
        Some(self.x.transpose() * loss.deriv(&self.eta(&scores, p), self.y))
    }

    fn block_lambda(&self, block: Block) -> f64 {
        match block {
            Block::A => self.hyper.lambda_a,
            Block::Gamma => self.hyper.lambda_gamma,
            Block::D => self.hyper.effective_lambda_d(),
        }
    }

    fn block_policy(&self, block: Block) -> StepSize {
        match block {
            Block::A => self.hyper.step_a,
            Block::Gamma | Block::D => self.hyper.step_gamma,
        }
    }

    /// One proximal-gradient update of `block`, with backtracking when the
    /// step policy is `auto`.
    ///
    /// A backtracking step is accepted when the smooth part satisfies the
    /// quadratic upper bound and the full objective does not increase; if no
    /// step length qualifies the block is left unchanged.
    pub fn prox_update(&self, p: &mut Params, block: Block, step: &mut f64) -> Result<()> {
        let grad = match block {
            Block::A => self.grad_a(p),
            Block::Gamma => self.grad_gamma(p),
            Block::D => match self.grad_d(p) {
                Some(g) => g,
                None => return Ok(()),
            },
        };
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gradient (step size too large?)"));
        }
        let current = match block {
            Block::A => &p.a,
            Block::Gamma => &p.gamma,
            Block::D => p.d.as_ref().expect("checked above"),
        }
        .clone();
        let lambda = self.block_lambda(block);
        let scaling = self.hyper.prox_scaling;
        let candidate_at =
            |alpha: f64| soft_threshold_matrix(&(&current - &grad * alpha), scaling.threshold(alpha, lambda));
        let with_block = |value: DMatrix<f64>| {
            let mut trial = p.clone();
            match block {
                Block::A => trial.a = value,
                Block::Gamma => trial.gamma = value,
                Block::D => trial.d = Some(value),
            }
            trial
        };

        if let StepSize::Fixed(alpha) = self.block_policy(block) {
            *p = with_block(candidate_at(alpha));
            return Ok(());
        }

        let smooth_old = self.smooth(p);
        let total_old = smooth_old + self.penalty(p);
        let mut alpha = *step;
        for _ in 0..MAX_HALVINGS {
            let candidate = candidate_at(alpha);
            let delta = &candidate - &current;
            let moved = delta.norm_squared();
            if moved == 0.0 {
                *step = alpha;
                return Ok(());
            }
            let trial = with_block(candidate);
            let smooth_new = self.smooth(&trial);
            let bound = smooth_old + dot(&grad, &delta) + moved / (2.0 * alpha);
            if smooth_new.is_finite() && smooth_new <= bound && smooth_new + self.penalty(&trial) <= total_old {
                *p = trial;
                *step = alpha;
                return Ok(());
            }
            alpha *= 0.5;
        }
        Ok(())
    }

    pub fn update_b(&self, p: &mut Params) {
        p.b = procrustes(&(&self.gram * &p.a));
    }

    /// One full sweep: `A`, `B`, `D` (when present), `Gamma`.
    pub fn sweep(&self, p: &mut Params, steps: &mut Steps) -> Result<()> {
        self.prox_update(p, Block::A, &mut steps.a)?;
        self.update_b(p);
        if p.d.is_some() {
            self.prox_update(p, Block::D, &mut steps.d)?;
        }
        if self.loss.is_some() {
            self.prox_update(p, Block::Gamma, &mut steps.gamma)?;
        }
        Ok(())
    }

    pub fn fit(&self, mut p: Params) -> Result<FitOutput> {
        let mut steps = Steps::initial(self.hyper);
        let mut trace = vec![self.objective(&p)];
        let mut converged = false;
        let mut orth = 0.0f64;
        for _ in 0..self.hyper.max_sweeps {
            self.sweep(&mut p, &mut steps)?;
            orth = orth.max(orthonormality_error(&p.b));
            let obj = self.objective(&p);
            if !obj.is_finite() {
                return Err(Error::NonFinite("objective"));
            }
            let prev = *trace.last().expect("trace starts non-empty");
            trace.push(obj);
            if (obj - prev).abs() / prev.abs().max(1.0) < self.hyper.tol {
                converged = true;
                break;
            }
        }
        Ok(FitOutput {
            params: p,
            trace,
            converged,
            max_orthonormality_error: orth,
        })
    }
}

/// Fits one of the simultaneous estimators and packages the result.
pub(crate) fn fit_simultaneous(
    problem: &Problem,
    hyper: &Hyperparameters,
    loss: RegressionLoss,
    init: Option<&FactorModel>,
    main_effect: bool,
    seed: u64,
) -> Result<FitResult> {
    hyper.validate_for(&problem.x)?;
    if loss.outcome_kind() != problem.kind() {
        return Err(Error::KindMismatch {
            expected: loss.outcome_kind().to_string(),
            found: problem.kind().to_string(),
        });
    }
    let engine = Engine::new(
        problem.x.values(),
        problem.t.labels(),
        problem.y.values(),
        Some(loss),
        hyper,
    );
    let start = match init {
        Some(model) => {
            model.check_against(&problem.x, problem.p())?;
            if model.d() != hyper.d {
                return Err(Error::DimensionMismatch {
                    context: "initial model components",
                    expected: format!("{}", hyper.d),
                    found: format!("{}", model.d()),
                });
            }
            Params::from_model(
                model.clone(),
                main_effect.then(|| DMatrix::zeros(problem.m() + 1, problem.p())),
            )
        }
        None => engine.default_init(hyper.d, main_effect),
    };
    let out = engine.fit(start)?;
    let model = out.params.model();
    let effect = treatment_effect(&problem.x, &model)?;
    let mut metadata = base_metadata(problem, hyper);
    metadata.insert(
        "initialization".into(),
        if init.is_some() { "user" } else { "svd" }.into(),
    );
    Ok(FitResult {
        estimator: if main_effect {
            Estimator::FullSimultaneous
        } else {
            Estimator::SmrMom
        },
        kind: problem.kind(),
        model,
        main_effect: out.params.d,
        hyper: hyper.clone(),
        seed,
        objective_trace: out.trace,
        converged: out.converged,
        max_orthonormality_error: out.max_orthonormality_error,
        effect,
        metadata,
    })
}

pub(crate) fn base_metadata(problem: &Problem, hyper: &Hyperparameters) -> BTreeMap<String, String> {
    let mut metadata = BTreeMap::new();
    metadata.insert(
        "prox_scaling".into(),
        format!("{:?}", hyper.prox_scaling).to_lowercase(),
    );
    if problem.x.standardization().is_some() {
        metadata.insert("variance_divisor".into(), Standardization::VARIANCE_DIVISOR.into());
    }
    metadata
}
