//! Comparison estimators: the two-stage (tandem) fits and the low-rank full
//! model with an explicit main effect `X D`.
//!
//! | | main effect modeled | no main effect |
//! |---|---|---|
//! | two stages | Full-Tandem | MOM-Tandem |
//! | joint | Full-Simultaneous | SMR-MOM |
//!
//! The tandem regression stage minimizes the same regression term as the
//! joint estimator with `A` held fixed, so penalty levels are comparable
//! across the table.

use nalgebra::{DMatrix, DVector};

use crate::data::{scale_rows, DesignMatrix, OutcomeKind, Problem};
use crate::engine::{base_metadata, fit_simultaneous, Engine, Params};
use crate::error::{check_dims, Error, Result};
use crate::linalg::max_eigenvalue;
use crate::loss::RegressionLoss;
use crate::model::{logistic, soft_threshold, treatment_effect, Estimator, FactorModel, FitResult, Hyperparameters};

/// Coefficient bound on the logit scale for penalized logistic fits.
pub const LOGIT_CAP: f64 = 30.0;
/// Stopping tolerance of the inner lasso solvers, on the gradient-mapping
/// scale.
pub const LASSO_TOL: f64 = 1e-8;
const LASSO_MAX_ITER: usize = 100_000;

/// Sparse PCA fit: loadings, orthonormal auxiliary loadings and trace.
#[derive(Debug, Clone, PartialEq)]
pub struct SpcaFit {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub max_orthonormality_error: f64,
}

/// Minimizes `omega ||X - X A B'||^2 + lambda_a |A|_1` subject to `B'B = I`.
pub fn fit_spca(x: &DesignMatrix, d: usize, lambda_a: f64, omega: f64) -> Result<SpcaFit> {
    let hyper = Hyperparameters {
        d,
        lambda_a,
        omega,
        ..Default::default()
    };
    spca_with(x, &hyper)
}

pub fn spca_with(x: &DesignMatrix, hyper: &Hyperparameters) -> Result<SpcaFit> {
    hyper.validate_for(x)?;
    let n = x.n();
    let t = DVector::from_element(n, 1.0);
    let y = DMatrix::zeros(n, 0);
    let engine = Engine::new(x.values(), &t, &y, None, hyper);
    let out = engine.fit(engine.default_init(hyper.d, false))?;
    Ok(SpcaFit {
        a: out.params.a,
        b: out.params.b,
        objective_trace: out.trace,
        converged: out.converged,
        max_orthonormality_error: out.max_orthonormality_error,
    })
}

/// Column-wise lasso `(1/2)||Z - F C||^2 + lambda |C|_1`.
pub fn fit_lasso_multi(f: &DMatrix<f64>, z: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    check_dims("lasso targets", (f.nrows(), z.ncols()), z.shape())?;
    check_lambda(lambda)?;
    Ok(lasso_least_squares(f, z, &vec![lambda; f.ncols()]))
}

/// Column-wise L1-penalized logistic regression with log-odds
/// `t_i f_i' c_j / 2`, coefficients bounded by [`LOGIT_CAP`].
pub fn fit_lasso_logistic_multi(
    f: &DMatrix<f64>,
    y: &DMatrix<f64>,
    t: &DVector<f64>,
    lambda: f64,
) -> Result<DMatrix<f64>> {
    check_dims("logistic targets", (f.nrows(), y.ncols()), y.shape())?;
    check_dims("treatment labels", (f.nrows(), 1), (t.len(), 1))?;
    check_lambda(lambda)?;
    let g = scale_rows(f, t, 0.5);
    Ok(lasso_logistic(&g, y, &vec![lambda; f.ncols()]))
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidHyperparameter(format!(
            "lambda must be nonnegative, got {lambda}"
        )))
    }
}

/// Accelerated proximal gradient with adaptive restart for
/// `smooth(C) + sum_r w_r |C_r.|_1`, with optional box bound.
fn proximal_solve(
    q: usize,
    p: usize,
    lipschitz: f64,
    weights: &[f64],
    cap: Option<f64>,
    grad: impl Fn(&DMatrix<f64>) -> DMatrix<f64>,
) -> DMatrix<f64> {
    let mut c = DMatrix::zeros(q, p);
    if q == 0 || p == 0 || lipschitz <= 0.0 {
        return c;
    }
    let step = 1.0 / lipschitz;
    let prox = |v: DMatrix<f64>| {
        DMatrix::from_fn(q, p, |r, j| {
            let s = soft_threshold(v[(r, j)], step * weights[r]);
            match cap {
                Some(b) => s.clamp(-b, b),
                None => s,
            }
        })
    };
    let mut y = c.clone();
    let mut momentum = 1.0f64;
    for _ in 0..LASSO_MAX_ITER {
        let next = prox(&y - grad(&y) * step);
        let mapping = (&next - &y).amax() * lipschitz;
        let restart = crate::linalg::dot(&(&y - &next), &(&next - &c)) > 0.0;
        let m_next = if restart {
            1.0
        } else {
            (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt()) / 2.0
        };
        y = if restart {
            next.clone()
        } else {
            &next + (&next - &c) * ((momentum - 1.0) / m_next)
        };
        momentum = m_next;
        c = next;
        if mapping <= LASSO_TOL {
            break;
        }
    }
    c
}

/// `(1/2)||Z - G C||^2 + sum_r w_r |C_r.|_1`.
pub(crate) fn lasso_least_squares(g: &DMatrix<f64>, z: &DMatrix<f64>, weights: &[f64]) -> DMatrix<f64> {
    let gram = g.transpose() * g;
    let gz = g.transpose() * z;
    let lipschitz = max_eigenvalue(&gram);
    proximal_solve(g.ncols(), z.ncols(), lipschitz, weights, None, |c| &gram * c - &gz)
}

/// `sum log(1 + exp(eta)) - y eta + sum_r w_r |C_r.|_1` with `eta = G C`.
pub(crate) fn lasso_logistic(g: &DMatrix<f64>, y: &DMatrix<f64>, weights: &[f64]) -> DMatrix<f64> {
    let gt = g.transpose();
    let lipschitz = 0.25 * max_eigenvalue(&(&gt * g));
    proximal_solve(g.ncols(), y.ncols(), lipschitz, weights, Some(LOGIT_CAP), |c| {
        let eta = g * c;
        &gt * eta.zip_map(y, |e, yv| logistic(e) - yv)
    })
}

fn tandem_kind(problem: &Problem) -> Result<OutcomeKind> {
    match problem.kind() {
        k @ (OutcomeKind::Continuous | OutcomeKind::Binary) => Ok(k),
        other => Err(Error::InvalidInput(format!(
            "tandem estimators support continuous and binary outcomes, got {other}"
        ))),
    }
}

fn tandem_result(
    problem: &Problem,
    hyper: &Hyperparameters,
    estimator: Estimator,
    spca: SpcaFit,
    gamma: DMatrix<f64>,
    main_effect: Option<DMatrix<f64>>,
    seed: u64,
) -> Result<FitResult> {
    let model = FactorModel::new(spca.a, spca.b, gamma)?;
    let effect = treatment_effect(&problem.x, &model)?;
    let mut metadata = base_metadata(problem, hyper);
    metadata.insert("spca_variant".into(), "pca-loss-l1-alternating".into());
    metadata.insert("initialization".into(), "svd".into());
    Ok(FitResult {
        estimator,
        kind: problem.kind(),
        model,
        main_effect,
        hyper: hyper.clone(),
        seed,
        objective_trace: spca.objective_trace,
        converged: spca.converged,
        max_orthonormality_error: spca.max_orthonormality_error,
        effect,
        metadata,
    })
}

/// Sparse PCA on `X`, then a penalized regression of the modified outcome
/// (continuous) or of `Y` through the treatment-signed logit (binary) on
/// the scores `X A`.
pub fn fit_mom_tandem(problem: &Problem, hyper: &Hyperparameters, seed: u64) -> Result<FitResult> {
    let kind = tandem_kind(problem)?;
    let spca = spca_with(&problem.x, hyper)?;
    let scores = problem.x.values() * &spca.a;
    let gamma = match kind {
        OutcomeKind::Continuous => {
            // ||Y - T F C / 2||^2 = (1/4)||2TY - F C||^2
            let z = scale_rows(problem.y.values(), problem.t.labels(), 2.0);
            fit_lasso_multi(&scores, &z, 2.0 * hyper.lambda_gamma)?
        }
        _ => fit_lasso_logistic_multi(&scores, problem.y.values(), problem.t.labels(), hyper.lambda_gamma)?,
    };
    tandem_result(problem, hyper, Estimator::MomTandem, spca, gamma, None, seed)
}

/// Sparse PCA on `X`, then a joint penalized regression of `Y` on the
/// column blocks `[X, (1/2) T X A]`, giving `D` and `Gamma`.
pub fn fit_full_tandem(problem: &Problem, hyper: &Hyperparameters, seed: u64) -> Result<FitResult> {
    let kind = tandem_kind(problem)?;
    let spca = spca_with(&problem.x, hyper)?;
    let x = problem.x.values();
    let cols = x.ncols();
    let interaction = scale_rows(&(x * &spca.a), problem.t.labels(), 0.5);
    let mut g = DMatrix::zeros(x.nrows(), cols + hyper.d);
    g.columns_mut(0, cols).copy_from(x);
    g.columns_mut(cols, hyper.d).copy_from(&interaction);
    let mut weights = vec![hyper.effective_lambda_d(); cols];
    weights.extend(std::iter::repeat_n(hyper.lambda_gamma, hyper.d));
    let coef = match kind {
        OutcomeKind::Continuous => {
            // ||Y - G C||^2 + w|C| = 2 [(1/2)||Y - G C||^2 + (w/2)|C|]
            let halved: Vec<f64> = weights.iter().map(|w| w / 2.0).collect();
            lasso_least_squares(&g, problem.y.values(), &halved)
        }
        _ => lasso_logistic(&g, problem.y.values(), &weights),
    };
    let d_block = coef.rows(0, cols).into_owned();
    let gamma = coef.rows(cols, hyper.d).into_owned();
    tandem_result(problem, hyper, Estimator::FullTandem, spca, gamma, Some(d_block), seed)
}

/// Joint fit of the low-rank full model `eta = X D + (1/2) T X A Gamma`
/// with a proximal-gradient `D` update added to each sweep.
pub fn fit_full_simultaneous(problem: &Problem, hyper: &Hyperparameters, seed: u64) -> Result<FitResult> {
    fit_simultaneous(
        problem,
        hyper,
        RegressionLoss::for_kind(problem.kind()),
        None,
        true,
        seed,
    )
}

/// Gradients of the smooth part of the low-rank full model objective.
#[derive(Debug, Clone, PartialEq)]
pub struct FullGradient {
    pub a: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

fn full_params(
    problem: &Problem,
    hyper: &Hyperparameters,
    model: &FactorModel,
    main_effect: &DMatrix<f64>,
) -> Result<Params> {
    hyper.validate()?;
    model.check_against(&problem.x, problem.p())?;
    check_dims("main effect", (problem.m() + 1, problem.p()), main_effect.shape())?;
    Ok(Params::from_model(model.clone(), Some(main_effect.clone())))
}

/// Regression loss plus reconstruction term of the low-rank full model.
pub fn smooth_full(
    problem: &Problem,
    hyper: &Hyperparameters,
    model: &FactorModel,
    main_effect: &DMatrix<f64>,
) -> Result<f64> {
    let p = full_params(problem, hyper, model, main_effect)?;
    let loss = RegressionLoss::for_kind(problem.kind());
    let engine = Engine::new(
        problem.x.values(),
        problem.t.labels(),
        problem.y.values(),
        Some(loss),
        hyper,
    );
    Ok(engine.smooth(&p))
}

/// [`smooth_full`] plus the three L1 penalties.
pub fn objective_full(
    problem: &Problem,
    hyper: &Hyperparameters,
    model: &FactorModel,
    main_effect: &DMatrix<f64>,
) -> Result<f64> {
    let p = full_params(problem, hyper, model, main_effect)?;
    let loss = RegressionLoss::for_kind(problem.kind());
    let engine = Engine::new(
        problem.x.values(),
        problem.t.labels(),
        problem.y.values(),
        Some(loss),
        hyper,
    );
    Ok(engine.objective(&p))
}

pub fn grad_full(
    problem: &Problem,
    hyper: &Hyperparameters,
    model: &FactorModel,
    main_effect: &DMatrix<f64>,
) -> Result<FullGradient> {
    let p = full_params(problem, hyper, model, main_effect)?;
    let loss = RegressionLoss::for_kind(problem.kind());
    let engine = Engine::new(
        problem.x.values(),
        problem.t.labels(),
        problem.y.values(),
        Some(loss),
        hyper,
    );
    Ok(FullGradient {
        a: engine.grad_a(&p),
        gamma: engine.grad_gamma(&p),
        d: engine.grad_d(&p).expect("main effect present"),
    })
}

/// SMR-MOM / SMLR-MOM / GSMR-MOM according to the outcome kind.
pub fn fit_smr_mom(problem: &Problem, hyper: &Hyperparameters, seed: u64) -> Result<FitResult> {
    fit_simultaneous(
        problem,
        hyper,
        RegressionLoss::for_kind(problem.kind()),
        None,
        false,
        seed,
    )
}

/// Dispatches to the estimator's fitting routine.
pub fn fit(estimator: Estimator, problem: &Problem, hyper: &Hyperparameters, seed: u64) -> Result<FitResult> {
    match estimator {
        Estimator::FullTandem => fit_full_tandem(problem, hyper, seed),
        Estimator::FullSimultaneous => fit_full_simultaneous(problem, hyper, seed),
        Estimator::MomTandem => fit_mom_tandem(problem, hyper, seed),
        Estimator::SmrMom => fit_smr_mom(problem, hyper, seed),
    }
}
