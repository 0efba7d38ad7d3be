//! Measurements behind the correctness suites: each returns the worst value
//! seen so callers decide the tolerance.

use nalgebra::DMatrix;
use smrmom::baselines::{grad_full, smooth_full};
use smrmom::binary::{grad_a_k_binary, grad_gamma_j_binary, log_likelihood_binary};
use smrmom::continuous::{grad_a_continuous, grad_gamma_continuous, objective_continuous, update_b};
use smrmom::glm::{grad_multiclass, grad_poisson, loss_multiclass, loss_poisson, RegressionLoss};
use smrmom::linalg::orthonormality_error;
use smrmom::simulation::{gen_continuous, potential_outcomes};
use smrmom::{
    fit, fit_binary, fit_continuous, fit_full_simultaneous, fit_gsmr, fit_smr_mom, fit_spca, modified_outcome,
    BinaryProblem, ContinuousProblem, Estimator, FactorModel, FitResult, GlmProblem, Hyperparameters, OutcomeKind,
    OutcomeMatrix, ScenarioSpec, TreatmentAssignment, TrueParams,
};

use super::*;

pub const GRADIENT_INSTANCES: u64 = 20;
const H: f64 = 1e-5;

fn unpenalized(d: usize) -> Hyperparameters {
    Hyperparameters {
        lambda_a: 0.0,
        lambda_gamma: 0.0,
        omega: 0.3,
        d,
        ..Default::default()
    }
}

fn with_a(model: &FactorModel, a: &DMatrix<f64>) -> FactorModel {
    FactorModel {
        a: a.clone(),
        ..model.clone()
    }
}

fn with_gamma(model: &FactorModel, gamma: &DMatrix<f64>) -> FactorModel {
    FactorModel {
        gamma: gamma.clone(),
        ..model.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientFamily {
    Continuous,
    Binary,
    Multiclass,
    Poisson,
    /// Smooth part of the full model with main effects, `D` included.
    Full(OutcomeKind),
}

/// Largest relative error between analytic gradients and central differences
/// over every instance and block of `family`.
pub fn gradient_error(family: GradientFamily) -> f64 {
    (0..GRADIENT_INSTANCES)
        .map(|seed| gradient_error_at(family, seed))
        .fold(0.0, f64::max)
}

fn gradient_error_at(family: GradientFamily, seed: u64) -> f64 {
    match family {
        GradientFamily::Continuous => {
            let mut r = rng(100 + seed);
            let (n, m, p, d) = (12, 4, 3, 2);
            let prob =
                ContinuousProblem::new(problem(&mut r, n, m, p, OutcomeKind::Continuous), unpenalized(d)).unwrap();
            let model = model(&mut r, m + 1, d, p, 0.7);
            let f = |mm: &FactorModel| objective_continuous(&prob, mm).unwrap();
            let num_a = numeric_gradient(&model.a, H, |a| f(&with_a(&model, a)));
            let num_g = numeric_gradient(&model.gamma, H, |g| f(&with_gamma(&model, g)));
            relative_error(&grad_a_continuous(&prob, &model).unwrap(), &num_a)
                .max(relative_error(&grad_gamma_continuous(&prob, &model).unwrap(), &num_g))
        }
        GradientFamily::Binary => {
            let mut r = rng(200 + seed);
            let (n, m, p, d) = (15, 3, 2, 2);
            let prob = BinaryProblem::new(problem(&mut r, n, m, p, OutcomeKind::Binary), unpenalized(d)).unwrap();
            let model = model(&mut r, m + 1, d, p, 0.8);
            let f = |mm: &FactorModel| log_likelihood_binary(&prob, mm).unwrap();
            let num_a = numeric_gradient(&model.a, H, |a| f(&with_a(&model, a)));
            let analytic_a = DMatrix::from_columns(
                &(0..d)
                    .map(|k| grad_a_k_binary(&prob, &model, k).unwrap())
                    .collect::<Vec<_>>(),
            );
            let num_g = numeric_gradient(&model.gamma, H, |g| f(&with_gamma(&model, g)));
            let analytic_g = DMatrix::from_columns(
                &(0..p)
                    .map(|j| grad_gamma_j_binary(&prob, &model, j).unwrap())
                    .collect::<Vec<_>>(),
            );
            relative_error(&analytic_a, &num_a).max(relative_error(&analytic_g, &num_g))
        }
        GradientFamily::Multiclass | GradientFamily::Poisson => {
            let (kind, base, scale) = if family == GradientFamily::Multiclass {
                (OutcomeKind::Multiclass, 300, 0.8)
            } else {
                (OutcomeKind::Count, 400, 0.4)
            };
            let mut r = rng(base + seed);
            let (n, m, p, d) = (14, 3, 3, 2);
            let prob = GlmProblem::new(problem(&mut r, n, m, p, kind), unpenalized(d)).unwrap();
            let model = model(&mut r, m + 1, d, p, scale);
            let multiclass = kind == OutcomeKind::Multiclass;
            let f = |mm: &FactorModel| {
                if multiclass {
                    loss_multiclass(&prob, mm)
                } else {
                    loss_poisson(&prob, mm)
                }
                .unwrap()
            };
            let analytic = if multiclass {
                grad_multiclass(&prob, &model)
            } else {
                grad_poisson(&prob, &model)
            }
            .unwrap();
            let num_a = numeric_gradient(&model.a, H, |a| f(&with_a(&model, a)));
            let num_g = numeric_gradient(&model.gamma, H, |g| f(&with_gamma(&model, g)));
            relative_error(&analytic.a, &num_a).max(relative_error(&analytic.gamma, &num_g))
        }
        GradientFamily::Full(kind) => {
            let base = if kind == OutcomeKind::Binary { 600 } else { 500 };
            let mut r = rng(base + seed);
            let (n, m, p, d) = (12, 3, 2, 2);
            let prob = problem(&mut r, n, m, p, kind);
            let hyper = unpenalized(d);
            let model = model(&mut r, m + 1, d, p, 0.6);
            let main = normal(&mut r, m + 1, p, 0.4);
            let analytic = grad_full(&prob, &hyper, &model, &main).unwrap();
            let num_d = numeric_gradient(&main, H, |dm| smooth_full(&prob, &hyper, &model, dm).unwrap());
            let num_a = numeric_gradient(&model.a, H, |a| {
                smooth_full(&prob, &hyper, &with_a(&model, a), &main).unwrap()
            });
            let num_g = numeric_gradient(&model.gamma, H, |g| {
                smooth_full(&prob, &hyper, &with_gamma(&model, g), &main).unwrap()
            });
            relative_error(&analytic.d, &num_d)
                .max(relative_error(&analytic.a, &num_a))
                .max(relative_error(&analytic.gamma, &num_g))
        }
    }
}

/// Over 20 instances and 200 random orthonormal candidates each: the worst
/// `objective(Procrustes B) - objective(candidate)` and the worst
/// orthonormality error of the Procrustes update.
pub fn procrustes_versus_random() -> (f64, f64) {
    let mut worst_gap = f64::NEG_INFINITY;
    let mut worst_orth: f64 = 0.0;
    for seed in 0..20 {
        let mut r = rng(700 + seed);
        let (n, m, p, d) = (15, 5, 2, 3);
        let hyper = Hyperparameters {
            d,
            ..Default::default()
        };
        let prob = ContinuousProblem::new(problem(&mut r, n, m, p, OutcomeKind::Continuous), hyper).unwrap();
        let model = model(&mut r, m + 1, d, p, 1.0);
        let best = FactorModel {
            b: update_b(&prob, &model).unwrap(),
            ..model.clone()
        };
        worst_orth = worst_orth.max(orthonormality_error(&best.b));
        let optimum = objective_continuous(&prob, &best).unwrap();
        for _ in 0..200 {
            let q = normal(&mut r, m + 1, d, 1.0).qr().q();
            let candidate = FactorModel { b: q, ..model.clone() };
            worst_gap = worst_gap.max(optimum - objective_continuous(&prob, &candidate).unwrap());
        }
    }
    (worst_gap, worst_orth)
}

/// Largest `max |B'B - I|` recorded by any solver on small random problems:
/// every estimator for both outcome kinds, the GLM fits and sparse PCA.
pub fn solver_orthonormality_error() -> f64 {
    let hyper = Hyperparameters {
        d: 3,
        lambda_a: 0.05,
        lambda_gamma: 0.05,
        max_sweeps: 200,
        ..Default::default()
    };
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        for kind in [OutcomeKind::Continuous, OutcomeKind::Binary] {
            let prob = problem(&mut rng(800 + seed), 30, 6, 3, kind);
            for est in Estimator::ALL {
                let res = fit(est, &prob, &hyper, seed).unwrap();
                worst = worst
                    .max(res.max_orthonormality_error)
                    .max(orthonormality_error(&res.model.b));
            }
        }
        for (kind, loss) in [
            (OutcomeKind::Multiclass, RegressionLoss::Multinomial),
            (OutcomeKind::Count, RegressionLoss::Poisson),
        ] {
            let prob = GlmProblem::new(problem(&mut rng(900 + seed), 30, 6, 3, kind), hyper.clone()).unwrap();
            worst = worst.max(fit_gsmr(&prob, loss, None, seed).unwrap().max_orthonormality_error);
        }
        let spca = fit_spca(&design(&mut rng(950 + seed), 30, 6), 3, 0.05, 0.1).unwrap();
        worst = worst.max(spca.max_orthonormality_error);
    }
    worst
}

/// Noise-free draws of every setting: the largest deviation of the arm
/// average of the modified outcome from `X A_true Gamma_true`.
pub fn mom_identity_error() -> f64 {
    let mut worst: f64 = 0.0;
    for setting in 1..=4 {
        let spec = ScenarioSpec {
            sigma0: 0.0,
            ..ScenarioSpec::setting(setting).unwrap()
        };
        let truth = TrueParams::for_spec(&spec).unwrap();
        let seed = 40 + setting as u64;
        let (y_treated, y_control) = potential_outcomes(&spec, &truth, seed).unwrap();
        let treated = TreatmentAssignment::new(vec![1.0; spec.n]).unwrap();
        let z_treated = modified_outcome(&OutcomeMatrix::continuous(y_treated).unwrap(), &treated).unwrap();
        let z_control = modified_outcome(&OutcomeMatrix::continuous(y_control).unwrap(), &treated.flipped()).unwrap();
        let average = (z_treated + z_control) * 0.5;
        let draw = gen_continuous(&spec, &truth, seed).unwrap();
        let expected = draw.problem.x.values() * &truth.a_true * &truth.gamma_true;
        worst = worst.max((average - expected).amax());
    }
    worst
}

fn bits(m: &DMatrix<f64>) -> Vec<u64> {
    m.iter().map(|v| v.to_bits()).collect()
}

/// Same parameters, effects, trace and convergence flag, bit for bit.
pub fn bitwise_equal(a: &FitResult, b: &FitResult) -> bool {
    let trace = |r: &FitResult| r.objective_trace.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    bits(&a.model.a) == bits(&b.model.a)
        && bits(&a.model.b) == bits(&b.model.b)
        && bits(&a.model.gamma) == bits(&b.model.gamma)
        && bits(&a.effect) == bits(&b.effect)
        && trace(a) == trace(b)
        && a.converged == b.converged
}

pub fn reduction_hyper() -> Hyperparameters {
    Hyperparameters {
        d: 2,
        lambda_a: 0.05,
        lambda_gamma: 0.02,
        ..Default::default()
    }
}

/// GLM fits with the Gaussian (continuous) or Bernoulli (binary) loss equal
/// the dedicated solvers, from the default start and from a given one.
pub fn glm_reduces_bitwise(kind: OutcomeKind) -> bool {
    let base = if kind == OutcomeKind::Binary { 1200 } else { 1100 };
    (0..3).all(|seed| {
        let prob = problem(&mut rng(base + seed), 25, 5, 3, kind);
        let init = model(&mut rng(base + 50 + seed), 6, 2, 3, 0.3);
        let gp = GlmProblem::new(prob.clone(), reduction_hyper()).unwrap();
        for start in [None, Some(&init)] {
            let (glm, direct) = match kind {
                OutcomeKind::Binary => {
                    let bp = BinaryProblem::new(prob.clone(), reduction_hyper()).unwrap();
                    (
                        fit_gsmr(&gp, RegressionLoss::Bernoulli, start, seed),
                        fit_binary(&bp, start, seed),
                    )
                }
                _ => {
                    let cp = ContinuousProblem::new(prob.clone(), reduction_hyper()).unwrap();
                    (
                        fit_gsmr(&gp, RegressionLoss::Gaussian, start, seed),
                        fit_continuous(&cp, start, seed),
                    )
                }
            };
            if !bitwise_equal(&glm.unwrap(), &direct.unwrap()) {
                return false;
            }
        }
        true
    })
}

/// The full simultaneous model with an infinite main-effect penalty equals
/// SMR-MOM and keeps `D` at zero.
pub fn pinned_full_reduces_bitwise() -> bool {
    [OutcomeKind::Continuous, OutcomeKind::Binary].into_iter().all(|kind| {
        (0..3).all(|seed| {
            let prob = problem(&mut rng(1300 + seed), 25, 5, 3, kind);
            let pinned = Hyperparameters {
                lambda_d: Some(f64::INFINITY),
                ..reduction_hyper()
            };
            let full = fit_full_simultaneous(&prob, &pinned, seed).unwrap();
            let smr = fit_smr_mom(&prob, &reduction_hyper(), seed).unwrap();
            bitwise_equal(&full, &smr) && full.main_effect.as_ref().unwrap().iter().all(|v| *v == 0.0)
        })
    })
}
