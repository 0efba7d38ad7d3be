//! Sparse latent-variable estimation of treatment effects on multiple
//! outcomes in two-arm randomized trials.
//!
//! The treatment effect of subject `i` on the `p` outcomes is modeled as
//! `Gamma' A' x_i`: a sparse loading matrix `A` maps covariates to `d`
//! components, and sparse coefficients `Gamma` map components to outcomes.
//! Fits regress the modified outcome `2 t_i y_i` (or its likelihood analogue
//! for binary, multiclass and count outcomes) on the components while a PCA
//! reconstruction term keeps the components faithful to the covariates.

// `!(x >= 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod binary;
pub mod continuous;
pub mod data;
pub mod diagram;
pub(crate) mod engine;
pub mod error;
pub mod glm;
pub mod linalg;
pub mod loss;
pub mod model;
pub mod selection;
pub mod simulation;

pub use baselines::{fit, fit_full_simultaneous, fit_full_tandem, fit_mom_tandem, fit_smr_mom, fit_spca};
pub use binary::{fit_binary, BinaryProblem};
pub use continuous::{fit_continuous, ContinuousProblem};
pub use data::{
    build_design, modified_outcome, DesignMatrix, OutcomeKind, OutcomeMatrix, Problem, Standardization,
    TreatmentAssignment,
};
pub use diagram::{export_path_diagram, DiagramNames, DiagramOptions, PathDiagram};
pub use error::{Error, Result};
pub use glm::{fit_gsmr, GlmProblem};
pub use loss::RegressionLoss;
pub use model::{
    predict_binary_prob, predict_continuous, soft_threshold, treatment_effect, Estimator, FactorModel, FitResult,
    Hyperparameters, ProxScaling, StepSize,
};
pub use selection::{cv_score, kfold_split, select_lambdas, CvPlan, Selection};
pub use simulation::{
    run_benchmark, run_scenario, BenchmarkConfig, BenchmarkReport, LambdaSelection, ScenarioSpec, TrueParams,
};
