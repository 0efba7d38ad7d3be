//! Parameter containers, hyperparameters, fit results and prediction formulas.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{scale_rows, DesignMatrix, OutcomeKind, TreatmentAssignment};
use crate::error::{check_dims, Error, Result};

/// Loadings and latent coefficients of the structured regression.
///
/// `a` maps covariates (with intercept) to `d` components, `b` is the
/// orthonormal auxiliary loading of the reconstruction term and `gamma`
/// maps components to the `p` outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
}

impl FactorModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, gamma: DMatrix<f64>) -> Result<Self> {
        check_dims("auxiliary loading B", a.shape(), b.shape())?;
        if gamma.nrows() != a.ncols() {
            return Err(Error::DimensionMismatch {
                context: "latent coefficients",
                expected: format!("{} rows", a.ncols()),
                found: format!("{} rows", gamma.nrows()),
            });
        }
        Ok(Self { a, b, gamma })
    }

    pub fn zeros(m_plus_one: usize, d: usize, p: usize) -> Self {
        Self {
            a: DMatrix::zeros(m_plus_one, d),
            b: DMatrix::zeros(m_plus_one, d),
            gamma: DMatrix::zeros(d, p),
        }
    }

    /// Number of components.
    pub fn d(&self) -> usize {
        self.a.ncols()
    }

    pub fn p(&self) -> usize {
        self.gamma.ncols()
    }

    pub(crate) fn check_against(&self, x: &DesignMatrix, p: usize) -> Result<()> {
        check_dims("loading A", (x.m() + 1, self.d()), self.a.shape())?;
        check_dims("auxiliary loading B", self.a.shape(), self.b.shape())?;
        check_dims("latent coefficients", (self.d(), p), self.gamma.shape())
    }
}

/// Step-size policy of a proximal block update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    /// Backtracking line search.
    Auto,
    Fixed(f64),
}

impl Serialize for StepSize {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            StepSize::Auto => s.serialize_str("auto"),
            StepSize::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for StepSize {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(StepSize::Fixed(v)),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl std::str::FromStr for StepSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(StepSize::Auto);
        }
        s.parse::<f64>()
            .map(StepSize::Fixed)
            .map_err(|_| Error::InvalidHyperparameter(format!("step size '{s}'")))
    }
}

impl fmt::Display for StepSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepSize::Auto => f.write_str("auto"),
            StepSize::Fixed(v) => write!(f, "{v}"),
        }
    }
}

/// Threshold used by the soft-thresholding step after a gradient step of
/// length `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProxScaling {
    /// Threshold by `lambda`.
    #[default]
    Unscaled,
    /// Threshold by `alpha * lambda`, the proximal operator of `lambda * |.|_1`.
    Standard,
}

impl ProxScaling {
    pub fn threshold(self, alpha: f64, lambda: f64) -> f64 {
        match self {
            ProxScaling::Unscaled => lambda,
            ProxScaling::Standard => alpha * lambda,
        }
    }
}

impl std::str::FromStr for ProxScaling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unscaled" => Ok(Self::Unscaled),
            "standard" => Ok(Self::Standard),
            other => Err(Error::InvalidHyperparameter(format!("prox scaling '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparameters {
    /// Weight of the reconstruction term.
    pub omega: f64,
    pub lambda_a: f64,
    pub lambda_gamma: f64,
    /// Penalty on main-effect coefficients; `None` reuses `lambda_gamma`.
    pub lambda_d: Option<f64>,
    pub d: usize,
    pub step_a: StepSize,
    pub step_gamma: StepSize,
    pub max_sweeps: usize,
    pub tol: f64,
    pub prox_scaling: ProxScaling,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            omega: 0.1,
            lambda_a: 0.1,
            lambda_gamma: 0.1,
            lambda_d: None,
            d: 1,
            step_a: StepSize::Auto,
            step_gamma: StepSize::Auto,
            max_sweeps: 1000,
            tol: 1e-6,
            prox_scaling: ProxScaling::Unscaled,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidHyperparameter(msg));
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return bad(format!("omega must be positive, got {}", self.omega));
        }
        if !(self.lambda_a >= 0.0) {
            return bad(format!("lambda_a must be nonnegative, got {}", self.lambda_a));
        }
        if !(self.lambda_gamma >= 0.0) {
            return bad(format!("lambda_gamma must be nonnegative, got {}", self.lambda_gamma));
        }
        if let Some(ld) = self.lambda_d {
            if !(ld >= 0.0) {
                return bad(format!("lambda_d must be nonnegative, got {ld}"));
            }
        }
        if !(self.tol > 0.0) {
            return bad(format!("tol must be positive, got {}", self.tol));
        }
        if self.d == 0 {
            return bad("d must be at least 1".into());
        }
        if self.max_sweeps == 0 {
            return bad("max_sweeps must be at least 1".into());
        }
        for step in [self.step_a, self.step_gamma] {
            if let StepSize::Fixed(v) = step {
                if !(v > 0.0 && v.is_finite()) {
                    return bad(format!("fixed step sizes must be positive, got {v}"));
                }
            }
        }
        Ok(())
    }

    /// `d <= m` check against a design.
    pub fn validate_for(&self, x: &DesignMatrix) -> Result<()> {
        self.validate()?;
        if self.d > x.m() {
            return Err(Error::InvalidHyperparameter(format!(
                "d = {} exceeds the covariate count m = {}",
                self.d,
                x.m()
            )));
        }
        Ok(())
    }

    pub fn effective_lambda_d(&self) -> f64 {
        self.lambda_d.unwrap_or(self.lambda_gamma)
    }
}

/// Which estimator produced a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    FullTandem,
    FullSimultaneous,
    MomTandem,
    SmrMom,
}

impl Estimator {
    /// Table order.
    pub const ALL: [Estimator; 4] = [
        Estimator::FullTandem,
        Estimator::FullSimultaneous,
        Estimator::MomTandem,
        Estimator::SmrMom,
    ];

    pub fn label(self, kind: OutcomeKind) -> &'static str {
        match (self, kind) {
            (Estimator::FullTandem, _) => "Full-Tandem",
            (Estimator::FullSimultaneous, _) => "Full-Simultaneous",
            (Estimator::MomTandem, _) => "MOM-Tandem",
            (Estimator::SmrMom, OutcomeKind::Binary) => "SMLR-MOM",
            (Estimator::SmrMom, _) => "SMR-MOM",
        }
    }

    pub fn is_simultaneous(self) -> bool {
        matches!(self, Estimator::FullSimultaneous | Estimator::SmrMom)
    }

    pub fn has_main_effect(self) -> bool {
        matches!(self, Estimator::FullTandem | Estimator::FullSimultaneous)
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Estimator::FullTandem => "full-tandem",
            Estimator::FullSimultaneous => "full-simultaneous",
            Estimator::MomTandem => "mom-tandem",
            Estimator::SmrMom => "smr-mom",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full-tandem" => Ok(Self::FullTandem),
            "full-simultaneous" => Ok(Self::FullSimultaneous),
            "mom-tandem" => Ok(Self::MomTandem),
            "smr-mom" | "smlr-mom" | "gsmr-mom" => Ok(Self::SmrMom),
            other => Err(Error::InvalidInput(format!("unknown estimator '{other}'"))),
        }
    }
}

/// Outcome of a fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub estimator: Estimator,
    pub kind: OutcomeKind,
    pub model: FactorModel,
    /// Main-effect coefficients of the low-rank full model.
    pub main_effect: Option<DMatrix<f64>>,
    pub hyper: Hyperparameters,
    pub seed: u64,
    /// Objective at the initial point followed by one value per sweep.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    /// Largest `max |B'B - I|` observed after any `B` update.
    pub max_orthonormality_error: f64,
    /// Estimated treatment effects `X A Gamma` on the training design.
    pub effect: DMatrix<f64>,
    pub metadata: BTreeMap<String, String>,
}

impl FitResult {
    pub fn sweeps(&self) -> usize {
        self.objective_trace.len().saturating_sub(1)
    }

    /// Largest increase between consecutive trace entries (zero when the
    /// trace is nonincreasing).
    pub fn max_trace_increase(&self) -> f64 {
        self.objective_trace.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }
}

/// Soft-thresholding: `sign(v) * max(|v| - lambda, 0)`; ties shrink to zero.
pub fn soft_threshold(v: f64, lambda: f64) -> f64 {
    if v.abs() <= lambda {
        0.0
    } else if v > 0.0 {
        v - lambda
    } else {
        v + lambda
    }
}

/// Logistic function evaluated without overflow.
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` evaluated without overflow.
pub fn log1p_exp(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Treatment effects `X A Gamma`; row `i` is `Gamma' A' x_i`.
pub fn treatment_effect(x: &DesignMatrix, model: &FactorModel) -> Result<DMatrix<f64>> {
    model.check_against(x, model.p())?;
    Ok(x.values() * (&model.a * &model.gamma))
}

fn check_treatment(x: &DesignMatrix, t: &TreatmentAssignment) -> Result<()> {
    if x.n() != t.len() {
        return Err(Error::DimensionMismatch {
            context: "treatment labels",
            expected: format!("{}", x.n()),
            found: format!("{}", t.len()),
        });
    }
    Ok(())
}

/// Conditional mean of continuous outcomes, `(1/2) T X A Gamma`.
pub fn predict_continuous(x: &DesignMatrix, t: &TreatmentAssignment, model: &FactorModel) -> Result<DMatrix<f64>> {
    check_treatment(x, t)?;
    let effect = treatment_effect(x, model)?;
    Ok(scale_rows(&effect, t.labels(), 0.5))
}

/// `P(Y_ij = 1)` under the logistic model with logit `t_i (X A Gamma)_ij / 2`.
pub fn predict_binary_prob(x: &DesignMatrix, t: &TreatmentAssignment, model: &FactorModel) -> Result<DMatrix<f64>> {
    check_treatment(x, t)?;
    let mut z = scale_rows(&treatment_effect(x, model)?, t.labels(), 0.5);
    z.apply(|v| *v = logistic(*v));
    Ok(z)
}
