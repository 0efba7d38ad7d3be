//! Versioned JSON persistence of fits.
//!
//! Matrices are stored as arrays of rows. Floats are written in shortest
//! round-trip form, so loading a saved fit restores every value bit for bit.
//! Scalars that may be infinite (penalties, trace entries) are written as the
//! strings `"inf"`, `"-inf"` or `"nan"` when not finite.
//!
//! Optional fields and their defaults when absent: `D` (no main effect),
//! `max_orthonormality_error` (0), `metadata` (empty), `covariate_names` and
//! `outcome_names` (generated names), `standardization` (none).

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use smrmom::{Estimator, FactorModel, FitResult, Hyperparameters, OutcomeKind, ProxScaling, Standardization, StepSize};

use crate::error::{CliError, Result};

pub const FORMAT_VERSION: u32 = 1;

/// A float that survives JSON even when infinite or NaN.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Real(f64);

impl Serialize for Real {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let v = self.0;
        if v.is_finite() {
            s.serialize_f64(v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }
}

impl<'de> Deserialize<'de> for Real {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Real(v)),
            Raw::Str(s) => match s.as_str() {
                "inf" => Ok(Real(f64::INFINITY)),
                "-inf" => Ok(Real(f64::NEG_INFINITY)),
                "nan" => Ok(Real(f64::NAN)),
                other => Err(serde::de::Error::custom(format!("'{other}' is not a number"))),
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct HyperFile {
    omega: Real,
    lambda_a: Real,
    lambda_gamma: Real,
    #[serde(default)]
    lambda_d: Option<Real>,
    d: usize,
    step_a: StepSize,
    step_gamma: StepSize,
    max_sweeps: usize,
    tol: Real,
    #[serde(default)]
    prox_scaling: ProxScaling,
}

impl From<&Hyperparameters> for HyperFile {
    fn from(h: &Hyperparameters) -> Self {
        Self {
            omega: Real(h.omega),
            lambda_a: Real(h.lambda_a),
            lambda_gamma: Real(h.lambda_gamma),
            lambda_d: h.lambda_d.map(Real),
            d: h.d,
            step_a: h.step_a,
            step_gamma: h.step_gamma,
            max_sweeps: h.max_sweeps,
            tol: Real(h.tol),
            prox_scaling: h.prox_scaling,
        }
    }
}

impl From<HyperFile> for Hyperparameters {
    fn from(h: HyperFile) -> Self {
        Self {
            omega: h.omega.0,
            lambda_a: h.lambda_a.0,
            lambda_gamma: h.lambda_gamma.0,
            lambda_d: h.lambda_d.map(|r| r.0),
            d: h.d,
            step_a: h.step_a,
            step_gamma: h.step_gamma,
            max_sweeps: h.max_sweeps,
            tol: h.tol.0,
            prox_scaling: h.prox_scaling,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FitFile {
    version: u32,
    estimator: Estimator,
    kind: OutcomeKind,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    #[serde(rename = "Gamma")]
    gamma: Vec<Vec<f64>>,
    #[serde(rename = "D", default, skip_serializing_if = "Option::is_none")]
    d: Option<Vec<Vec<f64>>>,
    hyper: HyperFile,
    seed: u64,
    trace: Vec<Real>,
    converged: bool,
    #[serde(default)]
    max_orthonormality_error: f64,
    effect: Vec<Vec<f64>>,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    covariate_names: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    outcome_names: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    standardization: Option<Standardization>,
}

/// A fit plus what is needed to apply it to new raw covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedFit {
    pub result: FitResult,
    /// Names of the raw covariate columns, intercept excluded.
    pub covariate_names: Option<Vec<String>>,
    pub outcome_names: Option<Vec<String>>,
    pub standardization: Option<Standardization>,
}

impl SavedFit {
    pub fn bare(result: FitResult) -> Self {
        Self {
            result,
            covariate_names: None,
            outcome_names: None,
            standardization: None,
        }
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(CliError::Data(format!("fit file: ragged rows in {name}")));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub fn fit_to_json(saved: &SavedFit) -> String {
    let r = &saved.result;
    let file = FitFile {
        version: FORMAT_VERSION,
        estimator: r.estimator,
        kind: r.kind,
        a: rows(&r.model.a),
        b: rows(&r.model.b),
        gamma: rows(&r.model.gamma),
        d: r.main_effect.as_ref().map(rows),
        hyper: HyperFile::from(&r.hyper),
        seed: r.seed,
        trace: r.objective_trace.iter().copied().map(Real).collect(),
        converged: r.converged,
        max_orthonormality_error: r.max_orthonormality_error,
        effect: rows(&r.effect),
        metadata: r.metadata.clone(),
        covariate_names: saved.covariate_names.clone(),
        outcome_names: saved.outcome_names.clone(),
        standardization: saved.standardization.clone(),
    };
    let mut text = serde_json::to_string_pretty(&file).expect("fit file serializes");
    text.push('\n');
    text
}

pub fn fit_from_json(text: &str) -> Result<SavedFit> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| CliError::Data(format!("corrupt fit file: {e}")))?;
    match value.get("version").and_then(serde_json::Value::as_u64) {
        Some(v) if v == FORMAT_VERSION as u64 => {}
        Some(v) => {
            return Err(CliError::Data(format!(
                "unsupported fit file version {v}, expected {FORMAT_VERSION}"
            )))
        }
        None => return Err(CliError::Data("fit file has no version field".into())),
    }
    let file: FitFile = serde_json::from_value(value).map_err(|e| CliError::Data(format!("corrupt fit file: {e}")))?;
    let model = FactorModel::new(
        matrix("A", &file.a)?,
        matrix("B", &file.b)?,
        matrix("Gamma", &file.gamma)?,
    )?;
    let main_effect = file.d.as_deref().map(|d| matrix("D", d)).transpose()?;
    let result = FitResult {
        estimator: file.estimator,
        kind: file.kind,
        model,
        main_effect,
        hyper: file.hyper.into(),
        seed: file.seed,
        objective_trace: file.trace.into_iter().map(|r| r.0).collect(),
        converged: file.converged,
        max_orthonormality_error: file.max_orthonormality_error,
        effect: matrix("effect", &file.effect)?,
        metadata: file.metadata,
    };
    Ok(SavedFit {
        result,
        covariate_names: file.covariate_names,
        outcome_names: file.outcome_names,
        standardization: file.standardization,
    })
}

pub fn save_fit(saved: &SavedFit, path: &Path) -> Result<()> {
    std::fs::write(path, fit_to_json(saved)).map_err(|e| CliError::io(path, e))
}

pub fn load_fit(path: &Path) -> Result<SavedFit> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    fit_from_json(&text)
}
