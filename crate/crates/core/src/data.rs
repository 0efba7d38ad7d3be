//! Trial data containers: covariate design, treatment labels and outcomes.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};

/// Covariate matrix with a leading intercept column of ones.
///
/// Rows are subjects, columns are `(1, x_1, ..., x_m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    values: DMatrix<f64>,
    standardization: Option<Standardization>,
}

/// Column centers and scales applied by [`build_design`].
///
/// Columns whose sample variance is zero are left untouched and listed in
/// `constant_columns` (indices into the raw, intercept-free matrix).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
    pub constant_columns: Vec<usize>,
}

impl Standardization {
    /// Divisor used for the sample variance.
    pub const VARIANCE_DIVISOR: &'static str = "n-1";

    /// Applies the stored transform to new raw covariates.
    pub fn apply(&self, raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if raw.ncols() != self.center.len() {
            return Err(Error::DimensionMismatch {
                context: "standardization",
                expected: format!("{} columns", self.center.len()),
                found: format!("{} columns", raw.ncols()),
            });
        }
        let mut out = raw.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            for v in col.iter_mut() {
                *v = (*v - self.center[j]) / self.scale[j];
            }
        }
        Ok(out)
    }
}

impl DesignMatrix {
    /// Wraps a matrix that already carries the intercept column.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 {
            return Err(Error::InvalidInput("design matrix has zero rows".into()));
        }
        if values.ncols() < 2 {
            return Err(Error::InvalidInput(
                "design matrix needs an intercept and at least one covariate".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("design matrix"));
        }
        if values.column(0).iter().any(|&v| v != 1.0) {
            return Err(Error::InvalidInput(
                "first design column must be the all-ones intercept".into(),
            ));
        }
        Ok(Self {
            values,
            standardization: None,
        })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// Number of subjects.
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    /// Number of covariates, excluding the intercept.
    pub fn m(&self) -> usize {
        self.values.ncols() - 1
    }

    pub fn standardization(&self) -> Option<&Standardization> {
        self.standardization.as_ref()
    }

    /// Keeps the listed rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            values: self.values.select_rows(rows.iter()),
            standardization: self.standardization.clone(),
        }
    }
}

/// Prepends the intercept column and optionally standardizes covariates.
///
/// Standardization centers each column and divides by the sample standard
/// deviation (divisor `n - 1`). Constant columns are kept as-is and flagged.
pub fn build_design(raw: &DMatrix<f64>, standardize: bool) -> Result<DesignMatrix> {
    let (n, m) = raw.shape();
    if n == 0 {
        return Err(Error::InvalidInput("covariate matrix has zero rows".into()));
    }
    if m == 0 {
        return Err(Error::InvalidInput("covariate matrix has zero columns".into()));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("covariates"));
    }
    let mut covariates = raw.clone();
    let mut standardization = None;
    if standardize {
        if n < 2 {
            return Err(Error::InvalidInput(
                "standardization needs at least two rows (zero sample variance)".into(),
            ));
        }
        let mut center = Vec::with_capacity(m);
        let mut scale = Vec::with_capacity(m);
        let mut constant_columns = Vec::new();
        for j in 0..m {
            let col = raw.column(j);
            let mean = col.mean();
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            if var > 0.0 {
                center.push(mean);
                scale.push(var.sqrt());
            } else {
                center.push(0.0);
                scale.push(1.0);
                constant_columns.push(j);
            }
        }
        let s = Standardization {
            center,
            scale,
            constant_columns,
        };
        covariates = s.apply(raw)?;
        standardization = Some(s);
    }
    let mut values = DMatrix::from_element(n, m + 1, 1.0);
    values.columns_mut(1, m).copy_from(&covariates);
    Ok(DesignMatrix {
        values,
        standardization,
    })
}

/// Treatment labels coded `+1` (test therapy) and `-1` (control).
#[derive(Debug, Clone, PartialEq)]
pub struct TreatmentAssignment {
    labels: DVector<f64>,
}

impl TreatmentAssignment {
    pub fn new(labels: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = labels.iter().enumerate().find(|(_, &v)| v != 1.0 && v != -1.0) {
            return Err(Error::InvalidInput(format!(
                "treatment label {v} at position {i} is not -1 or +1"
            )));
        }
        Ok(Self {
            labels: DVector::from_vec(labels),
        })
    }

    /// Maps a `{0, 1}` coding onto `{-1, +1}` with `1 -> +1`.
    pub fn from_binary_codes(codes: &[f64]) -> Result<Self> {
        let labels = codes
            .iter()
            .enumerate()
            .map(|(i, &c)| match c {
                1.0 => Ok(1.0),
                0.0 => Ok(-1.0),
                other => Err(Error::InvalidInput(format!(
                    "treatment code {other} at position {i} is not 0 or 1"
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(labels)
    }

    pub fn labels(&self) -> &DVector<f64> {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Negates every label.
    pub fn flipped(&self) -> Self {
        Self { labels: -&self.labels }
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            labels: self.labels.select_rows(rows.iter()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeKind {
    Continuous,
    Binary,
    Multiclass,
    Count,
}

impl fmt::Display for OutcomeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            OutcomeKind::Continuous => "continuous",
            OutcomeKind::Binary => "binary",
            OutcomeKind::Multiclass => "multiclass",
            OutcomeKind::Count => "count",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for OutcomeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "continuous" => Ok(Self::Continuous),
            "binary" => Ok(Self::Binary),
            "multiclass" => Ok(Self::Multiclass),
            "count" => Ok(Self::Count),
            other => Err(Error::InvalidInput(format!("unknown outcome kind '{other}'"))),
        }
    }
}

/// n x p outcome matrix tagged with its kind.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeMatrix {
    values: DMatrix<f64>,
    kind: OutcomeKind,
}

impl OutcomeMatrix {
    pub fn new(values: DMatrix<f64>, kind: OutcomeKind) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("outcomes"));
        }
        match kind {
            OutcomeKind::Continuous => {}
            OutcomeKind::Binary => {
                if let Some(v) = values.iter().find(|&&v| v != 0.0 && v != 1.0) {
                    return Err(Error::InvalidInput(format!("binary outcome value {v} is not 0 or 1")));
                }
            }
            OutcomeKind::Multiclass => {
                for (i, row) in values.row_iter().enumerate() {
                    let ones = row.iter().filter(|&&v| v == 1.0).count();
                    let zeros = row.iter().filter(|&&v| v == 0.0).count();
                    if ones != 1 || ones + zeros != row.len() {
                        return Err(Error::InvalidInput(format!(
                            "multiclass outcome row {i} is not one-hot"
                        )));
                    }
                }
            }
            OutcomeKind::Count => {
                if let Some(v) = values.iter().find(|&&v| v < 0.0 || v.fract() != 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "count outcome value {v} is not a nonnegative integer"
                    )));
                }
            }
        }
        Ok(Self { values, kind })
    }

    pub fn continuous(values: DMatrix<f64>) -> Result<Self> {
        Self::new(values, OutcomeKind::Continuous)
    }

    pub fn binary(values: DMatrix<f64>) -> Result<Self> {
        Self::new(values, OutcomeKind::Binary)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn kind(&self) -> OutcomeKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            values: self.values.select_rows(rows.iter()),
            kind: self.kind,
        }
    }
}

/// Returns `2 T Y`: row `i` of `Y` scaled by `2 t_i`.
pub fn modified_outcome(y: &OutcomeMatrix, t: &TreatmentAssignment) -> Result<DMatrix<f64>> {
    if y.kind() != OutcomeKind::Continuous {
        return Err(Error::KindMismatch {
            expected: OutcomeKind::Continuous.to_string(),
            found: y.kind().to_string(),
        });
    }
    if y.n() != t.len() {
        return Err(Error::DimensionMismatch {
            context: "modified_outcome",
            expected: format!("{} treatment labels", y.n()),
            found: format!("{}", t.len()),
        });
    }
    Ok(scale_rows(y.values(), t.labels(), 2.0))
}

/// `diag(factor * t) * m`.
pub(crate) fn scale_rows(m: &DMatrix<f64>, t: &DVector<f64>, factor: f64) -> DMatrix<f64> {
    let mut out = m.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row *= factor * t[i];
    }
    out
}

/// A complete trial dataset ready for fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub x: DesignMatrix,
    pub t: TreatmentAssignment,
    pub y: OutcomeMatrix,
}

impl Problem {
    pub fn new(x: DesignMatrix, t: TreatmentAssignment, y: OutcomeMatrix) -> Result<Self> {
        if t.len() != x.n() {
            return Err(Error::DimensionMismatch {
                context: "treatment labels",
                expected: format!("{}", x.n()),
                found: format!("{}", t.len()),
            });
        }
        check_dims("outcome rows", (x.n(), y.p()), (y.n(), y.p()))?;
        Ok(Self { x, t, y })
    }

    pub fn n(&self) -> usize {
        self.x.n()
    }

    pub fn m(&self) -> usize {
        self.x.m()
    }

    pub fn p(&self) -> usize {
        self.y.p()
    }

    pub fn kind(&self) -> OutcomeKind {
        self.y.kind()
    }

    /// Restricts the problem to a subset of subjects.
    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(rows),
            t: self.t.select(rows),
            y: self.y.select_rows(rows),
        }
    }
}
