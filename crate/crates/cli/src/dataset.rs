//! Trial data in CSV form: a header row, then one subject per row.

use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use smrmom::{build_design, OutcomeKind, OutcomeMatrix, Problem, TreatmentAssignment};

use crate::error::{CliError, Result};

/// Which columns hold covariates, outcomes and the treatment arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub covariates: Vec<String>,
    pub outcomes: Vec<String>,
    pub treatment: String,
    #[serde(default = "default_kind")]
    pub kind: OutcomeKind,
}

fn default_kind() -> OutcomeKind {
    OutcomeKind::Continuous
}

impl Schema {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("schema: {e}")))
    }

    fn validate(&self) -> Result<()> {
        if self.covariates.is_empty() {
            return Err(CliError::Usage("schema declares no covariate columns".into()));
        }
        if self.outcomes.is_empty() {
            return Err(CliError::Usage("schema declares no outcome columns".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialDataset {
    pub covariate_names: Vec<String>,
    pub outcome_names: Vec<String>,
    pub treatment_name: String,
    /// Raw covariates without the intercept column.
    pub covariates: DMatrix<f64>,
    pub treatment: TreatmentAssignment,
    pub outcomes: OutcomeMatrix,
}

impl TrialDataset {
    pub fn n(&self) -> usize {
        self.covariates.nrows()
    }

    pub fn problem(&self, standardize: bool) -> Result<Problem> {
        let x = build_design(&self.covariates, standardize)?;
        Ok(Problem::new(x, self.treatment.clone(), self.outcomes.clone())?)
    }

    /// CSV with the schema's columns, treatment coded `-1 / 1`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let header: Vec<&str> = self
            .covariate_names
            .iter()
            .map(String::as_str)
            .chain(std::iter::once(self.treatment_name.as_str()))
            .chain(self.outcome_names.iter().map(String::as_str))
            .collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for i in 0..self.n() {
            let row: Vec<String> = self
                .covariates
                .row(i)
                .iter()
                .chain(std::iter::once(&self.treatment.labels()[i]))
                .chain(self.outcomes.values().row(i).iter())
                .map(|v| v.to_string())
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn schema(&self) -> Schema {
        Schema {
            covariates: self.covariate_names.clone(),
            outcomes: self.outcome_names.clone(),
            treatment: self.treatment_name.clone(),
            kind: self.outcomes.kind(),
        }
    }
}

/// Reads a header row and numeric records; returns the header and the
/// requested columns as a matrix. Locations in errors are 1-based data rows.
pub fn read_columns<R: Read>(reader: R, columns: &[String]) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::Data(format!("header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut index = Vec::with_capacity(columns.len());
    for name in columns {
        let j = header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Data(format!("missing column '{name}'")))?;
        index.push(j);
    }
    let mut values = Vec::new();
    let mut rows = 0;
    for (r, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| CliError::Data(format!("row {}: {e}", r + 1)))?;
        for (name, &j) in columns.iter().zip(&index) {
            let cell = record.get(j).unwrap_or("");
            if cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan") {
                return Err(CliError::Data(format!(
                    "missing value at row {}, column '{name}'",
                    r + 1
                )));
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| CliError::Data(format!("non-numeric value '{cell}' at row {}, column '{name}'", r + 1)))?;
            if !v.is_finite() {
                return Err(CliError::Data(format!(
                    "non-finite value at row {}, column '{name}'",
                    r + 1
                )));
            }
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(CliError::Data("no data rows".into()));
    }
    Ok((header, DMatrix::from_row_slice(rows, columns.len(), &values)))
}

/// `{0, 1}` codes map to `{-1, +1}` with `1 -> +1`; `{-1, +1}` is kept.
pub fn map_treatment(codes: &[f64], column: &str) -> Result<TreatmentAssignment> {
    let binary = codes.contains(&0.0);
    let allowed: [f64; 2] = if binary { [0.0, 1.0] } else { [-1.0, 1.0] };
    if let Some(r) = codes.iter().position(|c| !allowed.contains(c)) {
        return Err(CliError::Data(format!(
            "treatment code {} at row {}, column '{column}' does not fit a {{0, 1}} or {{-1, 1}} coding",
            codes[r],
            r + 1
        )));
    }
    let t = if binary {
        TreatmentAssignment::from_binary_codes(codes)?
    } else {
        TreatmentAssignment::new(codes.to_vec())?
    };
    Ok(t)
}

fn check_outcomes(y: &DMatrix<f64>, names: &[String], kind: OutcomeKind) -> Result<()> {
    for i in 0..y.nrows() {
        for (j, name) in names.iter().enumerate() {
            let v = y[(i, j)];
            let bad = match kind {
                OutcomeKind::Binary | OutcomeKind::Multiclass => v != 0.0 && v != 1.0,
                OutcomeKind::Count => v < 0.0 || v.fract() != 0.0,
                OutcomeKind::Continuous => false,
            };
            if bad {
                return Err(CliError::Data(format!(
                    "invalid {kind} outcome {v} at row {}, column '{name}'",
                    i + 1
                )));
            }
        }
    }
    Ok(())
}

pub fn parse_csv<R: Read>(reader: R, schema: &Schema) -> Result<TrialDataset> {
    schema.validate()?;
    let mut columns = schema.covariates.clone();
    columns.push(schema.treatment.clone());
    columns.extend(schema.outcomes.iter().cloned());
    let (_, all) = read_columns(reader, &columns)?;
    let m = schema.covariates.len();
    let p = schema.outcomes.len();
    let covariates = all.columns(0, m).into_owned();
    let codes: Vec<f64> = all.column(m).iter().copied().collect();
    let treatment = map_treatment(&codes, &schema.treatment)?;
    let y = all.columns(m + 1, p).into_owned();
    check_outcomes(&y, &schema.outcomes, schema.kind)?;
    Ok(TrialDataset {
        covariate_names: schema.covariates.clone(),
        outcome_names: schema.outcomes.clone(),
        treatment_name: schema.treatment.clone(),
        covariates,
        treatment,
        outcomes: OutcomeMatrix::new(y, schema.kind)?,
    })
}

pub fn load_csv(path: &Path, schema: &Schema) -> Result<TrialDataset> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    parse_csv(file, schema)
}

/// Matrix with a header row; values printed at full precision.
pub fn matrix_csv(names: &[String], m: &DMatrix<f64>) -> String {
    let mut out = names.join(",");
    out.push('\n');
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}
