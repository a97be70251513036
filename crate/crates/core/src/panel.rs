//! Two-period, two-group panel data: domain types, CSV ingestion and
//! covariate feature expansion.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Outcome family of a panel. Count outcomes must be non-negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeFamily {
    #[default]
    Count,
    Continuous,
}

/// One unit observed before and after the intervention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelUnit {
    pub id: String,
    pub y_before: f64,
    pub y_after: f64,
    pub treated: bool,
    pub covariates: Vec<f64>,
}

/// A validated two-group panel. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelDataset {
    units: Vec<PanelUnit>,
    covariate_names: Vec<String>,
    outcome_family: OutcomeFamily,
    n_treated: usize,
    n_control: usize,
}

impl PanelDataset {
    /// Validates and builds a dataset.
    pub fn new(
        units: Vec<PanelUnit>,
        covariate_names: Vec<String>,
        outcome_family: OutcomeFamily,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        for name in &covariate_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::SchemaViolation(format!(
                    "duplicate covariate name `{name}`"
                )));
            }
        }
        let p = covariate_names.len();
        for unit in &units {
            if unit.covariates.len() != p {
                return Err(Error::SchemaViolation(format!(
                    "unit `{}` has {} covariates, expected {p}",
                    unit.id,
                    unit.covariates.len()
                )));
            }
            if !unit.y_before.is_finite() || !unit.y_after.is_finite() {
                return Err(Error::SchemaViolation(format!(
                    "unit `{}` has a non-finite outcome",
                    unit.id
                )));
            }
            if let Some(x) = unit.covariates.iter().find(|x| !x.is_finite()) {
                return Err(Error::SchemaViolation(format!(
                    "unit `{}` has non-finite covariate value {x}",
                    unit.id
                )));
            }
            if outcome_family == OutcomeFamily::Count && (unit.y_before < 0.0 || unit.y_after < 0.0)
            {
                return Err(Error::SchemaViolation(format!(
                    "unit `{}` has a negative count outcome",
                    unit.id
                )));
            }
        }
        let n_treated = units.iter().filter(|u| u.treated).count();
        let n_control = units.len() - n_treated;
        if n_treated == 0 || n_control == 0 {
            return Err(Error::DegenerateDesign {
                n_treated,
                n_control,
            });
        }
        Ok(Self {
            units,
            covariate_names,
            outcome_family,
            n_treated,
            n_control,
        })
    }

    /// Builds a dataset from parallel column vectors; ids are the row numbers.
    pub fn from_columns(
        y_before: &[f64],
        y_after: &[f64],
        treated: &[bool],
        covariates: &[(&str, &[f64])],
        outcome_family: OutcomeFamily,
    ) -> Result<Self> {
        let n = y_before.len();
        if y_after.len() != n || treated.len() != n || covariates.iter().any(|(_, c)| c.len() != n)
        {
            return Err(Error::DimensionMismatch(
                "all columns must have the same length".into(),
            ));
        }
        let units = (0..n)
            .map(|i| PanelUnit {
                id: i.to_string(),
                y_before: y_before[i],
                y_after: y_after[i],
                treated: treated[i],
                covariates: covariates.iter().map(|(_, c)| c[i]).collect(),
            })
            .collect();
        let names = covariates.iter().map(|(n, _)| n.to_string()).collect();
        Self::new(units, names, outcome_family)
    }

    pub fn units(&self) -> &[PanelUnit] {
        &self.units
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn outcome_family(&self) -> OutcomeFamily {
        self.outcome_family
    }

    /// Total number of units, N.
    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn n_treated(&self) -> usize {
        self.n_treated
    }

    pub fn n_control(&self) -> usize {
        self.n_control
    }

    /// Sample treated share N₁/N.
    pub fn treated_share(&self) -> f64 {
        self.n_treated as f64 / self.len() as f64
    }

    pub fn covariate_index(&self, name: &str) -> Result<usize> {
        self.covariate_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    pub fn covariate(&self, name: &str) -> Result<Vec<f64>> {
        let j = self.covariate_index(name)?;
        Ok(self.units.iter().map(|u| u.covariates[j]).collect())
    }

    pub fn y_before(&self) -> Vec<f64> {
        self.units.iter().map(|u| u.y_before).collect()
    }

    pub fn y_after(&self) -> Vec<f64> {
        self.units.iter().map(|u| u.y_after).collect()
    }

    /// Group indicator as 0/1 reals.
    pub fn treatment_labels(&self) -> Vec<f64> {
        self.units
            .iter()
            .map(|u| if u.treated { 1.0 } else { 0.0 })
            .collect()
    }

    pub fn control_indices(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| !self.units[i].treated)
            .collect()
    }

    pub fn treated_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.units[i].treated).collect()
    }

    /// Dataset made of the given rows, in order, repeats allowed.
    pub fn resample(&self, indices: &[usize]) -> Result<Self> {
        let units = indices
            .iter()
            .map(|&i| {
                self.units
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::InvalidArgument(format!("row index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(units, self.covariate_names.clone(), self.outcome_family)
    }
}

/// Column roles for CSV ingestion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    /// Unit identifier column; row numbers are used when absent.
    pub id: Option<String>,
    pub treatment: String,
    pub before: String,
    pub after: String,
    pub covariates: Vec<String>,
}

/// What to do with rows that have a missing value in a mapped column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    #[default]
    Strict,
    Lenient,
}

/// A loaded dataset plus the number of rows dropped for missing values.
#[derive(Debug, Clone)]
pub struct LoadedPanel {
    pub dataset: PanelDataset,
    pub dropped_rows: usize,
}

fn is_missing(field: &str) -> bool {
    matches!(
        field.trim(),
        "" | "NA" | "na" | "NaN" | "nan" | "null" | "NULL" | "."
    )
}

/// Reads a panel from a CSV file.
pub fn load_csv(
    path: impl AsRef<Path>,
    schema: &CsvSchema,
    family: OutcomeFamily,
    missing: MissingPolicy,
) -> Result<LoadedPanel> {
    let file = std::fs::File::open(path.as_ref())
        .map_err(|e| Error::MalformedFile(format!("{}: {e}", path.as_ref().display())))?;
    read_csv(file, schema, family, missing)
}

/// Reads a panel from any CSV source with a header row.
pub fn read_csv<R: Read>(
    reader: R,
    schema: &CsvSchema,
    family: OutcomeFamily,
    missing: MissingPolicy,
) -> Result<LoadedPanel> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::MalformedFile(e.to_string()))?
        .clone();
    let locate = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::SchemaViolation(format!("missing column `{name}`")))
    };
    let id_col = schema.id.as_deref().map(locate).transpose()?;
    let g_col = locate(&schema.treatment)?;
    let before_col = locate(&schema.before)?;
    let after_col = locate(&schema.after)?;
    let cov_cols = schema
        .covariates
        .iter()
        .map(|c| locate(c))
        .collect::<Result<Vec<_>>>()?;

    let mut units = Vec::new();
    let mut dropped = 0usize;
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::MalformedFile(e.to_string()))?;
        let line = row + 2;
        let mapped = [g_col, before_col, after_col]
            .into_iter()
            .chain(cov_cols.iter().copied());
        let mut has_missing = false;
        for col in mapped {
            if is_missing(record.get(col).unwrap_or("")) {
                has_missing = true;
                break;
            }
        }
        if has_missing {
            match missing {
                MissingPolicy::Strict => {
                    return Err(Error::SchemaViolation(format!(
                        "missing value on line {line}"
                    )))
                }
                MissingPolicy::Lenient => {
                    dropped += 1;
                    continue;
                }
            }
        }
        let number = |col: usize, name: &str| -> Result<f64> {
            let raw = record.get(col).unwrap_or("");
            raw.parse::<f64>().map_err(|_| {
                Error::SchemaViolation(format!(
                    "non-numeric value `{raw}` in column `{name}` on line {line}"
                ))
            })
        };
        let g = number(g_col, &schema.treatment)?;
        let treated = if g == 1.0 {
            true
        } else if g == 0.0 {
            false
        } else {
            return Err(Error::SchemaViolation(format!(
                "treatment column `{}` has non-binary value {g} on line {line}",
                schema.treatment
            )));
        };
        let y_before = number(before_col, &schema.before)?;
        let y_after = number(after_col, &schema.after)?;
        if family == OutcomeFamily::Count && (y_before < 0.0 || y_after < 0.0) {
            return Err(Error::SchemaViolation(format!(
                "negative count outcome on line {line}"
            )));
        }
        let covariates = cov_cols
            .iter()
            .zip(&schema.covariates)
            .map(|(&c, name)| number(c, name))
            .collect::<Result<Vec<_>>>()?;
        let id = match id_col {
            Some(c) => record.get(c).unwrap_or("").to_string(),
            None => (row + 1).to_string(),
        };
        units.push(PanelUnit {
            id,
            y_before,
            y_after,
            treated,
            covariates,
        });
    }
    let dataset = PanelDataset::new(units, schema.covariates.clone(), family)?;
    Ok(LoadedPanel {
        dataset,
        dropped_rows: dropped,
    })
}

/// Writes a dataset using the column names of `schema`.
pub fn write_csv<W: Write>(data: &PanelDataset, schema: &CsvSchema, writer: W) -> Result<()> {
    if schema.covariates.len() != data.covariate_names().len() {
        return Err(Error::DimensionMismatch(
            "schema covariate count differs from dataset".into(),
        ));
    }
    let mut wtr = csv::Writer::from_writer(writer);
    let id = schema.id.clone().unwrap_or_else(|| "id".to_string());
    let mut header = vec![
        id,
        schema.treatment.clone(),
        schema.before.clone(),
        schema.after.clone(),
    ];
    header.extend(schema.covariates.iter().cloned());
    let io = |e: csv::Error| Error::Io(e.to_string());
    wtr.write_record(&header).map_err(io)?;
    for unit in data.units() {
        let mut rec = vec![
            unit.id.clone(),
            if unit.treated { "1" } else { "0" }.to_string(),
            unit.y_before.to_string(),
            unit.y_after.to_string(),
        ];
        rec.extend(unit.covariates.iter().map(|x| x.to_string()));
        wtr.write_record(&rec).map_err(io)?;
    }
    wtr.flush()?;
    Ok(())
}

/// A power-series term: column `column` contributes x, x², …, x^order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PowerTerm {
    pub column: String,
    pub order: u32,
}

/// Largest admissible power-series order.
pub const MAX_POWER_ORDER: u32 = 5;

/// Recipe turning raw covariates into model features.
///
/// Column layout of the expanded design is deterministic: intercept, base
/// columns, log columns, then each power-series column in declaration order
/// with ascending powers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    /// Columns entered linearly as-is.
    pub base_columns: Vec<String>,
    /// Columns replaced by their natural log.
    #[serde(default)]
    pub log_transform: Vec<String>,
    /// Continuous columns expanded into a power series.
    #[serde(default)]
    pub power_orders: Vec<PowerTerm>,
    pub include_intercept: bool,
    /// Center and scale power-series columns by their sample mean/SD before
    /// raising them to powers.
    #[serde(default)]
    pub standardize: bool,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self::intercept_only()
    }
}

impl FeatureSpec {
    pub fn intercept_only() -> Self {
        Self {
            base_columns: Vec::new(),
            log_transform: Vec::new(),
            power_orders: Vec::new(),
            include_intercept: true,
            standardize: false,
        }
    }

    /// Intercept plus the given columns entered linearly.
    pub fn linear<S: AsRef<str>>(columns: &[S]) -> Self {
        Self {
            base_columns: columns.iter().map(|c| c.as_ref().to_string()).collect(),
            ..Self::intercept_only()
        }
    }

    pub fn with_power(mut self, column: &str, order: u32) -> Self {
        self.power_orders.push(PowerTerm {
            column: column.to_string(),
            order,
        });
        self
    }

    pub fn with_log(mut self, column: &str) -> Self {
        self.log_transform.push(column.to_string());
        self
    }

    /// Same spec with every power-series column set to `order`.
    pub fn with_shared_order(&self, order: u32) -> Self {
        let mut out = self.clone();
        for term in &mut out.power_orders {
            term.order = order;
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        for term in &self.power_orders {
            if !(1..=MAX_POWER_ORDER).contains(&term.order) {
                return Err(Error::InvalidSpec(format!(
                    "power order {} for `{}` outside 1..={MAX_POWER_ORDER}",
                    term.order, term.column
                )));
            }
        }
        Ok(())
    }

    /// Number of expanded features.
    pub fn width(&self) -> usize {
        usize::from(self.include_intercept)
            + self.base_columns.len()
            + self.log_transform.len()
            + self
                .power_orders
                .iter()
                .map(|t| t.order as usize)
                .sum::<usize>()
    }
}

/// Name of the intercept column in expanded designs.
pub const INTERCEPT: &str = "(intercept)";

/// An N × q matrix of model features with column names.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    names: Vec<String>,
    values: DMatrix<f64>,
}

impl DesignMatrix {
    pub fn new(names: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        if names.len() != values.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{} names for {} columns",
                names.len(),
                values.ncols()
            )));
        }
        Ok(Self { names, values })
    }

    /// Builds a design from row-major data.
    pub fn from_rows(names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let q = names.len();
        if rows.iter().any(|r| r.len() != q) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        let values = DMatrix::from_fn(rows.len(), q, |i, j| rows[i][j]);
        Self::new(names, values)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        let n = self.nrows();
        &self.values.as_slice()[j * n..(j + 1) * n]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.values.row(i).iter().copied().collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            names: self.names.clone(),
            values: self.values.select_rows(rows),
        }
    }

    pub fn has_intercept(&self) -> bool {
        self.names.iter().any(|n| n == INTERCEPT)
    }
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

/// Expands raw covariates into a design matrix according to `spec`.
pub fn expand_features(data: &PanelDataset, spec: &FeatureSpec) -> Result<DesignMatrix> {
    spec.validate()?;
    let n = data.len();
    let mut names = Vec::with_capacity(spec.width());
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(spec.width());
    if spec.include_intercept {
        names.push(INTERCEPT.to_string());
        columns.push(vec![1.0; n]);
    }
    for col in &spec.base_columns {
        columns.push(data.covariate(col)?);
        names.push(col.clone());
    }
    for col in &spec.log_transform {
        let raw = data.covariate(col)?;
        if let Some(&bad) = raw.iter().find(|&&v| v <= 0.0) {
            return Err(Error::NonPositiveLog {
                column: col.clone(),
                value: bad,
            });
        }
        columns.push(raw.iter().map(|v| v.ln()).collect());
        names.push(format!("log({col})"));
    }
    for term in &spec.power_orders {
        let mut raw = data.covariate(&term.column)?;
        if spec.standardize {
            let (mean, sd) = mean_sd(&raw);
            let sd = if sd > 0.0 { sd } else { 1.0 };
            raw.iter_mut().for_each(|v| *v = (*v - mean) / sd);
        }
        for power in 1..=term.order {
            columns.push(raw.iter().map(|v| v.powi(power as i32)).collect());
            names.push(if power == 1 {
                term.column.clone()
            } else {
                format!("{}^{power}", term.column)
            });
        }
    }
    let q = columns.len();
    let values = DMatrix::from_fn(n, q, |i, j| columns[j][i]);
    DesignMatrix::new(names, values)
}
