//! Stacked-dataset ingestion: CSV loading, label validation, the
//! labeled/unlabeled split, and design-matrix extraction.

pub mod formula;

use std::io;

use crate::error::{IpdError, Result};
use crate::stat_core::linalg::Matrix;
use formula::Formula;

/// Role of a row in the stacked layout. Any other label string is an error.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Label {
    Training,
    Labeled,
    Unlabeled,
}

impl Label {
    pub fn parse(s: &str) -> Result<Label> {
        match s {
            "training" => Ok(Label::Training),
            "labeled" => Ok(Label::Labeled),
            "unlabeled" => Ok(Label::Unlabeled),
            other => Err(IpdError::Validation(format!(
                "unknown label {other:?}; expected \"training\", \"labeled\", or \"unlabeled\""
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Training => "training",
            Label::Labeled => "labeled",
            Label::Unlabeled => "unlabeled",
        }
    }
}

/// Which outcome column `design_matrix` should extract.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Observed,
    Predicted,
}

/// A loaded stacked dataset: one label column plus numeric columns, all rows
/// kept in file order. Immutable after load; shared read-only by workers.
#[derive(Clone, Debug)]
pub struct StackedDataset {
    label_name: String,
    /// Position of the label column within the original header.
    label_pos: usize,
    /// Numeric column names in file order (label column excluded).
    names: Vec<String>,
    labels: Vec<Label>,
    /// One vector per numeric column; `None` marks a missing value.
    columns: Vec<Vec<Option<f64>>>,
}

/// Row indices of the two inference samples (training rows are dropped).
#[derive(Clone, Debug)]
pub struct Split {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
}

impl Split {
    pub fn n_labeled(&self) -> usize {
        self.labeled.len()
    }

    pub fn n_unlabeled(&self) -> usize {
        self.unlabeled.len()
    }
}

fn parse_field(field: &str, name: &str, row: usize) -> Result<Option<f64>> {
    let field = field.trim();
    if field.is_empty() || field == "NA" {
        return Ok(None);
    }
    field.parse::<f64>().map(Some).map_err(|_| {
        IpdError::Parse(format!(
            "column {name:?}, data row {row}: {field:?} is not numeric"
        ))
    })
}

/// Load a comma-delimited stacked dataset, parse numeric columns as 64-bit
/// floats ("NA" or empty = missing), and enforce the label and
/// outcome-completeness invariants for the given formula.
pub fn load_stacked<R: io::Read>(
    source: R,
    label_column: &str,
    formula: &Formula,
) -> Result<StackedDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(source);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| IpdError::Parse(format!("bad CSV header: {e}")))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let label_pos = header.iter().position(|h| h == label_column).ok_or_else(|| {
        IpdError::Schema(format!(
            "label column {label_column:?} not found in header {header:?}"
        ))
    })?;
    let missing: Vec<&str> = formula
        .column_names()
        .into_iter()
        .filter(|name| !header.iter().any(|h| h == name))
        .collect();
    if !missing.is_empty() {
        return Err(IpdError::Schema(format!(
            "missing required column(s) {missing:?}"
        )));
    }
    let names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label_pos)
        .map(|(_, h)| h.clone())
        .collect();
    let mut labels = Vec::new();
    let mut columns: Vec<Vec<Option<f64>>> = vec![Vec::new(); names.len()];
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 1;
        let record =
            record.map_err(|e| IpdError::Parse(format!("data row {row}: {e}")))?;
        if record.len() != header.len() {
            return Err(IpdError::Parse(format!(
                "data row {row}: expected {} fields, found {}",
                header.len(),
                record.len()
            )));
        }
        labels.push(Label::parse(record[label_pos].trim())?);
        let mut c = 0;
        for (i, field) in record.iter().enumerate() {
            if i == label_pos {
                continue;
            }
            columns[c].push(parse_field(field, &names[c], row)?);
            c += 1;
        }
    }
    let data = StackedDataset {
        label_name: label_column.to_string(),
        label_pos,
        names,
        labels,
        columns,
    };
    data.check_outcomes(formula)?;
    Ok(data)
}

impl StackedDataset {
    /// Assemble a dataset in memory (used by the simulator). Checks only the
    /// structural invariants; outcome completeness is the loader's job.
    pub fn from_parts(
        label_name: impl Into<String>,
        label_pos: usize,
        names: Vec<String>,
        labels: Vec<Label>,
        columns: Vec<Vec<Option<f64>>>,
    ) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(IpdError::Validation(
                "column name/data count mismatch".into(),
            ));
        }
        if label_pos > names.len() {
            return Err(IpdError::Validation("label position out of range".into()));
        }
        if columns.iter().any(|c| c.len() != labels.len()) {
            return Err(IpdError::Validation("ragged columns".into()));
        }
        Ok(StackedDataset {
            label_name: label_name.into(),
            label_pos,
            names,
            labels,
            columns,
        })
    }

    fn check_outcomes(&self, formula: &Formula) -> Result<()> {
        let y = self.column(&formula.observed).expect("checked by schema");
        let f = self.column(&formula.predicted).expect("checked by schema");
        for (i, &label) in self.labels.iter().enumerate() {
            let row = i + 1;
            if label == Label::Labeled && !matches!(y[i], Some(v) if v.is_finite()) {
                return Err(IpdError::Validation(format!(
                    "data row {row} is labeled but its observed outcome {:?} is missing",
                    formula.observed
                )));
            }
            if label != Label::Training && !matches!(f[i], Some(v) if v.is_finite()) {
                return Err(IpdError::Validation(format!(
                    "data row {row} has no finite predicted outcome {:?}",
                    formula.predicted
                )));
            }
        }
        Ok(())
    }

    pub fn nrows(&self) -> usize {
        self.labels.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn label_name(&self) -> &str {
        &self.label_name
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn column(&self, name: &str) -> Option<&[Option<f64>]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
    }

    /// Append a numeric column (used by `augment` for fitted/residual
    /// columns).
    pub fn add_column(&mut self, name: impl Into<String>, values: Vec<Option<f64>>) -> Result<()> {
        let name = name.into();
        if name == self.label_name || self.names.iter().any(|n| *n == name) {
            return Err(IpdError::Validation(format!(
                "column {name:?} already exists"
            )));
        }
        if values.len() != self.nrows() {
            return Err(IpdError::Validation(format!(
                "new column {name:?} has {} values for {} rows",
                values.len(),
                self.nrows()
            )));
        }
        self.names.push(name);
        self.columns.push(values);
        Ok(())
    }

    /// Partition non-training rows into the labeled and unlabeled samples.
    pub fn split(&self) -> Result<Split> {
        let mut labeled = Vec::new();
        let mut unlabeled = Vec::new();
        for (i, &label) in self.labels.iter().enumerate() {
            match label {
                Label::Labeled => labeled.push(i),
                Label::Unlabeled => unlabeled.push(i),
                Label::Training => {}
            }
        }
        if labeled.is_empty() {
            return Err(IpdError::Validation(
                "dataset has no rows labeled \"labeled\"".into(),
            ));
        }
        if unlabeled.is_empty() {
            return Err(IpdError::Validation(
                "dataset has no rows labeled \"unlabeled\"".into(),
            ));
        }
        Ok(Split { labeled, unlabeled })
    }

    /// Extract `[1, X1, …, Xp]` and the requested outcome over `rows`,
    /// preserving row order.
    pub fn design_matrix(
        &self,
        rows: &[usize],
        formula: &Formula,
        outcome: Outcome,
    ) -> Result<(Matrix<f64>, Vec<f64>)> {
        let outcome_name = match outcome {
            Outcome::Observed => &formula.observed,
            Outcome::Predicted => &formula.predicted,
        };
        let y_col = self.column(outcome_name).ok_or_else(|| {
            IpdError::Schema(format!("missing outcome column {outcome_name:?}"))
        })?;
        let x_cols: Vec<&[Option<f64>]> = formula
            .covariates
            .iter()
            .map(|name| {
                self.column(name)
                    .ok_or_else(|| IpdError::Schema(format!("missing covariate column {name:?}")))
            })
            .collect::<Result<_>>()?;
        let p = 1 + x_cols.len();
        let mut x = Matrix::zeros(rows.len(), p);
        let mut y = Vec::with_capacity(rows.len());
        for (r, &row) in rows.iter().enumerate() {
            match y_col[row] {
                Some(v) if v.is_finite() => y.push(v),
                _ => {
                    return Err(IpdError::Validation(format!(
                        "data row {}: outcome {outcome_name:?} is missing or non-finite",
                        row + 1
                    )))
                }
            }
            x[(r, 0)] = 1.0;
            for (j, col) in x_cols.iter().enumerate() {
                match col[row] {
                    Some(v) if v.is_finite() => x[(r, j + 1)] = v,
                    _ => {
                        return Err(IpdError::Validation(format!(
                            "data row {}: covariate {:?} is missing or non-finite",
                            row + 1,
                            formula.covariates[j]
                        )))
                    }
                }
            }
        }
        Ok((x, y))
    }

    /// Write the dataset back out as CSV. Finite values are rendered with 17
    /// significant digits so a re-load reproduces them bit-for-bit;
    /// missing or non-finite values become "NA".
    pub fn to_csv<W: io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let ncols = self.names.len();
        let mut header = Vec::with_capacity(ncols + 1);
        for i in 0..=ncols {
            if i == self.label_pos {
                header.push(self.label_name.clone());
            }
            if i < ncols {
                header.push(self.names[i].clone());
            }
        }
        w.write_record(&header)?;
        for row in 0..self.nrows() {
            let mut record = Vec::with_capacity(ncols + 1);
            for i in 0..=ncols {
                if i == self.label_pos {
                    record.push(self.labels[row].as_str().to_string());
                }
                if i < ncols {
                    record.push(match self.columns[i][row] {
                        Some(v) if v.is_finite() => format!("{v:.16e}"),
                        _ => "NA".to_string(),
                    });
                }
            }
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }
}
