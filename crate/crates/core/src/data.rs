//! Observed-data representation for hybrid-control studies.
//!
//! Each subject contributes `(z, a, y, x)`: the source indicator (`z = 1` for
//! the randomized trial, `z = 0` for the external control source), the
//! treatment indicator, the outcome and a covariate vector. External subjects
//! are controls only.
//!
//! Datasets are stored column-wise (covariates row-major in one buffer) and
//! are immutable after construction.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DataError, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeKind {
    Continuous,
    Binary,
}

/// One subject, used to build a [`StudyDataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub z: u8,
    pub a: u8,
    pub y: f64,
    pub x: Vec<f64>,
}

impl StudyRow {
    pub fn new(z: u8, a: u8, y: f64, x: Vec<f64>) -> Self {
        Self { z, a, y, x }
    }
}

/// Borrowed view of one subject.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowRef<'a> {
    pub z: u8,
    pub a: u8,
    pub y: f64,
    pub x: &'a [f64],
}

impl RowRef<'_> {
    pub fn is_internal(&self) -> bool {
        self.z == 1
    }
    pub fn is_control(&self) -> bool {
        self.a == 0
    }
}

/// Subject counts in the three design strata.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StrataCounts {
    /// `z = 1, a = 1`
    pub n_trt: usize,
    /// `z = 1, a = 0`
    pub n_ic: usize,
    /// `z = 0`
    pub n_ec: usize,
}

impl StrataCounts {
    pub fn total(&self) -> usize {
        self.n_trt + self.n_ic + self.n_ec
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyDataset {
    z: Vec<u8>,
    a: Vec<u8>,
    y: Vec<f64>,
    x: Vec<f64>,
    p: usize,
    outcome_kind: OutcomeKind,
    counts: StrataCounts,
}

impl StudyDataset {
    /// Validates and builds a dataset. Rejects empty input and datasets
    /// without internal subjects; an empty internal-control stratum is allowed
    /// here (see [`StudyDataset::require_internal_controls`]).
    pub fn new(rows: Vec<StudyRow>, outcome_kind: OutcomeKind) -> Result<Self, DataError> {
        let first = rows.first().ok_or(DataError::Empty)?;
        let p = first.x.len();
        let n = rows.len();
        let mut z = Vec::with_capacity(n);
        let mut a = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        let mut x = Vec::with_capacity(n * p);
        for (i, row) in rows.into_iter().enumerate() {
            validate_row(i + 1, &row, p, outcome_kind)?;
            z.push(row.z);
            a.push(row.a);
            y.push(row.y);
            x.extend_from_slice(&row.x);
        }
        Self::from_columns(z, a, y, x, p, outcome_kind)
    }

    /// Builds a dataset from column buffers; `x` is row-major with `p` columns.
    pub fn from_columns(
        z: Vec<u8>,
        a: Vec<u8>,
        y: Vec<f64>,
        x: Vec<f64>,
        p: usize,
        outcome_kind: OutcomeKind,
    ) -> Result<Self, DataError> {
        let n = z.len();
        if n == 0 {
            return Err(DataError::Empty);
        }
        if a.len() != n || y.len() != n || x.len() != n * p {
            return Err(DataError::Invalid {
                row: 0,
                message: "column lengths disagree".into(),
            });
        }
        let mut counts = StrataCounts {
            n_trt: 0,
            n_ic: 0,
            n_ec: 0,
        };
        for i in 0..n {
            let row = StudyRow {
                z: z[i],
                a: a[i],
                y: y[i],
                x: Vec::new(),
            };
            validate_row(i + 1, &row, 0, outcome_kind)?;
            if let Some(bad) = x[i * p..(i + 1) * p].iter().position(|v| !v.is_finite()) {
                return Err(DataError::Invalid {
                    row: i + 1,
                    message: format!("covariate x{} is not finite", bad + 1),
                });
            }
            match (z[i], a[i]) {
                (1, 1) => counts.n_trt += 1,
                (1, 0) => counts.n_ic += 1,
                _ => counts.n_ec += 1,
            }
        }
        if counts.n_trt + counts.n_ic == 0 {
            return Err(DataError::NoInternal);
        }
        Ok(Self {
            z,
            a,
            y,
            x,
            p,
            outcome_kind,
            counts,
        })
    }

    pub fn n(&self) -> usize {
        self.z.len()
    }
    pub fn n1(&self) -> usize {
        self.counts.n_trt + self.counts.n_ic
    }
    pub fn n0(&self) -> usize {
        self.counts.n_ec
    }
    pub fn p(&self) -> usize {
        self.p
    }
    pub fn outcome_kind(&self) -> OutcomeKind {
        self.outcome_kind
    }
    pub fn counts(&self) -> StrataCounts {
        self.counts
    }

    pub fn z(&self, i: usize) -> u8 {
        self.z[i]
    }
    pub fn a(&self, i: usize) -> u8 {
        self.a[i]
    }
    pub fn y(&self, i: usize) -> f64 {
        self.y[i]
    }
    pub fn x(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    pub fn row(&self, i: usize) -> RowRef<'_> {
        RowRef {
            z: self.z[i],
            a: self.a[i],
            y: self.y[i],
            x: self.x(i),
        }
    }

    pub fn rows(&self) -> impl Iterator<Item = RowRef<'_>> + '_ {
        (0..self.n()).map(move |i| self.row(i))
    }

    pub fn to_rows(&self) -> Vec<StudyRow> {
        self.rows()
            .map(|r| StudyRow::new(r.z, r.a, r.y, r.x.to_vec()))
            .collect()
    }

    /// Indices of rows satisfying `pred`, in dataset order.
    pub fn indices_where(&self, pred: impl Fn(RowRef<'_>) -> bool) -> Vec<usize> {
        (0..self.n()).filter(|&i| pred(self.row(i))).collect()
    }

    /// Dataset made of the given rows (duplicates allowed), in the given order.
    pub fn subset(&self, idx: &[usize]) -> Result<Self, DataError> {
        let mut x = Vec::with_capacity(idx.len() * self.p);
        for &i in idx {
            x.extend_from_slice(self.x(i));
        }
        Self::from_columns(
            idx.iter().map(|&i| self.z[i]).collect(),
            idx.iter().map(|&i| self.a[i]).collect(),
            idx.iter().map(|&i| self.y[i]).collect(),
            x,
            self.p,
            self.outcome_kind,
        )
    }

    /// Copy with every outcome replaced by `f(y, row)`. The outcome kind is kept,
    /// so binary data must stay binary.
    pub fn map_outcome(&self, f: impl Fn(f64, RowRef<'_>) -> f64) -> Result<Self, DataError> {
        let y = (0..self.n()).map(|i| f(self.y[i], self.row(i))).collect();
        Self::from_columns(
            self.z.clone(),
            self.a.clone(),
            y,
            self.x.clone(),
            self.p,
            self.outcome_kind,
        )
    }

    pub fn require_internal_controls(&self) -> Result<(), DataError> {
        if self.counts.n_ic == 0 {
            return Err(DataError::EmptyStratum("internal control"));
        }
        Ok(())
    }
}

fn validate_row(
    line: usize,
    row: &StudyRow,
    p: usize,
    kind: OutcomeKind,
) -> Result<(), DataError> {
    let bad = |message: String| DataError::Invalid { row: line, message };
    if row.z > 1 {
        return Err(bad(format!("z must be 0 or 1, got {}", row.z)));
    }
    if row.a > 1 {
        return Err(bad(format!("a must be 0 or 1, got {}", row.a)));
    }
    if row.z == 0 && row.a == 1 {
        return Err(DataError::ExternalTreated { row: line });
    }
    if !row.y.is_finite() {
        return Err(bad("outcome is not finite".into()));
    }
    if kind == OutcomeKind::Binary && row.y != 0.0 && row.y != 1.0 {
        return Err(bad(format!("binary outcome must be 0 or 1, got {}", row.y)));
    }
    if !row.x.is_empty() || p > 0 {
        if row.x.len() != p {
            return Err(bad(format!(
                "expected {p} covariates, got {}",
                row.x.len()
            )));
        }
        if let Some(j) = row.x.iter().position(|v| !v.is_finite()) {
            return Err(bad(format!("covariate x{} is not finite", j + 1)));
        }
    }
    Ok(())
}

/// Counts of internal treated, internal control and external control subjects.
pub fn strata_counts(d: &StudyDataset) -> StrataCounts {
    d.counts()
}

fn parse_indicator(cell: &str, name: &str, line: usize) -> Result<u8, DataError> {
    let v = parse_number(cell, name, line)?;
    if v == 0.0 {
        Ok(0)
    } else if v == 1.0 {
        Ok(1)
    } else {
        Err(DataError::Cell {
            line,
            message: format!("{name} must be 0 or 1, got {cell}"),
        })
    }
}

fn parse_number(cell: &str, name: &str, line: usize) -> Result<f64, DataError> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Err(DataError::Cell {
            line,
            message: format!("missing value in column {name}"),
        });
    }
    let v: f64 = cell.parse().map_err(|_| DataError::Cell {
        line,
        message: format!("non-numeric value {cell:?} in column {name}"),
    })?;
    if !v.is_finite() {
        return Err(DataError::Cell {
            line,
            message: format!("non-finite value {cell:?} in column {name}"),
        });
    }
    Ok(v)
}

/// Parses CSV text with header `z,a,y,x1,...,xp`.
pub fn parse_csv(text: &str, outcome_kind: OutcomeKind) -> Result<StudyDataset, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| DataError::Header(e.to_string()))?
        .clone();
    let names: Vec<&str> = header.iter().collect();
    if names.len() < 3 || names[0] != "z" || names[1] != "a" || names[2] != "y" {
        return Err(DataError::Header(format!(
            "expected columns z,a,y,x1,...,xp; got {}",
            names.join(",")
        )));
    }
    for (j, name) in names[3..].iter().enumerate() {
        let want = format!("x{}", j + 1);
        if *name != want {
            return Err(DataError::Header(format!(
                "column {} should be {want}, got {name:?}",
                j + 4
            )));
        }
    }
    let p = names.len() - 3;
    let mut rows = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let line = k + 2;
        let record = record.map_err(|e| DataError::Cell {
            line,
            message: e.to_string(),
        })?;
        if record.len() != p + 3 {
            return Err(DataError::Cell {
                line,
                message: format!("expected {} fields, got {}", p + 3, record.len()),
            });
        }
        let z = parse_indicator(&record[0], "z", line)?;
        let a = parse_indicator(&record[1], "a", line)?;
        if z == 0 && a == 1 {
            return Err(DataError::ExternalTreated { row: line });
        }
        let y = parse_number(&record[2], "y", line)?;
        if outcome_kind == OutcomeKind::Binary && y != 0.0 && y != 1.0 {
            return Err(DataError::Cell {
                line,
                message: format!("binary outcome must be 0 or 1, got {}", &record[2]),
            });
        }
        let x = (0..p)
            .map(|j| parse_number(&record[3 + j], &names[3 + j], line))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(StudyRow { z, a, y, x });
    }
    let d = StudyDataset::new(rows, outcome_kind)?;
    d.require_internal_controls()?;
    Ok(d)
}

/// Loads and validates a hybrid-control CSV file.
pub fn load_csv(path: impl AsRef<Path>, outcome_kind: OutcomeKind) -> Result<StudyDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(parse_csv(&text, outcome_kind)?)
}

/// Renders the dataset as CSV. Reals use the shortest representation that
/// parses back to the same bits.
pub fn to_csv_string(d: &StudyDataset) -> String {
    let mut out = String::with_capacity(d.n() * (8 + 20 * (d.p() + 1)));
    out.push_str("z,a,y");
    for j in 1..=d.p() {
        let _ = write!(out, ",x{j}");
    }
    out.push('\n');
    for r in d.rows() {
        let _ = write!(out, "{},{},{}", r.z, r.a, r.y);
        for v in r.x {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn save_csv(d: &StudyDataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_csv_string(d)).map_err(Error::from)
}
