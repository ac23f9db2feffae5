//! Microdata with planned missingness.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed dataset: {0}")]
    Format(String),
    #[error("outcome is missing in row {row}")]
    MissingOutcome { row: usize },
}

/// `n × (p+1)` table over `(x₁, …, x_p, y)` with a per-cell observed mask
/// and optional per-row form labels (0-based form indices).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    names: Vec<String>,
    values: Vec<f64>,
    observed: Vec<bool>,
    forms: Option<Vec<usize>>,
}

/// Rows sharing one set of observed columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pattern {
    pub observed: Vec<usize>,
    pub missing: Vec<usize>,
    pub rows: Vec<usize>,
}

impl Dataset {
    /// Fully observed dataset; the last name is the outcome.
    pub fn complete(names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self, DataError> {
        let cols = names.len();
        if cols < 2 {
            return Err(DataError::Format(
                "need at least one regressor and y".into(),
            ));
        }
        if let Some(i) = rows.iter().position(|r| r.len() != cols) {
            return Err(DataError::Format(format!("row {i} has the wrong width")));
        }
        Ok(Self {
            names,
            values: rows.iter().flatten().copied().collect(),
            observed: vec![true; rows.len() * cols],
            forms: None,
        })
    }

    /// Builds from flat row-major storage.
    pub fn from_parts(
        names: Vec<String>,
        values: Vec<f64>,
        observed: Vec<bool>,
        forms: Option<Vec<usize>>,
    ) -> Result<Self, DataError> {
        let cols = names.len();
        if cols < 2 || values.len() % cols != 0 || observed.len() != values.len() {
            return Err(DataError::Format("inconsistent dataset storage".into()));
        }
        let d = Self {
            names,
            values,
            observed,
            forms,
        };
        if let Some(f) = &d.forms {
            if f.len() != d.n() {
                return Err(DataError::Format(
                    "form labels do not match row count".into(),
                ));
            }
        }
        d.check_outcome()?;
        Ok(d)
    }

    fn check_outcome(&self) -> Result<(), DataError> {
        let y = self.p();
        match (0..self.n()).find(|&i| !self.is_observed(i, y)) {
            Some(row) => Err(DataError::MissingOutcome { row }),
            None => Ok(()),
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n(&self) -> usize {
        self.values.len() / self.names.len()
    }

    /// Number of columns, `p + 1`.
    pub fn width(&self) -> usize {
        self.names.len()
    }

    /// Number of regressors.
    pub fn p(&self) -> usize {
        self.names.len() - 1
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.width() + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let w = self.width();
        self.values[i * w + j] = v;
    }

    #[inline]
    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.observed[i * self.width() + j]
    }

    pub fn value(&self, i: usize, j: usize) -> Option<f64> {
        self.is_observed(i, j).then(|| self.get(i, j))
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.values[i * w..(i + 1) * w]
    }

    pub fn forms(&self) -> Option<&[usize]> {
        self.forms.as_deref()
    }

    pub fn set_forms(&mut self, forms: Vec<usize>) {
        assert_eq!(forms.len(), self.n(), "one form label per row");
        self.forms = Some(forms);
    }

    /// Masks cell `(i, j)`. The stored value is replaced by NaN.
    pub fn mask(&mut self, i: usize, j: usize) {
        assert!(j < self.p(), "the outcome is never masked");
        let w = self.width();
        self.observed[i * w + j] = false;
        self.values[i * w + j] = f64::NAN;
    }

    /// Marks a previously missing cell as filled with `v`.
    pub fn fill(&mut self, i: usize, j: usize, v: f64) {
        let w = self.width();
        self.values[i * w + j] = v;
        self.observed[i * w + j] = true;
    }

    pub fn has_missing(&self) -> bool {
        self.observed.iter().any(|&o| !o)
    }

    pub fn missing_count(&self) -> usize {
        self.observed.iter().filter(|&&o| !o).count()
    }

    /// Rows in the order given, carrying masks and form labels along.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let w = self.width();
        let mut values = Vec::with_capacity(rows.len() * w);
        let mut observed = Vec::with_capacity(rows.len() * w);
        for &i in rows {
            values.extend_from_slice(&self.values[i * w..(i + 1) * w]);
            observed.extend_from_slice(&self.observed[i * w..(i + 1) * w]);
        }
        Self {
            names: self.names.clone(),
            values,
            observed,
            forms: self
                .forms
                .as_ref()
                .map(|f| rows.iter().map(|&i| f[i]).collect()),
        }
    }

    /// Groups rows by observed-column set, in order of first appearance.
    pub fn patterns(&self) -> Vec<Pattern> {
        let w = self.width();
        let mut order: Vec<Vec<bool>> = Vec::new();
        let mut groups: BTreeMap<Vec<bool>, Vec<usize>> = BTreeMap::new();
        for i in 0..self.n() {
            let key = self.observed[i * w..(i + 1) * w].to_vec();
            let entry = groups.entry(key.clone()).or_default();
            if entry.is_empty() {
                order.push(key);
            }
            entry.push(i);
        }
        order
            .into_iter()
            .map(|key| {
                let rows = groups.remove(&key).expect("key recorded");
                Pattern {
                    observed: (0..w).filter(|&j| key[j]).collect(),
                    missing: (0..w).filter(|&j| !key[j]).collect(),
                    rows,
                }
            })
            .collect()
    }

    /// Reads CSV with a header row. Empty fields are missing; an optional
    /// `form` column carries 1-based form numbers. The last data column is
    /// the outcome.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let form_col = headers.iter().position(|h| h == "form");
        let names: Vec<String> = headers
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != form_col)
            .map(|(_, h)| h.to_string())
            .collect();
        if names.len() < 2 {
            return Err(DataError::Format(
                "need at least one regressor and y".into(),
            ));
        }
        let mut values = Vec::new();
        let mut observed = Vec::new();
        let mut forms = form_col.map(|_| Vec::new());
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec?;
            for (c, field) in rec.iter().enumerate() {
                if Some(c) == form_col {
                    let k: usize = field.trim().parse().map_err(|_| {
                        DataError::Format(format!("row {r}: bad form label `{field}`"))
                    })?;
                    if k == 0 {
                        return Err(DataError::Format(format!(
                            "row {r}: form numbers start at 1"
                        )));
                    }
                    forms.as_mut().expect("form column").push(k - 1);
                    continue;
                }
                let field = field.trim();
                if field.is_empty() {
                    values.push(f64::NAN);
                    observed.push(false);
                } else {
                    values.push(field.parse().map_err(|_| {
                        DataError::Format(format!("row {r}: bad number `{field}`"))
                    })?);
                    observed.push(true);
                }
            }
        }
        Self::from_parts(names, values, observed, forms)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.names.iter().map(String::as_str).collect();
        if self.forms.is_some() {
            header.push("form");
        }
        wtr.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec: Vec<String> = (0..self.width())
                .map(|j| self.value(i, j).map(|v| v.to_string()).unwrap_or_default())
                .collect();
            if let Some(f) = &self.forms {
                rec.push((f[i] + 1).to_string());
            }
            wtr.write_record(&rec)?;
        }
        wtr.flush().map_err(|e| DataError::Format(e.to_string()))?;
        Ok(())
    }
}
