//! Multiple matrix sampling designs: which regressors each questionnaire
//! form administers and how the sample is allocated across forms.
//!
//! Variables are addressed in two coordinate systems. *Data* coordinates
//! `0..=p` cover `(x₁, …, x_p, y)`; *moment* coordinates `0..=p+1` prepend
//! the intercept, as in the bordered moment matrix.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{Matrix, Scalar};

const ALLOCATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DesignError {
    #[error("malformed design document: {0}")]
    Schema(String),
    #[error("design violates an invariant: {0}")]
    Invariant(String),
    #[error("form index {index} out of range for a design with {count} forms")]
    Index { index: usize, count: usize },
    #[error("invalid argument: {0}")]
    Domain(String),
}

/// One questionnaire version. `items` are regressor indices in ascending
/// order; the outcome is administered on every form and is not listed.
#[derive(Debug, Clone, PartialEq)]
pub struct Form {
    pub name: String,
    pub items: Vec<usize>,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    variables: Vec<String>,
    outcome: String,
    forms: Vec<Form>,
}

/// JSON layout of a design file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignDocument {
    pub variables: Vec<String>,
    pub outcome: String,
    pub forms: Vec<FormDocument>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormDocument {
    pub name: String,
    pub items: Vec<String>,
    pub fraction: f64,
}

pub fn parse_design(document: &str) -> Result<Design, DesignError> {
    let doc: DesignDocument =
        serde_json::from_str(document).map_err(|e| DesignError::Schema(e.to_string()))?;
    Design::from_document(doc)
}

impl Design {
    pub fn from_document(doc: DesignDocument) -> Result<Self, DesignError> {
        let DesignDocument {
            variables,
            outcome,
            forms,
        } = doc;
        if variables.is_empty() {
            return Err(DesignError::Schema("no regressors listed".into()));
        }
        let unique: BTreeSet<&str> = variables.iter().map(String::as_str).collect();
        if unique.len() != variables.len() {
            return Err(DesignError::Schema("duplicate variable names".into()));
        }
        if unique.contains(outcome.as_str()) {
            return Err(DesignError::Schema(format!(
                "outcome `{outcome}` is also listed as a regressor"
            )));
        }
        if forms.is_empty() {
            return Err(DesignError::Schema("design has no forms".into()));
        }
        let mut parsed = Vec::with_capacity(forms.len());
        for f in forms {
            let mut items = BTreeSet::new();
            for item in &f.items {
                if *item == outcome {
                    continue;
                }
                let idx = variables.iter().position(|v| v == item).ok_or_else(|| {
                    DesignError::Schema(format!(
                        "form `{}` lists unknown variable `{item}`",
                        f.name
                    ))
                })?;
                if !items.insert(idx) {
                    return Err(DesignError::Schema(format!(
                        "form `{}` lists `{item}` twice",
                        f.name
                    )));
                }
            }
            parsed.push(Form {
                name: f.name,
                items: items.into_iter().collect(),
                fraction: f.fraction,
            });
        }
        Self::new(variables, outcome, parsed)
    }

    /// Validates and builds a design from already-indexed forms.
    pub fn new(
        variables: Vec<String>,
        outcome: impl Into<String>,
        mut forms: Vec<Form>,
    ) -> Result<Self, DesignError> {
        let p = variables.len();
        for f in &mut forms {
            f.items.sort_unstable();
            f.items.dedup();
            if f.items.is_empty() {
                return Err(DesignError::Invariant(format!(
                    "form `{}` administers no regressor",
                    f.name
                )));
            }
            if let Some(&bad) = f.items.iter().find(|&&i| i >= p) {
                return Err(DesignError::Schema(format!(
                    "form `{}` references regressor index {bad} (p = {p})",
                    f.name
                )));
            }
            if !(f.fraction > 0.0 && f.fraction <= 1.0) {
                return Err(DesignError::Invariant(format!(
                    "form `{}` has allocation {} outside (0, 1]",
                    f.name, f.fraction
                )));
            }
        }
        let total: f64 = forms.iter().map(|f| f.fraction).sum();
        if (total - 1.0).abs() > ALLOCATION_TOLERANCE {
            return Err(DesignError::Invariant(format!(
                "allocation fractions sum to {total}, not 1"
            )));
        }
        Ok(Self {
            variables,
            outcome: outcome.into(),
            forms,
        })
    }

    pub fn to_document(&self) -> DesignDocument {
        DesignDocument {
            variables: self.variables.clone(),
            outcome: self.outcome.clone(),
            forms: self
                .forms
                .iter()
                .map(|f| FormDocument {
                    name: f.name.clone(),
                    items: f.items.iter().map(|&i| self.variables[i].clone()).collect(),
                    fraction: f.fraction,
                })
                .collect(),
        }
    }

    /// Number of regressors.
    pub fn p(&self) -> usize {
        self.variables.len()
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn outcome(&self) -> &str {
        &self.outcome
    }

    pub fn forms(&self) -> &[Form] {
        &self.forms
    }

    pub fn form_count(&self) -> usize {
        self.forms.len()
    }

    pub fn allocation(&self) -> Vec<f64> {
        self.forms.iter().map(|f| f.fraction).collect()
    }

    pub fn has_uniform_allocation(&self) -> bool {
        let first = self.forms[0].fraction;
        self.forms
            .iter()
            .all(|f| (f.fraction - first).abs() <= ALLOCATION_TOLERANCE)
    }

    /// True when every form administers every regressor.
    pub fn is_complete(&self) -> bool {
        self.forms.iter().all(|f| f.items.len() == self.p())
    }

    /// Name of data coordinate `i` (`p` is the outcome).
    pub fn name_of(&self, i: usize) -> &str {
        if i == self.p() {
            &self.outcome
        } else {
            &self.variables[i]
        }
    }

    /// Data coordinates administered on form `k`, outcome last.
    pub fn administered(&self, k: usize) -> Result<Vec<usize>, DesignError> {
        let form = self.form(k)?;
        let mut idx = form.items.clone();
        idx.push(self.p());
        Ok(idx)
    }

    pub fn form(&self, k: usize) -> Result<&Form, DesignError> {
        self.forms.get(k).ok_or(DesignError::Index {
            index: k,
            count: self.forms.len(),
        })
    }

    pub fn selector(&self, k: usize) -> Result<SelectorMatrix, DesignError> {
        let rows = self.administered(k)?.into_iter().map(|i| i + 1).collect();
        Ok(SelectorMatrix {
            form: k,
            width: self.p() + 2,
            rows,
        })
    }

    /// Pairwise co-observation check over all variables including the outcome.
    pub fn validate_estimability(&self) -> EstimabilityReport {
        let p = self.p();
        let sets: Vec<Vec<usize>> = (0..self.form_count())
            .map(|k| self.administered(k).expect("valid form index"))
            .collect();
        let mut pairs = Vec::new();
        let mut uncovered = Vec::new();
        for a in 0..=p {
            for b in a..=p {
                let forms: Vec<usize> = sets
                    .iter()
                    .enumerate()
                    .filter(|(k, s)| {
                        self.forms[*k].fraction > 0.0 && s.contains(&a) && s.contains(&b)
                    })
                    .map(|(k, _)| k)
                    .collect();
                if forms.is_empty() {
                    uncovered.push((self.name_of(a).to_string(), self.name_of(b).to_string()));
                }
                pairs.push(PairCoverage {
                    first: self.name_of(a).to_string(),
                    second: self.name_of(b).to_string(),
                    forms,
                });
            }
        }
        EstimabilityReport {
            singular: !uncovered.is_empty(),
            pair_coverage: pairs,
            uncovered_pairs: uncovered,
        }
    }
}

/// 0/1 selector over moment coordinates `(1, x₁, …, x_p, y)`; row `r`
/// picks column `rows[r]`. The intercept column is never selected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectorMatrix {
    pub form: usize,
    pub width: usize,
    pub rows: Vec<usize>,
}

impl SelectorMatrix {
    pub fn to_matrix<T: Scalar>(&self) -> Matrix<T> {
        Matrix::from_fn(self.rows.len(), self.width, |r, c| {
            if self.rows[r] == c {
                T::one()
            } else {
                T::zero()
            }
        })
    }

    /// `F·v` for a vector in moment coordinates.
    pub fn apply<T: Copy>(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.width, "vector must have p + 2 entries");
        self.rows.iter().map(|&c| v[c]).collect()
    }
}

/// Coverage of one unordered variable pair (a diagonal pair `(v, v)` records
/// which forms observe `v` at all).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairCoverage {
    pub first: String,
    pub second: String,
    pub forms: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimabilityReport {
    pub pair_coverage: Vec<PairCoverage>,
    pub singular: bool,
    pub uncovered_pairs: Vec<(String, String)>,
}

impl EstimabilityReport {
    pub fn coverage(&self, a: &str, b: &str) -> Option<&PairCoverage> {
        self.pair_coverage
            .iter()
            .find(|c| (c.first == a && c.second == b) || (c.first == b && c.second == a))
    }
}

fn numbered(prefix: &str, p: usize) -> Vec<String> {
    (1..=p).map(|i| format!("{prefix}{i}")).collect()
}

fn equal_forms(sets: Vec<Vec<usize>>) -> Vec<Form> {
    let frac = 1.0 / sets.len() as f64;
    sets.into_iter()
        .enumerate()
        .map(|(k, items)| Form {
            name: (k + 1).to_string(),
            items,
            fraction: frac,
        })
        .collect()
}

/// Single form with every regressor.
pub fn complete_design(variables: Vec<String>, outcome: &str) -> Design {
    let all = (0..variables.len()).collect();
    Design::new(variables, outcome, equal_forms(vec![all])).expect("complete design is valid")
}

/// Three forms, each with a single regressor. Not estimable.
pub fn design1() -> Design {
    Design::new(
        numbered("x", 3),
        "y",
        equal_forms(vec![vec![0], vec![1], vec![2]]),
    )
    .expect("builtin design is valid")
}

/// Three forms, each dropping one regressor.
pub fn design2() -> Design {
    Design::new(
        numbered("x", 3),
        "y",
        equal_forms(vec![vec![1, 2], vec![0, 2], vec![0, 1]]),
    )
    .expect("builtin design is valid")
}

/// Every pair of `p` regressors on its own form, equal allocation.
pub fn balanced_pairs_design(p: usize) -> Result<Design, DesignError> {
    if p < 2 {
        return Err(DesignError::Domain(format!(
            "balanced pairs need at least two regressors, got {p}"
        )));
    }
    balanced_pairs_named(numbered("x", p), "y")
}

fn balanced_pairs_named(variables: Vec<String>, outcome: &str) -> Result<Design, DesignError> {
    let p = variables.len();
    let mut sets = Vec::with_capacity(p * (p - 1) / 2);
    for a in 0..p {
        for b in (a + 1)..p {
            sets.push(vec![a, b]);
        }
    }
    Design::new(variables, outcome, equal_forms(sets))
}

pub const BIG_FIVE_NAMES: [&str; 5] = ["O", "C", "E", "A", "N"];

/// Ten-form design administering two of the five trait scores plus the
/// outcome on each form, 10% of the sample per form.
pub fn builtin_bigfive() -> Design {
    balanced_pairs_named(BIG_FIVE_NAMES.iter().map(|s| s.to_string()).collect(), "y")
        .expect("builtin design is valid")
}
