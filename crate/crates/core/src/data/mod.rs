//! Panel data model: variable metadata, (individual, year) records and the
//! rotating-panel container, plus CSV ingestion and a synthetic generator.

mod csv_io;
mod synthetic;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use csv_io::{ingest_csv, read_csv, write_csv};
pub use synthetic::{generate_synthetic_panel, LatentDynamics, SuppEmission, SyntheticPanel, WINDOW_YEARS};

/// Errors raised while building or reading panels.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid variable spec: {0}")]
    InvalidSpec(String),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("line {line}: modality out of range for `{variable}`")]
    ModalityOutOfRange { line: usize, variable: String },
    #[error("line {line}: cannot parse `{value}` for `{column}`")]
    Parse {
        line: usize,
        column: String,
        value: String,
    },
    #[error("line {line}: duplicate observation")]
    DuplicateObservation { line: usize },
    #[error("gap in years for individual `{0}`")]
    GapInYears(String),
    #[error("record has {found} answers, expected {expected}")]
    Arity { expected: usize, found: usize },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Active,
    Supplementary,
}

/// Measurement kind of a variable. Active variables are always categorical.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "type")]
pub enum VariableKind {
    Categorical { modalities: u16 },
    Numeric,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variable {
    pub id: String,
    pub name: String,
    pub role: Role,
    pub kind: VariableKind,
}

impl Variable {
    pub fn modality_count(&self) -> Option<u16> {
        match self.kind {
            VariableKind::Categorical { modalities } => Some(modalities),
            VariableKind::Numeric => None,
        }
    }
}

/// Ordered variable metadata. Active variables come first in record layout,
/// independently of their position in `variables`.
///
/// The last modality of every active variable is the "no answer" modality.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableSpec {
    variables: Vec<Variable>,
}

impl VariableSpec {
    pub fn new(variables: Vec<Variable>) -> Result<Self, DataError> {
        let mut seen = std::collections::BTreeSet::new();
        for v in &variables {
            if v.id.is_empty() || v.id == "id" || v.id == "year" {
                return Err(DataError::InvalidSpec(format!("reserved or empty id `{}`", v.id)));
            }
            if !seen.insert(v.id.as_str()) {
                return Err(DataError::InvalidSpec(format!("duplicate variable `{}`", v.id)));
            }
            match (v.role, v.kind) {
                (Role::Active, VariableKind::Categorical { modalities }) if modalities >= 2 => {}
                (Role::Active, _) => {
                    return Err(DataError::InvalidSpec(format!(
                        "active variable `{}` needs at least 2 modalities",
                        v.id
                    )))
                }
                (Role::Supplementary, VariableKind::Categorical { modalities: 0 }) => {
                    return Err(DataError::InvalidSpec(format!("`{}` has no modalities", v.id)))
                }
                _ => {}
            }
        }
        let spec = Self { variables };
        if spec.q() == 0 {
            return Err(DataError::InvalidSpec("no active variable".into()));
        }
        Ok(spec)
    }

    /// The survey layout used throughout the demo: 22 active variables with
    /// 99 modalities in total, plus 28 supplementary variables.
    pub fn emploi_default() -> Self {
        let mut variables = Vec::with_capacity(50);
        for i in 0..22 {
            let modalities = if i < 11 { 5 } else { 4 };
            variables.push(Variable {
                id: format!("A{:02}", i + 1),
                name: format!("active {}", i + 1),
                role: Role::Active,
                kind: VariableKind::Categorical { modalities },
            });
        }
        for i in 0..28 {
            let kind = if i < 20 {
                VariableKind::Categorical { modalities: 3 + (i % 4) as u16 }
            } else {
                VariableKind::Numeric
            };
            variables.push(Variable {
                id: format!("S{:02}", i + 1),
                name: format!("supplementary {}", i + 1),
                role: Role::Supplementary,
                kind,
            });
        }
        Self::new(variables).expect("default spec is valid")
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn active(&self) -> impl Iterator<Item = &Variable> {
        self.variables.iter().filter(|v| v.role == Role::Active)
    }

    pub fn supplementary(&self) -> impl Iterator<Item = &Variable> {
        self.variables.iter().filter(|v| v.role == Role::Supplementary)
    }

    /// Number of active variables.
    pub fn q(&self) -> usize {
        self.active().count()
    }

    /// Total modality count over active variables.
    pub fn j(&self) -> usize {
        self.active_modalities().iter().map(|&m| m as usize).sum()
    }

    pub fn active_modalities(&self) -> Vec<u16> {
        self.active().filter_map(Variable::modality_count).collect()
    }
}

/// Value of a supplementary variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SuppValue {
    Modality(u16),
    Numeric(f64),
    Missing,
}

impl fmt::Display for SuppValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SuppValue::Modality(m) => write!(f, "{m}"),
            SuppValue::Numeric(x) => write!(f, "{x}"),
            SuppValue::Missing => Ok(()),
        }
    }
}

/// One (individual, year) observation. `answers` follows the order of
/// [`VariableSpec::active`], `supplementary` the order of
/// [`VariableSpec::supplementary`]. Modalities are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelRecord {
    pub individual_id: String,
    pub year: i32,
    pub answers: Vec<u16>,
    pub supplementary: Vec<SuppValue>,
}

/// A validated rotating panel.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    spec: VariableSpec,
    records: Vec<PanelRecord>,
    year_range: Option<(i32, i32)>,
}

impl Panel {
    /// Validates every record against `spec` and the panel invariants:
    /// unique (individual, year) pairs and gap-free years per individual.
    pub fn new(spec: VariableSpec, records: Vec<PanelRecord>) -> Result<Self, DataError> {
        // Line numbers in errors assume a header line, matching CSV ingestion.
        let modalities = spec.active_modalities();
        let supp: Vec<&Variable> = spec.supplementary().collect();
        let active_ids: Vec<&str> = spec.active().map(|v| v.id.as_str()).collect();
        let mut years_of: BTreeMap<&str, Vec<i32>> = BTreeMap::new();
        for (idx, rec) in records.iter().enumerate() {
            let line = idx + 2;
            if rec.answers.len() != modalities.len() {
                return Err(DataError::Arity {
                    expected: modalities.len(),
                    found: rec.answers.len(),
                });
            }
            if rec.supplementary.len() != supp.len() {
                return Err(DataError::Arity {
                    expected: supp.len(),
                    found: rec.supplementary.len(),
                });
            }
            for (a, (&m, &count)) in rec.answers.iter().zip(&modalities).enumerate() {
                if m == 0 || m > count {
                    return Err(DataError::ModalityOutOfRange {
                        line,
                        variable: active_ids[a].to_string(),
                    });
                }
            }
            for (value, var) in rec.supplementary.iter().zip(&supp) {
                let ok = match (value, var.kind) {
                    (SuppValue::Missing, _) => true,
                    (SuppValue::Modality(m), VariableKind::Categorical { modalities }) => {
                        *m >= 1 && *m <= modalities
                    }
                    (SuppValue::Numeric(x), VariableKind::Numeric) => x.is_finite(),
                    _ => false,
                };
                if !ok {
                    return Err(DataError::ModalityOutOfRange {
                        line,
                        variable: var.id.clone(),
                    });
                }
            }
            let years = years_of.entry(rec.individual_id.as_str()).or_default();
            if years.contains(&rec.year) {
                return Err(DataError::DuplicateObservation { line });
            }
            years.push(rec.year);
        }
        for (id, years) in &mut years_of {
            years.sort_unstable();
            if years.windows(2).any(|w| w[1] != w[0] + 1) {
                return Err(DataError::GapInYears(id.to_string()));
            }
        }
        let year_range = records.iter().map(|r| r.year).fold(None, |acc, y| match acc {
            None => Some((y, y)),
            Some((lo, hi)) => Some((lo.min(y), hi.max(y))),
        });
        Ok(Self {
            spec,
            records,
            year_range,
        })
    }

    pub fn empty(spec: VariableSpec) -> Self {
        Self {
            spec,
            records: Vec::new(),
            year_range: None,
        }
    }

    pub fn spec(&self) -> &VariableSpec {
        &self.spec
    }

    pub fn records(&self) -> &[PanelRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `(first_year, last_year)`, or `None` for an empty panel.
    pub fn year_range(&self) -> Option<(i32, i32)> {
        self.year_range
    }

    /// Distinct individuals in order of first appearance.
    pub fn individuals(&self) -> Vec<&str> {
        let mut seen = std::collections::HashSet::new();
        self.records
            .iter()
            .map(|r| r.individual_id.as_str())
            .filter(|id| seen.insert(*id))
            .collect()
    }

    /// Keeps individuals observed in at least `min_consecutive` consecutive
    /// years. Years are gap-free by construction, so the span is the record
    /// count. Record order is preserved.
    pub fn filter(&self, min_consecutive: usize) -> Panel {
        let mut span: BTreeMap<&str, usize> = BTreeMap::new();
        for r in &self.records {
            *span.entry(r.individual_id.as_str()).or_default() += 1;
        }
        let records: Vec<PanelRecord> = self
            .records
            .iter()
            .filter(|r| span[r.individual_id.as_str()] >= min_consecutive.max(1))
            .cloned()
            .collect();
        Panel::new(self.spec.clone(), records).expect("subset of a valid panel is valid")
    }
}

/// Retains only individuals with at least `min_consecutive` observed years.
pub fn filter_panel(panel: &Panel, min_consecutive: usize) -> Panel {
    panel.filter(min_consecutive)
}
