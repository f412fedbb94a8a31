//! Model specification grammar and CSV data ingestion.
//!
//! A model spec is a list of `key = value` statements separated by newlines
//! or semicolons, with `#` comments:
//!
//! ```text
//! response = y
//! groups = subject
//! random = intercept + x1 @ subject
//! family = bernoulli
//! ```
//!
//! Optional keys: `covariates` (defaults to every column that is neither the
//! response nor a grouping column), `structure` (`scalar`, `diagonal` or
//! `unstructured`, one entry per random term or a single broadcast value),
//! plus run settings (`lambda`, `path`, `two_stage`, `mode`, `seed`,
//! `workers`, `out`, `standardize`, `replicates`, `design`) that mirror the
//! command-line flags. Unknown keys are rejected.

use crate::error::{Error, Result};
use crate::family::FamilySpec;
use crate::model::{BlockStructure, Dataset, GroupingFactor, ReTerm};
use crate::problem::Problem;
use ndarray::{Array1, Array2};
use std::collections::HashMap;
use std::path::Path;

/// One random-effects declaration: the named columns (with `intercept` for
/// the constant term) under one grouping column.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomTerm {
    pub columns: Vec<String>,
    pub group: String,
}

/// Parsed model specification.
#[derive(Debug, Clone, Default)]
pub struct ModelSpec {
    pub response: Option<String>,
    pub groups: Vec<String>,
    pub random: Vec<RandomTerm>,
    pub family: Option<String>,
    pub covariates: Option<Vec<String>>,
    pub structures: Vec<String>,
    /// Run settings that mirror command-line flags.
    pub settings: HashMap<String, String>,
}

const SETTING_KEYS: &[&str] = &[
    "lambda",
    "path",
    "two_stage",
    "mode",
    "seed",
    "workers",
    "out",
    "standardize",
    "replicates",
    "design",
];

fn split_list(v: &str) -> Vec<String> {
    v.split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

impl ModelSpec {
    pub fn parse(text: &str) -> Result<ModelSpec> {
        let mut spec = ModelSpec::default();
        for (lineno, raw_line) in text.lines().enumerate() {
            let line = raw_line.split('#').next().unwrap_or("");
            for stmt in line.split(';') {
                let stmt = stmt.trim();
                if stmt.is_empty() {
                    continue;
                }
                let (key, value) = stmt.split_once('=').ok_or_else(|| {
                    Error::invalid(format!(
                        "spec line {}: expected `key = value`, got `{stmt}`",
                        lineno + 1
                    ))
                })?;
                let key = key.trim();
                let value = value.trim();
                if value.is_empty() {
                    return Err(Error::invalid(format!(
                        "spec line {}: empty value for `{key}`",
                        lineno + 1
                    )));
                }
                match key {
                    "response" => spec.response = Some(value.to_string()),
                    "groups" => spec.groups = split_list(value),
                    "family" => spec.family = Some(value.to_string()),
                    "covariates" => spec.covariates = Some(split_list(value)),
                    "structure" => spec.structures = split_list(value),
                    "random" => {
                        for term in value.split(',') {
                            let term = term.trim();
                            if term.is_empty() {
                                continue;
                            }
                            let (cols, group) = term.split_once('@').ok_or_else(|| {
                                Error::invalid(format!(
                                    "spec line {}: random term `{term}` needs `columns @ group`",
                                    lineno + 1
                                ))
                            })?;
                            let columns: Vec<String> = cols
                                .split('+')
                                .map(|c| c.trim().to_string())
                                .filter(|c| !c.is_empty())
                                .collect();
                            if columns.is_empty() {
                                return Err(Error::invalid(format!(
                                    "spec line {}: random term without columns",
                                    lineno + 1
                                )));
                            }
                            spec.random.push(RandomTerm {
                                columns,
                                group: group.trim().to_string(),
                            });
                        }
                    }
                    k if SETTING_KEYS.contains(&k) => {
                        spec.settings.insert(k.to_string(), value.to_string());
                    }
                    other => {
                        return Err(Error::invalid(format!(
                            "spec line {}: unknown key `{other}`",
                            lineno + 1
                        )))
                    }
                }
            }
        }
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<ModelSpec> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    fn require(&self) -> Result<(&str, &str)> {
        let response = self
            .response
            .as_deref()
            .ok_or_else(|| Error::invalid("model spec is missing `response`"))?;
        let family = self
            .family
            .as_deref()
            .ok_or_else(|| Error::invalid("model spec is missing `family`"))?;
        if self.random.is_empty() {
            return Err(Error::invalid("model spec is missing `random`"));
        }
        Ok((response, family))
    }
}

/// A CSV file read into named string columns, in file order.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub columns: Vec<Vec<String>>,
}

impl RawTable {
    pub fn read(path: &Path) -> Result<RawTable> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        let headers: Vec<String> = reader
            .headers()
            .map_err(|e| Error::invalid(format!("{}: bad header: {e}", path.display())))?
            .iter()
            .map(|h| h.to_string())
            .collect();
        if headers.is_empty() {
            return Err(Error::invalid(format!("{}: empty header", path.display())));
        }
        let mut columns: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
        for (i, record) in reader.records().enumerate() {
            let record = record
                .map_err(|e| Error::invalid(format!("{}: row {}: {e}", path.display(), i + 2)))?;
            if record.len() != headers.len() {
                return Err(Error::invalid(format!(
                    "{}: row {}: {} fields, expected {}",
                    path.display(),
                    i + 2,
                    record.len(),
                    headers.len()
                )));
            }
            for (j, field) in record.iter().enumerate() {
                columns[j].push(field.to_string());
            }
        }
        if columns[0].is_empty() {
            return Err(Error::invalid(format!("{}: no data rows", path.display())));
        }
        Ok(RawTable { headers, columns })
    }

    pub fn n_rows(&self) -> usize {
        self.columns[0].len()
    }

    pub fn column(&self, name: &str) -> Result<&Vec<String>> {
        let j = self
            .headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "column `{name}` not found; available: {}",
                    self.headers.join(", ")
                ))
            })?;
        Ok(&self.columns[j])
    }

    /// Parse a column as finite numbers, rejecting NaN/Inf and non-numeric
    /// cells with the offending data row number.
    pub fn numeric_column(&self, name: &str) -> Result<Vec<f64>> {
        let raw = self.column(name)?;
        let mut out = Vec::with_capacity(raw.len());
        for (i, cell) in raw.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                Error::invalid(format!(
                    "column `{name}`, row {}: `{cell}` is not a number",
                    i + 2
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::invalid(format!(
                    "column `{name}`, row {}: non-finite value `{cell}`",
                    i + 2
                )));
            }
            out.push(v);
        }
        Ok(out)
    }
}

fn parse_structure(name: &str) -> Result<BlockStructure> {
    match name {
        "scalar" | "scalar_identity" => Ok(BlockStructure::ScalarIdentity),
        "diagonal" => Ok(BlockStructure::Diagonal),
        "unstructured" | "unstructured_lower" => Ok(BlockStructure::UnstructuredLower),
        other => Err(Error::invalid(format!(
            "unknown covariance structure `{other}` (use scalar, diagonal or unstructured)"
        ))),
    }
}

/// Covariance structures for the spec's random terms: explicit entries, a
/// single broadcast entry, or the default (scalar for one column, diagonal
/// otherwise).
pub fn spec_structures(spec: &ModelSpec) -> Result<Vec<BlockStructure>> {
    let n_terms = spec.random.len();
    if spec.structures.is_empty() {
        return Ok(spec
            .random
            .iter()
            .map(|t| {
                if t.columns.len() == 1 {
                    BlockStructure::ScalarIdentity
                } else {
                    BlockStructure::Diagonal
                }
            })
            .collect());
    }
    let parsed: Vec<BlockStructure> = spec
        .structures
        .iter()
        .map(|s| parse_structure(s))
        .collect::<Result<_>>()?;
    if parsed.len() == 1 {
        return Ok(vec![parsed[0]; n_terms]);
    }
    if parsed.len() != n_terms {
        return Err(Error::invalid(format!(
            "{} structures given for {} random terms",
            parsed.len(),
            n_terms
        )));
    }
    Ok(parsed)
}

/// Assemble a dataset from a CSV table and a model spec. The design matrix
/// is `[intercept, covariates...]` with the intercept named `(Intercept)`.
pub fn build_dataset(table: &RawTable, spec: &ModelSpec) -> Result<(Dataset, FamilySpec)> {
    let (response, family_name) = spec.require()?;
    let family = FamilySpec::from_name(family_name)?;
    let n = table.n_rows();

    let y = Array1::from_vec(table.numeric_column(response)?);
    for (i, &v) in y.iter().enumerate() {
        family.check_y(v).map_err(|e| {
            Error::invalid(format!("response `{response}`, row {}: {e}", i + 2))
        })?;
    }

    let group_names: Vec<String> = if spec.groups.is_empty() {
        // fall back to the groups referenced by random terms, in order
        let mut names = Vec::new();
        for t in &spec.random {
            if !names.contains(&t.group) {
                names.push(t.group.clone());
            }
        }
        names
    } else {
        spec.groups.clone()
    };
    if group_names.is_empty() {
        return Err(Error::invalid("no grouping columns declared"));
    }
    let mut groups = Vec::new();
    for g in &group_names {
        groups.push(GroupingFactor::from_labels(g, table.column(g)?));
    }

    let covariate_names: Vec<String> = match &spec.covariates {
        Some(list) => list.clone(),
        None => table
            .headers
            .iter()
            .filter(|h| h.as_str() != response && !group_names.iter().any(|g| g == *h))
            .cloned()
            .collect(),
    };

    let p = covariate_names.len() + 1;
    let mut x = Array2::from_elem((n, p), 1.0);
    let mut col_names = vec!["(Intercept)".to_string()];
    for (j, name) in covariate_names.iter().enumerate() {
        let col = table.numeric_column(name)?;
        for i in 0..n {
            x[[i, j + 1]] = col[i];
        }
        col_names.push(name.clone());
    }

    let col_index = |name: &str| -> Result<usize> {
        if name == "intercept" || name == "(Intercept)" {
            return Ok(0);
        }
        col_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::invalid(format!("random-effect column `{name}` is not a covariate")))
    };
    let mut re_terms = Vec::new();
    for t in &spec.random {
        let factor = group_names
            .iter()
            .position(|g| g == &t.group)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "random term refers to `{}` which is not a grouping column",
                    t.group
                ))
            })?;
        let columns: Vec<usize> = t
            .columns
            .iter()
            .map(|c| col_index(c))
            .collect::<Result<_>>()?;
        re_terms.push(ReTerm { factor, columns });
    }

    let dataset = Dataset::new(y, x, col_names, groups, re_terms)?;
    Ok((dataset, family))
}

/// Build a full problem from a CSV file and a model spec file.
pub fn load_problem(data: &Path, spec: &ModelSpec) -> Result<Problem> {
    let table = RawTable::read(data)?;
    let (dataset, family) = build_dataset(&table, spec)?;
    let structures = spec_structures(spec)?;
    let template = crate::model::CovarianceTemplate::new(&dataset, &structures)?;
    Problem::new(dataset, template, family)
}

/// Column contract for seizure-count panel data in the classic epilepsy
/// layout: one row per clinic visit with columns `y` (seizure count during
/// the visit period), `subject` (patient id, 4 visits each), `Base`
/// (log quarter-baseline count), `Trt` (treatment indicator), `Age`
/// (log age) and `V4` (fourth-visit indicator). Returns the poisson
/// random-intercept spec for that layout; the data file is supplied by the
/// user.
pub fn epilepsy_spec() -> ModelSpec {
    ModelSpec::parse(
        "response = y\n\
         groups = subject\n\
         random = intercept @ subject\n\
         family = poisson\n\
         covariates = Base, Trt, Age, V4\n",
    )
    .expect("static spec parses")
}
