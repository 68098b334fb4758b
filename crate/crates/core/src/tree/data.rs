//! Column-oriented training matrices.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::domain::{FeatureKind, FeatureRef};
use crate::error::{CasemixError, Result};

/// A model input feature. Categorical levels are those seen in training,
/// sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeFeature {
    pub name: String,
    #[serde(flatten)]
    pub kind: TreeFeatureKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TreeFeatureKind {
    Numeric,
    Categorical { levels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Numeric(Vec<f64>),
    /// Codes index into the feature's `levels`.
    Categorical(Vec<u32>),
}

/// Fully observed training features, one column per feature.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingData {
    pub features: Vec<TreeFeature>,
    pub columns: Vec<Column>,
    n_rows: usize,
}

impl TrainingData {
    /// Numeric-only data from row-major values.
    pub fn from_numeric_rows(names: &[&str], rows: &[Vec<f64>]) -> Result<Self> {
        let mut columns = vec![Vec::with_capacity(rows.len()); names.len()];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != names.len() {
                return Err(CasemixError::invalid(format!(
                    "row {i} has {} values, expected {}",
                    row.len(),
                    names.len()
                )));
            }
            for (c, x) in columns.iter_mut().zip(row) {
                c.push(*x);
            }
        }
        let features = names
            .iter()
            .map(|n| TreeFeature {
                name: n.to_string(),
                kind: TreeFeatureKind::Numeric,
            })
            .collect();
        TrainingData::new(features, columns.into_iter().map(Column::Numeric).collect())
    }

    pub fn new(features: Vec<TreeFeature>, columns: Vec<Column>) -> Result<Self> {
        if features.len() != columns.len() {
            return Err(CasemixError::invalid("feature and column counts differ"));
        }
        let n_rows = columns.first().map_or(0, |c| match c {
            Column::Numeric(v) => v.len(),
            Column::Categorical(v) => v.len(),
        });
        for (f, c) in features.iter().zip(&columns) {
            match (&f.kind, c) {
                (TreeFeatureKind::Numeric, Column::Numeric(v)) => {
                    if v.len() != n_rows {
                        return Err(CasemixError::invalid(format!("column {} has wrong length", f.name)));
                    }
                    if v.iter().any(|x| !x.is_finite()) {
                        return Err(CasemixError::invalid(format!("column {} has non-finite values", f.name)));
                    }
                }
                (TreeFeatureKind::Categorical { levels }, Column::Categorical(v)) => {
                    if levels.windows(2).any(|w| w[0] >= w[1]) {
                        return Err(CasemixError::invalid(format!("levels of {} must be sorted and unique", f.name)));
                    }
                    if v.len() != n_rows {
                        return Err(CasemixError::invalid(format!("column {} has wrong length", f.name)));
                    }
                    if v.iter().any(|&c| c as usize >= levels.len()) {
                        return Err(CasemixError::invalid(format!("column {} has an unknown level code", f.name)));
                    }
                }
                _ => {
                    return Err(CasemixError::invalid(format!(
                        "column {} does not match its feature kind",
                        f.name
                    )))
                }
            }
        }
        Ok(TrainingData {
            features,
            columns,
            n_rows,
        })
    }

    /// Extracts the named features from a dataset. Every cell must be
    /// present; impute first.
    pub fn from_dataset(ds: &Dataset, names: &[String]) -> Result<Self> {
        let mut features = Vec::with_capacity(names.len());
        let mut columns = Vec::with_capacity(names.len());
        for name in names {
            let kind = ds
                .schema
                .feature_kind(name)
                .ok_or_else(|| CasemixError::SchemaMismatch(format!("unknown feature {name:?}")))?;
            let mut cells = Vec::with_capacity(ds.len());
            for r in &ds.records {
                match r.feature(name)? {
                    Some(v) => cells.push(v),
                    None => {
                        return Err(CasemixError::invalid(format!(
                            "record {} has a missing {name}; impute before training",
                            r.id
                        )))
                    }
                }
            }
            match kind {
                FeatureKind::Numeric => {
                    let v = cells
                        .iter()
                        .map(|c| match c {
                            FeatureRef::Num(x) => Ok(*x),
                            FeatureRef::Cat(_) => Err(CasemixError::SchemaMismatch(format!("{name} is not numeric"))),
                        })
                        .collect::<Result<Vec<f64>>>()?;
                    features.push(TreeFeature {
                        name: name.clone(),
                        kind: TreeFeatureKind::Numeric,
                    });
                    columns.push(Column::Numeric(v));
                }
                FeatureKind::Categorical => {
                    let text: Vec<&str> = cells
                        .iter()
                        .map(|c| match c {
                            FeatureRef::Cat(s) => Ok(*s),
                            FeatureRef::Num(_) => Err(CasemixError::SchemaMismatch(format!("{name} is not categorical"))),
                        })
                        .collect::<Result<_>>()?;
                    let levels: Vec<String> = text
                        .iter()
                        .copied()
                        .collect::<BTreeSet<&str>>()
                        .into_iter()
                        .map(str::to_string)
                        .collect();
                    let codes = text
                        .iter()
                        .map(|s| levels.binary_search_by(|l| l.as_str().cmp(s)).expect("level present") as u32)
                        .collect();
                    features.push(TreeFeature {
                        name: name.clone(),
                        kind: TreeFeatureKind::Categorical { levels },
                    });
                    columns.push(Column::Categorical(codes));
                }
            }
        }
        TrainingData::new(features, columns)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    /// The row as borrowed feature values, in feature order.
    pub fn row(&self, i: usize) -> Vec<Option<FeatureRef<'_>>> {
        self.features
            .iter()
            .zip(&self.columns)
            .map(|(f, c)| {
                Some(match (c, &f.kind) {
                    (Column::Numeric(v), _) => FeatureRef::Num(v[i]),
                    (Column::Categorical(v), TreeFeatureKind::Categorical { levels }) => {
                        FeatureRef::Cat(&levels[v[i] as usize])
                    }
                    _ => unreachable!("checked in TrainingData::new"),
                })
            })
            .collect()
    }

    /// Keeps only the given rows (repeats allowed), in order.
    pub fn select_rows(&self, rows: &[usize]) -> TrainingData {
        let columns = self
            .columns
            .iter()
            .map(|c| match c {
                Column::Numeric(v) => Column::Numeric(rows.iter().map(|&i| v[i]).collect()),
                Column::Categorical(v) => Column::Categorical(rows.iter().map(|&i| v[i]).collect()),
            })
            .collect();
        TrainingData {
            features: self.features.clone(),
            columns,
            n_rows: rows.len(),
        }
    }
}
