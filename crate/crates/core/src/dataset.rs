//! Cohort containers and the cohort CSV format.
//!
//! One row per patient. Fixed columns come first (`id`, `age_years`,
//! `los_days`, `total_cost`, `tbsa_pct`, `theatre_visits`, the 27
//! `site_NN_area` columns, then the 27 `site_NN_depth` columns); every other
//! column is an auxiliary feature, kept in header order. An empty cell is a
//! missing value. An optional trailing `class_label` column carries labels.

use std::io::{Read, Write};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::domain::{
    self, BurnSiteEntry, Depth, FeatureKind, FeatureValue, PatientRecord, RankedClassLabel,
    SiteCode, Validation, AGE, COST, LOS, SITE_COUNT, TBSA, THEATRE,
};
use crate::error::{CasemixError, Result};

pub const LABEL_COLUMN: &str = "class_label";

/// An auxiliary feature column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtraColumn {
    pub name: String,
    pub kind: FeatureKind,
}

/// Column layout of a dataset. Fixed columns are implicit; only auxiliary
/// columns are listed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub extra: Vec<ExtraColumn>,
}

/// A feature usable by models.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
}

impl Schema {
    pub fn column(&self, name: &str) -> Option<&ExtraColumn> {
        self.extra.iter().find(|c| c.name == name)
    }

    /// Every feature in canonical order: fixed numeric fields, site areas,
    /// site depths, then auxiliary columns.
    pub fn features(&self) -> Vec<FeatureSpec> {
        let numeric = |name: String| FeatureSpec {
            name,
            kind: FeatureKind::Numeric,
        };
        let mut out: Vec<FeatureSpec> = [AGE, LOS, COST, TBSA, THEATRE]
            .iter()
            .map(|n| numeric(n.to_string()))
            .collect();
        out.extend(SiteCode::all().map(|s| numeric(s.area_column())));
        out.extend(SiteCode::all().map(|s| FeatureSpec {
            name: s.depth_column(),
            kind: FeatureKind::Categorical,
        }));
        out.extend(self.extra.iter().map(|c| FeatureSpec {
            name: c.name.clone(),
            kind: c.kind,
        }));
        out
    }

    pub fn feature_kind(&self, name: &str) -> Option<FeatureKind> {
        match name {
            AGE | LOS | COST | TBSA | THEATRE => Some(FeatureKind::Numeric),
            _ => match domain::parse_site_column(name) {
                Some((_, true)) => Some(FeatureKind::Numeric),
                Some((_, false)) => Some(FeatureKind::Categorical),
                None => self.column(name).map(|c| c.kind),
            },
        }
    }
}

/// An ordered cohort.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub schema: Schema,
    pub records: Vec<PatientRecord>,
    pub labels: Option<Vec<RankedClassLabel>>,
}

impl Dataset {
    pub fn new(schema: Schema, records: Vec<PatientRecord>) -> Self {
        Dataset {
            schema,
            records,
            labels: None,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Validates every record; returns `(row index, validation)` for failures.
    pub fn validate(&self) -> Vec<(usize, Validation)> {
        self.records
            .iter()
            .enumerate()
            .map(|(i, r)| (i, domain::validate_record(r, &self.schema)))
            .filter(|(_, v)| !v.is_ok())
            .collect()
    }

    /// Keeps the records (and labels) at `keep` positions, in order.
    pub fn select(&self, keep: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            records: keep.iter().map(|&i| self.records[i].clone()).collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| keep.iter().map(|&i| l[i]).collect()),
        }
    }

    /// Extracts a numeric fixed field, treating missing as an error.
    pub fn factor_values(&self, name: &str) -> Result<Vec<f64>> {
        self.records
            .iter()
            .map(|r| match r.feature(name)? {
                Some(domain::FeatureRef::Num(x)) => Ok(x),
                Some(_) => Err(CasemixError::SchemaMismatch(format!("{name} is not numeric"))),
                None => Err(CasemixError::invalid(format!(
                    "record {} has a missing {name}; impute before use",
                    r.id
                ))),
            })
            .collect()
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
        read_csv(reader)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_csv(self, writer)
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

fn fixed_header() -> Vec<String> {
    let mut h: Vec<String> = ["id", AGE, LOS, COST, TBSA, THEATRE]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend(SiteCode::all().map(SiteCode::area_column));
    h.extend(SiteCode::all().map(SiteCode::depth_column));
    h
}

fn fmt_num(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn write_csv<W: Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = fixed_header();
    header.extend(ds.schema.extra.iter().map(|c| c.name.clone()));
    if ds.labels.is_some() {
        header.push(LABEL_COLUMN.to_string());
    }
    w.write_record(&header)?;

    for (i, r) in ds.records.iter().enumerate() {
        if r.burn_sites.len() != SITE_COUNT {
            return Err(CasemixError::invalid(format!(
                "record {} has {} burn sites",
                r.id,
                r.burn_sites.len()
            )));
        }
        let mut row = Vec::with_capacity(header.len());
        row.push(r.id.clone());
        row.push(fmt_num(r.age_years));
        row.push(fmt_num(r.los_days));
        row.push(fmt_num(r.total_cost));
        row.push(fmt_num(r.tbsa_pct));
        row.push(r.theatre_visits.map(|v| v.to_string()).unwrap_or_default());
        row.extend(r.burn_sites.iter().map(|s| fmt_num(s.area_pct)));
        row.extend(
            r.burn_sites
                .iter()
                .map(|s| s.depth.map(|d| d.as_str().to_string()).unwrap_or_default()),
        );
        for col in &ds.schema.extra {
            row.push(match r.extra_features.get(&col.name) {
                Some(Some(FeatureValue::Numeric(x))) => x.to_string(),
                Some(Some(FeatureValue::Categorical(s))) => s.clone(),
                _ => String::new(),
            });
        }
        if let Some(labels) = &ds.labels {
            row.push(labels[i].to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_opt_f64(cell: &str, line: u64, column: &str) -> Result<Option<f64>> {
    if cell.is_empty() {
        return Ok(None);
    }
    cell.parse::<f64>()
        .map(Some)
        .map_err(|e| CasemixError::parse(format!("line {line}, column {column}"), e))
}

fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let fixed = fixed_header();
    if header.len() < fixed.len() || header[..fixed.len()] != fixed[..] {
        let missing = fixed
            .iter()
            .zip(header.iter().chain(std::iter::repeat(&String::new())))
            .find(|(want, got)| want != got)
            .map(|(want, _)| want.clone())
            .unwrap_or_default();
        return Err(CasemixError::parse(
            "line 1",
            format!("header must start with the fixed cohort columns; expected {missing:?}"),
        ));
    }
    let mut extra_names: Vec<String> = header[fixed.len()..].to_vec();
    let has_labels = extra_names.last().map(String::as_str) == Some(LABEL_COLUMN);
    if has_labels {
        extra_names.pop();
    }

    let rows: Vec<(u64, csv::StringRecord)> = rdr
        .records()
        .map(|r| {
            let r = r?;
            let line = r.position().map(|p| p.line()).unwrap_or(0);
            Ok((line, r))
        })
        .collect::<Result<_>>()?;

    // Auxiliary column kinds: numeric when every non-empty cell parses.
    let base = fixed.len();
    let extra: Vec<ExtraColumn> = extra_names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let numeric = rows
                .iter()
                .map(|(_, r)| r.get(base + j).unwrap_or(""))
                .filter(|c| !c.is_empty())
                .all(|c| c.parse::<f64>().is_ok());
            ExtraColumn {
                name: name.clone(),
                kind: if numeric {
                    FeatureKind::Numeric
                } else {
                    FeatureKind::Categorical
                },
            }
        })
        .collect();

    let mut records = Vec::with_capacity(rows.len());
    let mut labels = Vec::new();
    for (line, row) in &rows {
        let line = *line;
        let cell = |j: usize| row.get(j).unwrap_or("");
        let theatre = if cell(5).is_empty() {
            None
        } else {
            Some(cell(5).parse::<u32>().map_err(|e| {
                CasemixError::parse(format!("line {line}, column {THEATRE}"), e)
            })?)
        };
        let mut burn_sites = Vec::with_capacity(SITE_COUNT);
        for site in SiteCode::all() {
            let area = parse_opt_f64(cell(6 + site.index()), line, &site.area_column())?;
            let depth_cell = cell(6 + SITE_COUNT + site.index());
            let depth = if depth_cell.is_empty() {
                None
            } else {
                Some(Depth::parse(depth_cell).ok_or_else(|| {
                    CasemixError::parse(
                        format!("line {line}, column {}", site.depth_column()),
                        format!("unknown depth {depth_cell:?}"),
                    )
                })?)
            };
            burn_sites.push(BurnSiteEntry {
                site,
                area_pct: area,
                depth,
            });
        }
        let mut extra_features = IndexMap::with_capacity(extra.len());
        for (j, col) in extra.iter().enumerate() {
            let c = cell(base + j);
            let value = if c.is_empty() {
                None
            } else {
                Some(match col.kind {
                    FeatureKind::Numeric => FeatureValue::Numeric(c.parse().expect("checked numeric")),
                    FeatureKind::Categorical => FeatureValue::Categorical(c.to_string()),
                })
            };
            extra_features.insert(col.name.clone(), value);
        }
        if has_labels {
            let c = cell(base + extra.len());
            let rank: usize = c.parse().map_err(|e| {
                CasemixError::parse(format!("line {line}, column {LABEL_COLUMN}"), e)
            })?;
            labels.push(RankedClassLabel::new(rank, u16::MAX as usize)?);
        }
        records.push(PatientRecord {
            id: cell(0).to_string(),
            age_years: parse_opt_f64(cell(1), line, AGE)?,
            los_days: parse_opt_f64(cell(2), line, LOS)?,
            total_cost: parse_opt_f64(cell(3), line, COST)?,
            tbsa_pct: parse_opt_f64(cell(4), line, TBSA)?,
            theatre_visits: theatre,
            burn_sites,
            extra_features,
        });
    }

    Ok(Dataset {
        schema: Schema { extra },
        records,
        labels: has_labels.then_some(labels),
    })
}
