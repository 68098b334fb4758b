//! Cohort cleaning: variable removal, zero imputation, unclassifiable and
//! outlier exclusion, and the log transform applied before clustering.
//!
//! [`preprocess`] runs the steps in a fixed order:
//!
//! 1. drop irrelevant auxiliary variables (missingness is measured before
//!    imputation would hide it),
//! 2. impute missing cells with zero / `none`,
//! 3. remove unclassifiable records (no area or depth at any site),
//! 4. remove outliers (LOS > 360 days or cost > £1,000,000).
//!
//! Running the sequence a second time is a no-op.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::domain::{Depth, FeatureValue, PatientRecord};
use crate::error::{CasemixError, Result};

pub const MAX_LOS_DAYS: f64 = 360.0;
pub const MAX_COST: f64 = 1_000_000.0;

/// Level that missing categorical cells are imputed to.
pub const NONE_LEVEL: &str = "none";

/// Why an auxiliary column was removed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum DropReason {
    Administrative,
    HighMissing { fraction: f64 },
    Constant,
    Duplicate { of: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OutlierCounts {
    pub los_over_360: usize,
    pub cost_over_1m: usize,
}

impl OutlierCounts {
    pub fn total(&self) -> usize {
        self.los_over_360 + self.cost_over_1m
    }
}

/// Row and column accounting for a cleaning run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub rows_in: usize,
    pub rows_out: usize,
    /// A record exceeding both limits is counted under LOS.
    pub outliers_removed: OutlierCounts,
    pub unclassifiable_removed: usize,
    pub variables_dropped: IndexMap<String, DropReason>,
    pub cells_imputed: usize,
}

impl PreprocessReport {
    fn rows(rows_in: usize) -> Self {
        PreprocessReport {
            rows_in,
            rows_out: rows_in,
            ..Default::default()
        }
    }

    /// `rows_out == rows_in − outliers − unclassifiable`.
    pub fn reconciles(&self) -> bool {
        self.rows_in
            .checked_sub(self.outliers_removed.total() + self.unclassifiable_removed)
            == Some(self.rows_out)
    }

    /// Folds a later step's report into this one.
    pub fn then(mut self, next: PreprocessReport) -> Self {
        debug_assert_eq!(self.rows_out, next.rows_in);
        self.rows_out = next.rows_out;
        self.outliers_removed.los_over_360 += next.outliers_removed.los_over_360;
        self.outliers_removed.cost_over_1m += next.outliers_removed.cost_over_1m;
        self.unclassifiable_removed += next.unclassifiable_removed;
        self.variables_dropped.extend(next.variables_dropped);
        self.cells_imputed += next.cells_imputed;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Columns whose missing fraction exceeds this are dropped.
    #[serde(default = "default_missing_threshold")]
    pub missing_threshold: f64,
    /// Administrative columns to drop by name.
    #[serde(default)]
    pub administrative_fields: Vec<String>,
}

fn default_missing_threshold() -> f64 {
    0.6
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            missing_threshold: default_missing_threshold(),
            administrative_fields: Vec::new(),
        }
    }
}

/// Counts missing cells across fixed, site and auxiliary fields.
pub fn missing_cell_count(ds: &Dataset) -> usize {
    ds.records.iter().map(record_missing).sum()
}

fn record_missing(r: &PatientRecord) -> usize {
    [r.age_years, r.los_days, r.total_cost, r.tbsa_pct]
        .iter()
        .filter(|v| v.is_none())
        .count()
        + usize::from(r.theatre_visits.is_none())
        + r.burn_sites
            .iter()
            .map(|s| usize::from(s.area_pct.is_none()) + usize::from(s.depth.is_none()))
            .sum::<usize>()
        + r.extra_features.values().filter(|v| v.is_none()).count()
}

fn imputed_value(v: &Option<FeatureValue>, numeric: bool) -> FeatureValue {
    match v {
        Some(v) => v.clone(),
        None if numeric => FeatureValue::Numeric(0.0),
        None => FeatureValue::Categorical(NONE_LEVEL.to_string()),
    }
}

/// Replaces every missing numeric cell with 0 and every missing categorical
/// cell with `none`.
pub fn impute_zeros(ds: &Dataset) -> Dataset {
    let mut out = ds.clone();
    for r in &mut out.records {
        for field in [&mut r.age_years, &mut r.los_days, &mut r.total_cost, &mut r.tbsa_pct] {
            field.get_or_insert(0.0);
        }
        r.theatre_visits.get_or_insert(0);
        for s in &mut r.burn_sites {
            s.area_pct.get_or_insert(0.0);
            s.depth.get_or_insert(Depth::None);
        }
        for col in &ds.schema.extra {
            if let Some(v) = r.extra_features.get_mut(&col.name) {
                if v.is_none() {
                    *v = Some(imputed_value(v, col.kind == crate::FeatureKind::Numeric));
                }
            }
        }
    }
    out
}

/// Drops records whose LOS exceeds 360 days or whose cost exceeds
/// £1,000,000. Values exactly at a limit are kept.
pub fn remove_outliers(ds: &Dataset) -> (Dataset, PreprocessReport) {
    let mut report = PreprocessReport::rows(ds.len());
    let mut keep = Vec::with_capacity(ds.len());
    for (i, r) in ds.records.iter().enumerate() {
        if r.los_days.is_some_and(|x| x > MAX_LOS_DAYS) {
            report.outliers_removed.los_over_360 += 1;
        } else if r.total_cost.is_some_and(|x| x > MAX_COST) {
            report.outliers_removed.cost_over_1m += 1;
        } else {
            keep.push(i);
        }
    }
    report.rows_out = keep.len();
    (ds.select(&keep), report)
}

/// Drops records with no recorded area and no recorded depth at any site.
pub fn remove_unclassifiable(ds: &Dataset) -> (Dataset, PreprocessReport) {
    let mut report = PreprocessReport::rows(ds.len());
    let keep: Vec<usize> = (0..ds.len())
        .filter(|&i| !ds.records[i].is_unclassifiable())
        .collect();
    report.unclassifiable_removed = ds.len() - keep.len();
    report.rows_out = keep.len();
    (ds.select(&keep), report)
}

/// Removes auxiliary columns that are administrative, mostly missing,
/// constant, or exact duplicates of an earlier column.
///
/// Missingness is measured on the raw cells; constancy and duplication are
/// judged on the imputed values so that a later imputation cannot create new
/// constant or duplicate columns.
pub fn drop_irrelevant_variables(
    ds: &Dataset,
    config: &PreprocessConfig,
) -> Result<(Dataset, PreprocessReport)> {
    let threshold = config.missing_threshold;
    if !(0.0..=1.0).contains(&threshold) {
        return Err(CasemixError::invalid(format!(
            "missing threshold must lie in [0,1], got {threshold}"
        )));
    }
    let mut report = PreprocessReport::rows(ds.len());
    let n = ds.len();
    let mut kept: Vec<(usize, Vec<FeatureValue>)> = Vec::new();

    for (j, col) in ds.schema.extra.iter().enumerate() {
        if config.administrative_fields.contains(&col.name) {
            report
                .variables_dropped
                .insert(col.name.clone(), DropReason::Administrative);
            continue;
        }
        let raw: Vec<&Option<FeatureValue>> = ds
            .records
            .iter()
            .map(|r| r.extra_features.get(&col.name).unwrap_or(&None))
            .collect();
        if n > 0 {
            let fraction = raw.iter().filter(|v| v.is_none()).count() as f64 / n as f64;
            if fraction > threshold {
                report
                    .variables_dropped
                    .insert(col.name.clone(), DropReason::HighMissing { fraction });
                continue;
            }
        }
        let numeric = col.kind == crate::FeatureKind::Numeric;
        let values: Vec<FeatureValue> = raw.iter().map(|v| imputed_value(v, numeric)).collect();
        if n > 0 && values.iter().all(|v| *v == values[0]) {
            report
                .variables_dropped
                .insert(col.name.clone(), DropReason::Constant);
            continue;
        }
        if let Some((first, _)) = kept.iter().find(|(_, other)| *other == values) {
            report.variables_dropped.insert(
                col.name.clone(),
                DropReason::Duplicate {
                    of: ds.schema.extra[*first].name.clone(),
                },
            );
            continue;
        }
        kept.push((j, values));
    }

    let mut out = ds.clone();
    out.schema.extra.retain(|c| !report.variables_dropped.contains_key(&c.name));
    for r in &mut out.records {
        r.extra_features
            .retain(|name, _| !report.variables_dropped.contains_key(name));
    }
    Ok((out, report))
}

/// Runs the full cleaning sequence.
pub fn preprocess(ds: &Dataset, config: &PreprocessConfig) -> Result<(Dataset, PreprocessReport)> {
    let (ds, report) = drop_irrelevant_variables(ds, config)?;
    let cells = missing_cell_count(&ds);
    let ds = impute_zeros(&ds);
    let report = report.then(PreprocessReport {
        cells_imputed: cells,
        ..PreprocessReport::rows(ds.len())
    });
    let (ds, r) = remove_unclassifiable(&ds);
    let report = report.then(r);
    let (ds, r) = remove_outliers(&ds);
    let report = report.then(r);
    debug_assert!(report.reconciles());
    Ok((ds, report))
}

/// Elementwise `ln(1 + x)` for non-negative inputs.
pub fn log1p_factor(values: &[f64]) -> Result<Vec<f64>> {
    values
        .iter()
        .map(|&x| {
            if x >= 0.0 && x.is_finite() {
                Ok(x.ln_1p())
            } else {
                Err(CasemixError::invalid(format!(
                    "log1p transform needs finite non-negative values, got {x}"
                )))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ExtraColumn, Schema};
    use crate::domain::FeatureKind;
    use crate::synth::{generate_cohort, inject_missingness, CohortConfig};
    use proptest::prelude::*;

    fn burned(id: &str) -> PatientRecord {
        let mut r = PatientRecord::blank(id);
        r.tbsa_pct = Some(2.0);
        r.burn_sites[0].area_pct = Some(2.0);
        r.burn_sites[0].depth = Some(Depth::Partial);
        r
    }

    fn ds_of(records: Vec<PatientRecord>) -> Dataset {
        Dataset::new(Schema::default(), records)
    }

    #[test]
    fn impute_identity_without_missing() {
        let ds = ds_of(vec![burned("a"), burned("b")]);
        assert_eq!(impute_zeros(&ds), ds);
    }

    #[test]
    fn impute_fills_zero_and_none() {
        let mut r = burned("a");
        r.los_days = None;
        r.burn_sites[4].depth = None;
        let out = impute_zeros(&ds_of(vec![r]));
        assert_eq!(out.records[0].los_days, Some(0.0));
        assert_eq!(out.records[0].burn_sites[4].depth, Some(Depth::None));
    }

    #[test]
    fn impute_categorical_extra_to_none_level() {
        let schema = Schema {
            extra: vec![ExtraColumn {
                name: "cause".into(),
                kind: FeatureKind::Categorical,
            }],
        };
        let mut r = burned("a");
        r.extra_features.insert("cause".into(), None);
        let out = impute_zeros(&Dataset::new(schema, vec![r]));
        assert_eq!(
            out.records[0].extra_features["cause"],
            Some(FeatureValue::Categorical("none".into()))
        );
    }

    #[test]
    fn outlier_boundaries_use_strict_inequality() {
        let mut los361 = burned("los361");
        los361.los_days = Some(361.0);
        let mut edge = burned("edge");
        edge.los_days = Some(360.0);
        edge.total_cost = Some(1_000_000.0);
        let mut cost = burned("cost");
        cost.total_cost = Some(1_000_000.01);
        let (out, report) = remove_outliers(&ds_of(vec![los361, edge, cost]));
        let ids: Vec<&str> = out.records.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, vec!["edge"]);
        assert_eq!(report.outliers_removed.los_over_360, 1);
        assert_eq!(report.outliers_removed.cost_over_1m, 1);
        assert!(report.reconciles());
    }

    #[test]
    fn unclassifiable_rules() {
        let empty = PatientRecord::blank("empty");
        let mut area = PatientRecord::blank("area");
        area.burn_sites[2].area_pct = Some(0.5);
        let mut depth = PatientRecord::blank("depth");
        depth.burn_sites[7].depth = Some(Depth::Partial);
        let (out, report) = remove_unclassifiable(&ds_of(vec![empty, area, depth]));
        let ids: Vec<&str> = out.records.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, vec!["area", "depth"]);
        assert_eq!(report.unclassifiable_removed, 1);
        assert!(report.reconciles());
    }

    fn column_dataset(columns: &[(&str, FeatureKind, Vec<Option<FeatureValue>>)]) -> Dataset {
        let n = columns[0].2.len();
        let schema = Schema {
            extra: columns
                .iter()
                .map(|(name, kind, _)| ExtraColumn {
                    name: name.to_string(),
                    kind: *kind,
                })
                .collect(),
        };
        let records = (0..n)
            .map(|i| {
                let mut r = burned(&format!("r{i}"));
                for (name, _, values) in columns {
                    r.extra_features.insert(name.to_string(), values[i].clone());
                }
                r
            })
            .collect();
        Dataset::new(schema, records)
    }

    fn cat(s: &str) -> Option<FeatureValue> {
        Some(FeatureValue::Categorical(s.into()))
    }

    fn num(x: f64) -> Option<FeatureValue> {
        Some(FeatureValue::Numeric(x))
    }

    #[test]
    fn drops_constant_missing_duplicate_and_admin() {
        use FeatureKind::*;
        let ds = column_dataset(&[
            ("flag", Categorical, vec![cat("yes"); 10]),
            (
                "sparse",
                Numeric,
                (0..10).map(|i| if i < 7 { None } else { num(i as f64) }).collect(),
            ),
            ("a", Numeric, (0..10).map(|i| num(i as f64)).collect()),
            ("b", Numeric, (0..10).map(|i| num(i as f64)).collect()),
            ("year", Numeric, (0..10).map(|i| num(2000.0 + i as f64)).collect()),
            ("zeros", Numeric, (0..10).map(|i| if i % 2 == 0 { None } else { num(0.0) }).collect()),
        ]);
        let cfg = PreprocessConfig {
            missing_threshold: 0.6,
            administrative_fields: vec!["year".into()],
        };
        let (out, report) = drop_irrelevant_variables(&ds, &cfg).unwrap();
        assert_eq!(report.variables_dropped["flag"], DropReason::Constant);
        assert!(matches!(
            report.variables_dropped["sparse"],
            DropReason::HighMissing { fraction } if (fraction - 0.7).abs() < 1e-12
        ));
        assert_eq!(
            report.variables_dropped["b"],
            DropReason::Duplicate { of: "a".into() }
        );
        assert_eq!(report.variables_dropped["year"], DropReason::Administrative);
        assert_eq!(report.variables_dropped["zeros"], DropReason::Constant);
        let names: Vec<&str> = out.schema.extra.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, vec!["a"]);
        assert!(out.records.iter().all(|r| r.extra_features.len() == 1));
        assert!(out.validate().is_empty());
    }

    #[test]
    fn threshold_out_of_range_rejected() {
        let ds = ds_of(vec![burned("a")]);
        let cfg = PreprocessConfig {
            missing_threshold: 1.5,
            administrative_fields: vec![],
        };
        assert!(drop_irrelevant_variables(&ds, &cfg).is_err());
    }

    #[test]
    fn log1p_values() {
        assert_eq!(log1p_factor(&[0.0]).unwrap(), vec![0.0]);
        let v = log1p_factor(&[std::f64::consts::E - 1.0]).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-15);
        assert!(log1p_factor(&[-1.0]).is_err());
    }

    #[test]
    fn full_sequence_is_idempotent_and_reconciles() {
        let raw = generate_cohort(&CohortConfig::new(600, 21)).unwrap();
        let raw = inject_missingness(&raw, 0.3, 4).unwrap();
        let cfg = PreprocessConfig {
            missing_threshold: 0.6,
            administrative_fields: crate::synth::administrative_fields(),
        };
        let (once, report) = preprocess(&raw, &cfg).unwrap();
        assert!(report.reconciles());
        assert!(report.cells_imputed > 0);
        assert!(report.unclassifiable_removed > 0);
        assert_eq!(missing_cell_count(&once), 0);
        let (twice, report2) = preprocess(&once, &cfg).unwrap();
        assert_eq!(twice, once);
        assert!(report2.reconciles());
        assert_eq!(report2.rows_in, report2.rows_out);
        assert!(report2.variables_dropped.keys().all(|k| cfg.administrative_fields.contains(k)));
    }

    proptest! {
        #[test]
        fn log1p_preserves_order(values in proptest::collection::vec(0.0f64..1e7, 1..50)) {
            let out = log1p_factor(&values).unwrap();
            for i in 0..values.len() {
                for j in 0..values.len() {
                    if values[i] < values[j] {
                        prop_assert!(out[i] < out[j]);
                    }
                }
            }
        }

        #[test]
        fn reconciliation_holds(seed in 0u64..500, out_rate in 0.0f64..0.3) {
            let mut cfg = CohortConfig::new(80, seed);
            cfg.outlier_rate = out_rate;
            cfg.unclassifiable_rate = 0.1;
            let raw = generate_cohort(&cfg).unwrap();
            let (_, report) = preprocess(&raw, &PreprocessConfig::default()).unwrap();
            prop_assert!(report.reconciles());
        }

        #[test]
        fn imputation_undoes_injected_missingness(seed in 0u64..200, rate in 0.0f64..=1.0) {
            let raw = generate_cohort(&CohortConfig::new(20, seed)).unwrap();
            let holes = inject_missingness(&raw, rate, seed ^ 7).unwrap();
            // followup_score is naturally sparse, so compare imputed views.
            prop_assert_eq!(impute_zeros(&holes), impute_zeros(&raw));
        }
    }
}
