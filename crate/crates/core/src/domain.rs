//! Patient records, burn sites and ranked class labels.

use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::dataset::Schema;
use crate::error::{CasemixError, Result};

/// Number of anatomical burn sites recorded per episode.
pub const SITE_COUNT: usize = 27;

pub const AGE: &str = "age_years";
pub const LOS: &str = "los_days";
pub const COST: &str = "total_cost";
pub const TBSA: &str = "tbsa_pct";
pub const THEATRE: &str = "theatre_visits";

/// One of the 27 recorded anatomical sites, numbered 1..=27.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct SiteCode(u8);

impl SiteCode {
    pub fn new(number: u8) -> Result<Self> {
        if (1..=SITE_COUNT as u8).contains(&number) {
            Ok(SiteCode(number))
        } else {
            Err(CasemixError::invalid(format!(
                "site code {number} outside 1..={SITE_COUNT}"
            )))
        }
    }

    pub fn number(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    pub fn all() -> impl Iterator<Item = SiteCode> {
        (1..=SITE_COUNT as u8).map(SiteCode)
    }

    pub fn area_column(self) -> String {
        format!("site_{:02}_area", self.0)
    }

    pub fn depth_column(self) -> String {
        format!("site_{:02}_depth", self.0)
    }
}

impl TryFrom<u8> for SiteCode {
    type Error = CasemixError;

    fn try_from(value: u8) -> Result<Self> {
        SiteCode::new(value)
    }
}

impl From<SiteCode> for u8 {
    fn from(code: SiteCode) -> u8 {
        code.0
    }
}

/// Human-readable names for the 27 site codes.
///
/// The default list is a plausible anatomical breakdown; source registries
/// differ, so it can be replaced from a JSON array of 27 names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SiteCatalog {
    names: Vec<String>,
}

const DEFAULT_SITE_NAMES: [&str; SITE_COUNT] = [
    "head",
    "face",
    "neck",
    "anterior_trunk",
    "posterior_trunk",
    "perineum",
    "genitalia",
    "right_buttock",
    "left_buttock",
    "right_upper_arm",
    "left_upper_arm",
    "right_forearm",
    "left_forearm",
    "right_hand_palm",
    "left_hand_palm",
    "right_hand_dorsum",
    "left_hand_dorsum",
    "right_thigh",
    "left_thigh",
    "right_knee",
    "left_knee",
    "right_lower_leg",
    "left_lower_leg",
    "right_foot_sole",
    "left_foot_sole",
    "right_foot_dorsum",
    "left_foot_dorsum",
];

impl Default for SiteCatalog {
    fn default() -> Self {
        SiteCatalog {
            names: DEFAULT_SITE_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl SiteCatalog {
    pub fn from_names(names: Vec<String>) -> Result<Self> {
        if names.len() != SITE_COUNT {
            return Err(CasemixError::invalid(format!(
                "site catalog needs {SITE_COUNT} names, got {}",
                names.len()
            )));
        }
        Ok(SiteCatalog { names })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let names: Vec<String> = serde_json::from_str(text)?;
        SiteCatalog::from_names(names)
    }

    pub fn name(&self, site: SiteCode) -> &str {
        &self.names[site.index()]
    }
}

/// Burn depth recorded at a site. `None` means no burn at that site.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Depth {
    None,
    Superficial,
    Partial,
    Full,
}

impl Depth {
    pub const ALL: [Depth; 4] = [Depth::None, Depth::Superficial, Depth::Partial, Depth::Full];

    pub fn as_str(self) -> &'static str {
        match self {
            Depth::None => "none",
            Depth::Superficial => "superficial",
            Depth::Partial => "partial",
            Depth::Full => "full",
        }
    }

    pub fn parse(text: &str) -> Option<Depth> {
        Depth::ALL.into_iter().find(|d| d.as_str() == text)
    }
}

impl fmt::Display for Depth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Area and depth at one site. `None` marks a missing cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurnSiteEntry {
    pub site: SiteCode,
    pub area_pct: Option<f64>,
    pub depth: Option<Depth>,
}

impl BurnSiteEntry {
    pub fn unburned(site: SiteCode) -> Self {
        BurnSiteEntry {
            site,
            area_pct: Some(0.0),
            depth: Some(Depth::None),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

/// An owned value of an auxiliary feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureValue {
    Numeric(f64),
    Categorical(String),
}

impl FeatureValue {
    pub fn kind(&self) -> FeatureKind {
        match self {
            FeatureValue::Numeric(_) => FeatureKind::Numeric,
            FeatureValue::Categorical(_) => FeatureKind::Categorical,
        }
    }

    pub fn as_ref(&self) -> FeatureRef<'_> {
        match self {
            FeatureValue::Numeric(x) => FeatureRef::Num(*x),
            FeatureValue::Categorical(s) => FeatureRef::Cat(s),
        }
    }
}

/// A borrowed feature value, as seen by rule engines and trees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FeatureRef<'a> {
    Num(f64),
    Cat(&'a str),
}

impl FeatureRef<'_> {
    pub fn to_owned(self) -> FeatureValue {
        match self {
            FeatureRef::Num(x) => FeatureValue::Numeric(x),
            FeatureRef::Cat(s) => FeatureValue::Categorical(s.to_string()),
        }
    }
}

/// A single burn-care episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: String,
    pub age_years: Option<f64>,
    pub los_days: Option<f64>,
    pub total_cost: Option<f64>,
    pub tbsa_pct: Option<f64>,
    pub theatre_visits: Option<u32>,
    pub burn_sites: Vec<BurnSiteEntry>,
    pub extra_features: IndexMap<String, Option<FeatureValue>>,
}

impl PatientRecord {
    /// A record with every site unburned and no auxiliary features.
    pub fn blank(id: impl Into<String>) -> Self {
        PatientRecord {
            id: id.into(),
            age_years: Some(0.0),
            los_days: Some(0.0),
            total_cost: Some(0.0),
            tbsa_pct: Some(0.0),
            theatre_visits: Some(0),
            burn_sites: SiteCode::all().map(BurnSiteEntry::unburned).collect(),
            extra_features: IndexMap::new(),
        }
    }

    /// True when no site records a positive area or a depth other than none.
    /// Missing cells count as zero / none.
    pub fn is_unclassifiable(&self) -> bool {
        self.burn_sites.iter().all(|s| {
            s.area_pct.unwrap_or(0.0) == 0.0 && s.depth.unwrap_or(Depth::None) == Depth::None
        })
    }

    /// Looks up any feature by column name. `Ok(None)` is a missing cell;
    /// an unknown name is a schema mismatch.
    pub fn feature(&self, name: &str) -> Result<Option<FeatureRef<'_>>> {
        let num = |v: Option<f64>| Ok(v.map(FeatureRef::Num));
        match name {
            AGE => num(self.age_years),
            LOS => num(self.los_days),
            COST => num(self.total_cost),
            TBSA => num(self.tbsa_pct),
            THEATRE => num(self.theatre_visits.map(f64::from)),
            _ => {
                if let Some((site, is_area)) = parse_site_column(name) {
                    let entry = self
                        .burn_sites
                        .iter()
                        .find(|s| s.site == site)
                        .ok_or_else(|| {
                            CasemixError::SchemaMismatch(format!("record {} lacks {name}", self.id))
                        })?;
                    return Ok(if is_area {
                        entry.area_pct.map(FeatureRef::Num)
                    } else {
                        entry.depth.map(|d| FeatureRef::Cat(d.as_str()))
                    });
                }
                match self.extra_features.get(name) {
                    Some(v) => Ok(v.as_ref().map(FeatureValue::as_ref)),
                    None => Err(CasemixError::SchemaMismatch(format!(
                        "unknown feature {name:?}"
                    ))),
                }
            }
        }
    }

    pub fn site_area_sum(&self) -> f64 {
        self.burn_sites.iter().filter_map(|s| s.area_pct).sum()
    }
}

/// Parses `site_NN_area` / `site_NN_depth`; the bool is true for area.
pub fn parse_site_column(name: &str) -> Option<(SiteCode, bool)> {
    let rest = name.strip_prefix("site_")?;
    let (num, suffix) = rest.split_once('_')?;
    if num.len() != 2 {
        return None;
    }
    let site = SiteCode::new(num.parse().ok()?).ok()?;
    match suffix {
        "area" => Some((site, true)),
        "depth" => Some((site, false)),
        _ => None,
    }
}

/// Ordinal class label; 1 is the least severe/costly class, `k` the most.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RankedClassLabel(u16);

impl RankedClassLabel {
    pub fn new(rank: usize, k: usize) -> Result<Self> {
        if rank == 0 || rank > k || k > u16::MAX as usize {
            return Err(CasemixError::invalid(format!("rank {rank} outside 1..={k}")));
        }
        Ok(RankedClassLabel(rank as u16))
    }

    /// Zero-based class index, for matrix lookups.
    pub fn from_index(index: usize) -> Self {
        RankedClassLabel(index as u16 + 1)
    }

    pub fn rank(self) -> usize {
        self.0 as usize
    }

    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    pub fn distance(self, other: RankedClassLabel) -> usize {
        self.0.abs_diff(other.0) as usize
    }
}

impl fmt::Display for RankedClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A failed record invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Violation {
    BurnSitesCount { found: usize },
    SiteCodes,
    TbsaRange,
    NegativeLos,
    NegativeCost,
    NegativeAge,
    NegativeArea { site: u8 },
    NonFinite { field: String },
    MissingFeature { name: String },
    UnknownFeature { name: String },
    FeatureKind { name: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::BurnSitesCount { found } => {
                write!(f, "burn_sites count: expected {SITE_COUNT}, found {found}")
            }
            Violation::SiteCodes => f.write_str("burn_sites codes: each of 1..=27 exactly once, in order"),
            Violation::TbsaRange => f.write_str("tbsa range: must lie in [0, 100]"),
            Violation::NegativeLos => f.write_str("los_days: must be non-negative"),
            Violation::NegativeCost => f.write_str("total_cost: must be non-negative"),
            Violation::NegativeAge => f.write_str("age_years: must be non-negative"),
            Violation::NegativeArea { site } => write!(f, "site {site:02} area: must be non-negative"),
            Violation::NonFinite { field } => write!(f, "{field}: not a finite number"),
            Violation::MissingFeature { name } => write!(f, "feature {name}: declared in schema but absent"),
            Violation::UnknownFeature { name } => write!(f, "feature {name}: not declared in schema"),
            Violation::FeatureKind { name } => write!(f, "feature {name}: value kind differs from schema"),
        }
    }
}

/// Outcome of [`validate_record`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Validation {
    pub violations: Vec<Violation>,
}

impl Validation {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks a record against its invariants and the dataset schema.
pub fn validate_record(record: &PatientRecord, schema: &Schema) -> Validation {
    let mut out = Vec::new();

    if record.burn_sites.len() != SITE_COUNT {
        out.push(Violation::BurnSitesCount {
            found: record.burn_sites.len(),
        });
    } else if !record
        .burn_sites
        .iter()
        .zip(SiteCode::all())
        .all(|(entry, code)| entry.site == code)
    {
        out.push(Violation::SiteCodes);
    }

    let mut check = |field: &str, value: Option<f64>, negative: Violation| {
        if let Some(x) = value {
            if !x.is_finite() {
                out.push(Violation::NonFinite {
                    field: field.to_string(),
                });
            } else if x < 0.0 {
                out.push(negative);
            }
        }
    };
    check(AGE, record.age_years, Violation::NegativeAge);
    check(LOS, record.los_days, Violation::NegativeLos);
    check(COST, record.total_cost, Violation::NegativeCost);
    for entry in &record.burn_sites {
        check(
            &entry.site.area_column(),
            entry.area_pct,
            Violation::NegativeArea {
                site: entry.site.number(),
            },
        );
    }
    if let Some(t) = record.tbsa_pct {
        if !t.is_finite() {
            out.push(Violation::NonFinite {
                field: TBSA.to_string(),
            });
        } else if !(0.0..=100.0).contains(&t) {
            out.push(Violation::TbsaRange);
        }
    }

    for column in &schema.extra {
        match record.extra_features.get(&column.name) {
            None => out.push(Violation::MissingFeature {
                name: column.name.clone(),
            }),
            Some(Some(v)) if v.kind() != column.kind => out.push(Violation::FeatureKind {
                name: column.name.clone(),
            }),
            Some(Some(FeatureValue::Numeric(x))) if !x.is_finite() => {
                out.push(Violation::NonFinite {
                    field: column.name.clone(),
                })
            }
            _ => {}
        }
    }
    for name in record.extra_features.keys() {
        if schema.column(name).is_none() {
            out.push(Violation::UnknownFeature { name: name.clone() });
        }
    }

    Validation { violations: out }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record_with_tbsa(tbsa: f64) -> PatientRecord {
        let mut r = PatientRecord::blank("p1");
        r.tbsa_pct = Some(tbsa);
        r.burn_sites[3].area_pct = Some(tbsa);
        r.burn_sites[3].depth = Some(Depth::Partial);
        r
    }

    #[test]
    fn valid_record_passes() {
        let v = validate_record(&record_with_tbsa(12.0), &Schema::default());
        assert!(v.is_ok(), "{:?}", v.violations);
    }

    #[test]
    fn missing_site_is_reported() {
        let mut r = record_with_tbsa(12.0);
        r.burn_sites.pop();
        let v = validate_record(&r, &Schema::default());
        assert_eq!(v.violations, vec![Violation::BurnSitesCount { found: 26 }]);
        assert!(v.violations[0].to_string().starts_with("burn_sites count"));
    }

    #[test]
    fn tbsa_above_100_is_reported() {
        let v = validate_record(&record_with_tbsa(101.0), &Schema::default());
        assert_eq!(v.violations, vec![Violation::TbsaRange]);
        assert!(v.violations[0].to_string().starts_with("tbsa range"));
    }

    #[test]
    fn negative_fields_and_unknown_extras() {
        let mut r = record_with_tbsa(1.0);
        r.los_days = Some(-1.0);
        r.total_cost = Some(f64::NAN);
        r.extra_features
            .insert("ghost".into(), Some(FeatureValue::Numeric(1.0)));
        let v = validate_record(&r, &Schema::default());
        assert!(v.violations.contains(&Violation::NegativeLos));
        assert!(v.violations.contains(&Violation::NonFinite {
            field: COST.into()
        }));
        assert!(v.violations.contains(&Violation::UnknownFeature {
            name: "ghost".into()
        }));
    }

    #[test]
    fn missing_cells_are_not_violations() {
        let mut r = record_with_tbsa(1.0);
        r.los_days = None;
        r.burn_sites[0].depth = None;
        assert!(validate_record(&r, &Schema::default()).is_ok());
    }

    #[test]
    fn unclassifiable_detection() {
        let mut r = PatientRecord::blank("x");
        assert!(r.is_unclassifiable());
        r.burn_sites[5].area_pct = None;
        assert!(r.is_unclassifiable());
        r.burn_sites[5].depth = Some(Depth::Partial);
        assert!(!r.is_unclassifiable());
    }

    #[test]
    fn feature_lookup() {
        let r = record_with_tbsa(12.0);
        assert_eq!(r.feature(TBSA).unwrap(), Some(FeatureRef::Num(12.0)));
        assert_eq!(
            r.feature("site_04_depth").unwrap(),
            Some(FeatureRef::Cat("partial"))
        );
        assert_eq!(r.feature("site_04_area").unwrap(), Some(FeatureRef::Num(12.0)));
        assert!(r.feature("nope").is_err());
    }

    #[test]
    fn site_columns_parse() {
        assert_eq!(
            parse_site_column("site_27_depth"),
            Some((SiteCode::new(27).unwrap(), false))
        );
        assert_eq!(parse_site_column("site_28_area"), None);
        assert_eq!(parse_site_column("site_1_area"), None);
    }

    #[test]
    fn ranked_label_bounds() {
        assert!(RankedClassLabel::new(0, 13).is_err());
        assert!(RankedClassLabel::new(14, 13).is_err());
        let l = RankedClassLabel::new(13, 13).unwrap();
        assert_eq!(l.index(), 12);
        assert_eq!(l.distance(RankedClassLabel::new(10, 13).unwrap()), 3);
    }

    #[test]
    fn site_catalog_needs_27_names() {
        assert_eq!(SiteCatalog::default().name(SiteCode::new(2).unwrap()), "face");
        assert!(SiteCatalog::from_json(r#"["a","b"]"#).is_err());
    }
}
