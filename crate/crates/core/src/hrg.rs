//! Ordered if-else grouping rules in the style of HRG groupers.
//!
//! A [`Ruleset`] is a list of conjunctions evaluated top to bottom; the first
//! rule whose conditions all hold assigns its rank. Records with nothing
//! recorded at any burn site are unclassifiable whatever the rules say.
//!
//! File format (JSON):
//!
//! ```json
//! {"version": "...", "k": 13,
//!  "rules": [{"if": [{"feature": "tbsa_pct", "op": ">=", "value": 30.0}], "then": 13},
//!            {"if": [], "then": 1}]}
//! ```

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Schema};
use crate::domain::{FeatureKind, FeatureRef, PatientRecord, RankedClassLabel};
use crate::error::{CasemixError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Op {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
    #[serde(rename = "in")]
    In,
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Op::Lt => "<",
            Op::Le => "<=",
            Op::Gt => ">",
            Op::Ge => ">=",
            Op::Eq => "=",
            Op::Ne => "!=",
            Op::In => "in",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RuleValue {
    Number(f64),
    Text(String),
    NumberSet(Vec<f64>),
    TextSet(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Condition {
    pub feature: String,
    pub op: Op,
    pub value: RuleValue,
}

impl Condition {
    pub fn new(feature: &str, op: Op, value: RuleValue) -> Self {
        Condition {
            feature: feature.to_string(),
            op,
            value,
        }
    }

    /// Missing values never satisfy a condition.
    fn holds(&self, value: Option<FeatureRef<'_>>) -> bool {
        match (value, &self.value) {
            (Some(FeatureRef::Num(x)), RuleValue::Number(c)) => match self.op {
                Op::Lt => x < *c,
                Op::Le => x <= *c,
                Op::Gt => x > *c,
                Op::Ge => x >= *c,
                Op::Eq => x == *c,
                Op::Ne => x != *c,
                Op::In => false,
            },
            (Some(FeatureRef::Num(x)), RuleValue::NumberSet(set)) => set.contains(&x),
            (Some(FeatureRef::Cat(s)), RuleValue::Text(c)) => match self.op {
                Op::Eq => s == c,
                Op::Ne => s != c,
                _ => false,
            },
            (Some(FeatureRef::Cat(s)), RuleValue::TextSet(set)) => set.iter().any(|c| c == s),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    #[serde(rename = "if")]
    pub conditions: Vec<Condition>,
    #[serde(rename = "then")]
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ruleset {
    pub version: String,
    pub k: usize,
    pub rules: Vec<Rule>,
}

impl Ruleset {
    pub fn from_json(text: &str) -> Result<Ruleset> {
        Ok(serde_json::from_str(text)?)
    }

    /// Canonical pretty JSON; parsing it back and re-serializing yields the
    /// same bytes.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ruleset serializes") + "\n"
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum RulesetViolation {
    ClassCount,
    RankOutOfRange { rule: usize, rank: usize },
    UnknownFeature { rule: usize, feature: String },
    TypeMismatch { rule: usize, feature: String },
    NonExhaustive,
    Unreachable { rule: usize },
}

impl fmt::Display for RulesetViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RulesetViolation::ClassCount => f.write_str("class count k must be at least 1"),
            RulesetViolation::RankOutOfRange { rule, rank } => {
                write!(f, "rule {rule}: target rank {rank} outside 1..=k")
            }
            RulesetViolation::UnknownFeature { rule, feature } => {
                write!(f, "rule {rule}: unknown feature {feature:?}")
            }
            RulesetViolation::TypeMismatch { rule, feature } => {
                write!(f, "rule {rule}: operator/constant do not match the type of {feature:?}")
            }
            RulesetViolation::NonExhaustive => {
                f.write_str("non-exhaustive: no catch-all rule (empty condition list)")
            }
            RulesetViolation::Unreachable { rule } => {
                write!(f, "rule {rule}: unreachable, follows the catch-all rule")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RulesetValidation {
    pub violations: Vec<RulesetViolation>,
    /// Ranks that no rule targets. Informational only.
    pub uncovered_ranks: Vec<usize>,
}

impl RulesetValidation {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

fn type_matches(kind: FeatureKind, op: Op, value: &RuleValue) -> bool {
    match (kind, value) {
        (FeatureKind::Numeric, RuleValue::Number(_)) => op != Op::In,
        (FeatureKind::Numeric, RuleValue::NumberSet(_)) => op == Op::In,
        (FeatureKind::Categorical, RuleValue::Text(_)) => matches!(op, Op::Eq | Op::Ne),
        (FeatureKind::Categorical, RuleValue::TextSet(_)) => op == Op::In,
        // An empty JSON array parses as a number set; it matches nothing.
        (FeatureKind::Categorical, RuleValue::NumberSet(v)) => op == Op::In && v.is_empty(),
        _ => false,
    }
}

/// Reports every structural problem with a ruleset against a schema.
pub fn validate_ruleset(rs: &Ruleset, schema: &Schema) -> RulesetValidation {
    let mut violations = Vec::new();
    if rs.k == 0 {
        violations.push(RulesetViolation::ClassCount);
    }
    let mut catch_all: Option<usize> = None;
    for (i, rule) in rs.rules.iter().enumerate() {
        if let Some(first) = catch_all {
            if i > first {
                violations.push(RulesetViolation::Unreachable { rule: i });
            }
        }
        if rule.rank == 0 || rule.rank > rs.k {
            violations.push(RulesetViolation::RankOutOfRange {
                rule: i,
                rank: rule.rank,
            });
        }
        for cond in &rule.conditions {
            match schema.feature_kind(&cond.feature) {
                None => violations.push(RulesetViolation::UnknownFeature {
                    rule: i,
                    feature: cond.feature.clone(),
                }),
                Some(kind) if !type_matches(kind, cond.op, &cond.value) => {
                    violations.push(RulesetViolation::TypeMismatch {
                        rule: i,
                        feature: cond.feature.clone(),
                    })
                }
                _ => {}
            }
        }
        if rule.conditions.is_empty() && catch_all.is_none() {
            catch_all = Some(i);
        }
    }
    if catch_all.is_none() {
        violations.push(RulesetViolation::NonExhaustive);
    }
    let uncovered_ranks = (1..=rs.k)
        .filter(|r| !rs.rules.iter().any(|rule| rule.rank == *r))
        .collect();
    RulesetValidation {
        violations,
        uncovered_ranks,
    }
}

/// A ruleset that passed [`validate_ruleset`]; the only form that can classify.
#[derive(Debug, Clone)]
pub struct CompiledRuleset {
    ruleset: Ruleset,
}

impl CompiledRuleset {
    /// Validates `rs` against `schema`. Any violation is an invalid-argument
    /// error listing all of them.
    pub fn compile(rs: &Ruleset, schema: &Schema) -> Result<CompiledRuleset> {
        let v = validate_ruleset(rs, schema);
        if !v.is_ok() {
            let list: Vec<String> = v.violations.iter().map(ToString::to_string).collect();
            return Err(CasemixError::invalid(format!(
                "invalid ruleset: {}",
                list.join("; ")
            )));
        }
        Ok(CompiledRuleset {
            ruleset: rs.clone(),
        })
    }

    pub fn ruleset(&self) -> &Ruleset {
        &self.ruleset
    }

    pub fn k(&self) -> usize {
        self.ruleset.k
    }
}

/// Group assigned by the rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum HrgLabel {
    Ranked(RankedClassLabel),
    Unclassifiable,
}

impl HrgLabel {
    pub fn ranked(self) -> Option<RankedClassLabel> {
        match self {
            HrgLabel::Ranked(l) => Some(l),
            HrgLabel::Unclassifiable => None,
        }
    }

    pub fn parse(text: &str) -> Result<HrgLabel> {
        if text == "U" {
            return Ok(HrgLabel::Unclassifiable);
        }
        let rank: usize = text
            .parse()
            .map_err(|_| CasemixError::invalid(format!("bad HRG label {text:?}")))?;
        Ok(HrgLabel::Ranked(RankedClassLabel::new(rank, u16::MAX as usize)?))
    }
}

impl fmt::Display for HrgLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HrgLabel::Ranked(l) => write!(f, "{l}"),
            HrgLabel::Unclassifiable => f.write_str("U"),
        }
    }
}

/// Assigns the rank of the first matching rule.
pub fn classify(record: &PatientRecord, rs: &CompiledRuleset) -> Result<HrgLabel> {
    if record.is_unclassifiable() {
        return Ok(HrgLabel::Unclassifiable);
    }
    for rule in &rs.ruleset.rules {
        let mut all = true;
        for cond in &rule.conditions {
            if !cond.holds(record.feature(&cond.feature)?) {
                all = false;
                break;
            }
        }
        if all {
            return Ok(HrgLabel::Ranked(RankedClassLabel::new(rule.rank, rs.k())?));
        }
    }
    unreachable!("compiled rulesets end in a catch-all rule")
}

/// Per-rank counts plus the unclassifiable bucket. Only ranks that occur
/// are present.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassHistogram {
    pub counts: BTreeMap<usize, usize>,
    pub unclassifiable: usize,
}

impl ClassHistogram {
    pub fn total(&self) -> usize {
        self.counts.values().sum::<usize>() + self.unclassifiable
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HrgOutcome {
    pub labels: Vec<HrgLabel>,
    pub histogram: ClassHistogram,
}

/// Classifies every record, in input order.
pub fn classify_dataset(ds: &Dataset, rs: &CompiledRuleset) -> Result<HrgOutcome> {
    let labels: Vec<HrgLabel> = ds
        .records
        .par_iter()
        .map(|r| classify(r, rs))
        .collect::<Result<_>>()?;
    let mut histogram = ClassHistogram::default();
    for l in &labels {
        match l {
            HrgLabel::Ranked(r) => *histogram.counts.entry(r.rank()).or_default() += 1,
            HrgLabel::Unclassifiable => histogram.unclassifiable += 1,
        }
    }
    Ok(HrgOutcome { labels, histogram })
}

/// A 13-class stand-in for the burn HRG rules: broad TBSA bands (under 10%,
/// 10 to 40%, 40% and over) split by ventilation, full thickness,
/// inhalation injury and an under-5 age band. It is not the NHS grouper;
/// it only has the same shape.
pub fn reference_ruleset() -> Ruleset {
    use crate::domain::{AGE, TBSA};
    use crate::synth::{FULL_THICKNESS, INHALATION_INJURY, VENTILATED};
    let ge = |x: f64| Condition::new(TBSA, Op::Ge, RuleValue::Number(x));
    let yes = |f: &str| Condition::new(f, Op::Eq, RuleValue::Text("yes".into()));
    let under5 = || Condition::new(AGE, Op::Lt, RuleValue::Number(5.0));
    let rule = |conditions: Vec<Condition>, rank: usize| Rule { conditions, rank };
    Ruleset {
        version: "reference-burns-young-2".to_string(),
        k: 13,
        rules: vec![
            rule(vec![ge(40.0), yes(VENTILATED)], 13),
            rule(vec![ge(40.0)], 12),
            rule(vec![ge(10.0), yes(VENTILATED)], 11),
            rule(vec![ge(10.0), yes(FULL_THICKNESS), yes(INHALATION_INJURY)], 10),
            rule(vec![ge(10.0), yes(FULL_THICKNESS)], 9),
            rule(vec![ge(10.0)], 8),
            rule(vec![yes(VENTILATED)], 7),
            rule(vec![yes(FULL_THICKNESS), yes(INHALATION_INJURY)], 6),
            rule(vec![yes(FULL_THICKNESS), under5()], 5),
            rule(vec![yes(FULL_THICKNESS)], 4),
            rule(vec![yes(INHALATION_INJURY)], 3),
            rule(vec![under5()], 2),
            rule(vec![], 1),
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Depth, TBSA};
    use crate::synth::{generate_cohort, generated_schema, CohortConfig};

    fn two_rule() -> Ruleset {
        Ruleset {
            version: "t".into(),
            k: 13,
            rules: vec![
                Rule {
                    conditions: vec![Condition::new(TBSA, Op::Ge, RuleValue::Number(19.0))],
                    rank: 13,
                },
                Rule {
                    conditions: vec![],
                    rank: 1,
                },
            ],
        }
    }

    fn burned(tbsa: f64) -> PatientRecord {
        let mut r = PatientRecord::blank("r");
        r.tbsa_pct = Some(tbsa);
        r.burn_sites[0].area_pct = Some(tbsa);
        r.burn_sites[0].depth = Some(Depth::Partial);
        r
    }

    #[test]
    fn first_match_wins() {
        let rs = CompiledRuleset::compile(&two_rule(), &Schema::default()).unwrap();
        assert_eq!(classify(&burned(20.0), &rs).unwrap().to_string(), "13");
        assert_eq!(classify(&burned(5.0), &rs).unwrap().to_string(), "1");
    }

    #[test]
    fn empty_sites_are_unclassifiable() {
        let rs = CompiledRuleset::compile(&two_rule(), &Schema::default()).unwrap();
        let mut r = PatientRecord::blank("u");
        r.tbsa_pct = Some(50.0);
        assert_eq!(classify(&r, &rs).unwrap(), HrgLabel::Unclassifiable);
    }

    #[test]
    fn missing_catch_all_is_non_exhaustive() {
        let mut rs = two_rule();
        rs.rules.pop();
        let v = validate_ruleset(&rs, &Schema::default());
        assert!(v.violations.contains(&RulesetViolation::NonExhaustive));
        assert!(v.violations[0].to_string().starts_with("non-exhaustive"));
        assert!(CompiledRuleset::compile(&rs, &Schema::default()).is_err());
    }

    #[test]
    fn unknown_feature_and_type_mismatch() {
        let mut rs = two_rule();
        rs.rules[0]
            .conditions
            .push(Condition::new("shoe_size", Op::Gt, RuleValue::Number(3.0)));
        rs.rules[0]
            .conditions
            .push(Condition::new("site_01_depth", Op::Gt, RuleValue::Number(3.0)));
        rs.rules.push(Rule {
            conditions: vec![],
            rank: 14,
        });
        let v = validate_ruleset(&rs, &Schema::default());
        assert!(v.violations.contains(&RulesetViolation::UnknownFeature {
            rule: 0,
            feature: "shoe_size".into()
        }));
        assert!(v.violations.contains(&RulesetViolation::TypeMismatch {
            rule: 0,
            feature: "site_01_depth".into()
        }));
        assert!(v.violations.contains(&RulesetViolation::Unreachable { rule: 2 }));
        assert!(v
            .violations
            .contains(&RulesetViolation::RankOutOfRange { rule: 2, rank: 14 }));
    }

    #[test]
    fn reference_ruleset_is_valid_and_covers_all_ranks() {
        let v = validate_ruleset(&reference_ruleset(), &generated_schema());
        assert!(v.is_ok(), "{:?}", v.violations);
        assert!(v.uncovered_ranks.is_empty());
    }

    #[test]
    fn reference_ruleset_populates_all_ranks_on_synthetic_cohort() {
        let ds = crate::preprocess::impute_zeros(&generate_cohort(&CohortConfig::new(5000, 42)).unwrap());
        let rs = CompiledRuleset::compile(&reference_ruleset(), &ds.schema).unwrap();
        let out = classify_dataset(&ds, &rs).unwrap();
        assert_eq!(out.histogram.counts.len(), 13, "{:?}", out.histogram);
        assert_eq!(out.histogram.total(), ds.len());
    }

    #[test]
    fn json_round_trip_is_byte_exact() {
        let text = reference_ruleset().to_json();
        let parsed = Ruleset::from_json(&text).unwrap();
        assert_eq!(parsed, reference_ruleset());
        assert_eq!(parsed.to_json(), text);

        let terse = r#"{"version":"v","k":2,"rules":[{"if":[{"feature":"sex","op":"in","value":["F"]}],"then":2},{"if":[],"then":1}]}"#;
        let rs = Ruleset::from_json(terse).unwrap();
        assert_eq!(rs.rules[0].conditions[0].value, RuleValue::TextSet(vec!["F".into()]));
        assert_eq!(Ruleset::from_json(&rs.to_json()).unwrap().to_json(), rs.to_json());
    }

    #[test]
    fn batch_classification() {
        let rs = CompiledRuleset::compile(&two_rule(), &Schema::default()).unwrap();
        let empty = classify_dataset(&Dataset::default(), &rs).unwrap();
        assert!(empty.histogram.counts.is_empty());
        assert_eq!(empty.histogram.total(), 0);

        let mut recs: Vec<PatientRecord> = (0..5).map(|i| burned(i as f64 * 7.0 + 1.0)).collect();
        recs.push(PatientRecord::blank("u"));
        let ds = Dataset::new(Schema::default(), recs);
        let out = classify_dataset(&ds, &rs).unwrap();
        assert_eq!(out.histogram.total(), 6);
        assert_eq!(out.histogram.unclassifiable, 1);

        let same = Dataset::new(Schema::default(), vec![burned(3.0); 3]);
        let out = classify_dataset(&same, &rs).unwrap();
        assert!(out.labels.iter().all(|l| *l == out.labels[0]));
    }

    #[test]
    fn rule_order_matters() {
        let a = Ruleset {
            version: "a".into(),
            k: 3,
            rules: vec![
                Rule {
                    conditions: vec![Condition::new(TBSA, Op::Ge, RuleValue::Number(10.0))],
                    rank: 3,
                },
                Rule {
                    conditions: vec![Condition::new(TBSA, Op::Ge, RuleValue::Number(5.0))],
                    rank: 2,
                },
                Rule {
                    conditions: vec![],
                    rank: 1,
                },
            ],
        };
        let mut b = a.clone();
        b.rules.swap(0, 1);
        let witness = burned(12.0);
        let ca = CompiledRuleset::compile(&a, &Schema::default()).unwrap();
        let cb = CompiledRuleset::compile(&b, &Schema::default()).unwrap();
        assert_eq!(classify(&witness, &ca).unwrap().to_string(), "3");
        assert_eq!(classify(&witness, &cb).unwrap().to_string(), "2");
    }

    #[test]
    fn label_parsing() {
        assert_eq!(HrgLabel::parse("U").unwrap(), HrgLabel::Unclassifiable);
        assert_eq!(HrgLabel::parse("7").unwrap().to_string(), "7");
        assert!(HrgLabel::parse("x").is_err());
    }
}
