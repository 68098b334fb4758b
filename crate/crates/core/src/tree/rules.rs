//! Leaf rules: one conjunction of merged path conditions per leaf.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::{DecisionTree, Node, Split, TreeFeatureKind};
use crate::domain::{FeatureRef, PatientRecord, RankedClassLabel};
use crate::error::{CasemixError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum RuleCondition {
    /// `lower <= x < upper`; either bound may be open.
    Range {
        feature: String,
        lower: Option<f64>,
        upper: Option<f64>,
    },
    /// `x` is one of `levels`.
    Levels { feature: String, levels: Vec<String> },
}

impl RuleCondition {
    pub fn feature(&self) -> &str {
        match self {
            RuleCondition::Range { feature, .. } | RuleCondition::Levels { feature, .. } => feature,
        }
    }

    /// `None` for a missing value or a value of the wrong kind.
    pub fn matches(&self, value: Option<FeatureRef<'_>>) -> bool {
        match (self, value) {
            (RuleCondition::Range { lower, upper, .. }, Some(FeatureRef::Num(x))) => {
                lower.is_none_or(|l| x >= l) && upper.is_none_or(|u| x < u)
            }
            (RuleCondition::Levels { levels, .. }, Some(FeatureRef::Cat(s))) => {
                levels.binary_search_by(|l| l.as_str().cmp(s)).is_ok()
            }
            _ => false,
        }
    }
}

impl fmt::Display for RuleCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RuleCondition::Range { feature, lower, upper } => match (lower, upper) {
                (Some(l), Some(u)) => write!(f, "{l} <= {feature} < {u}"),
                (Some(l), None) => write!(f, "{feature} >= {l}"),
                (None, Some(u)) => write!(f, "{feature} < {u}"),
                (None, None) => write!(f, "{feature} any"),
            },
            RuleCondition::Levels { feature, levels } => write!(f, "{feature} in {{{}}}", levels.join(", ")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeRule {
    pub conditions: Vec<RuleCondition>,
    pub label: RankedClassLabel,
    pub support: usize,
    pub expected_cost: f64,
}

impl TreeRule {
    pub fn condition_text(&self) -> String {
        if self.conditions.is_empty() {
            "TRUE".to_string()
        } else {
            self.conditions.iter().map(ToString::to_string).collect::<Vec<_>>().join(" AND ")
        }
    }
}

impl fmt::Display for TreeRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -> class {}", self.condition_text(), self.label)
    }
}

/// One rule per leaf, left to right. Bounds on the same feature are
/// intersected so each feature appears at most once per rule.
pub fn extract_rules(tree: &DecisionTree) -> Vec<TreeRule> {
    let mut out = Vec::with_capacity(tree.summary.leaves);
    walk(tree, &tree.root, &mut Vec::new(), &mut out);
    out
}

fn walk(tree: &DecisionTree, node: &Node, path: &mut Vec<RuleCondition>, out: &mut Vec<TreeRule>) {
    let Some(s) = &node.split else {
        out.push(TreeRule {
            conditions: path.clone(),
            label: node.label,
            support: node.n,
            expected_cost: node.expected_cost,
        });
        return;
    };
    let feature = &tree.features[s.feature];
    for go_left in [true, false] {
        let saved = path.clone();
        let existing = path.iter().position(|c| c.feature() == feature.name);
        let cond = match (&s.split, &feature.kind) {
            (Split::Numeric { threshold }, _) => {
                let (mut lower, mut upper) = match existing.map(|i| &path[i]) {
                    Some(RuleCondition::Range { lower, upper, .. }) => (*lower, *upper),
                    _ => (None, None),
                };
                if go_left {
                    upper = Some(upper.map_or(*threshold, |u| u.min(*threshold)));
                } else {
                    lower = Some(lower.map_or(*threshold, |l| l.max(*threshold)));
                }
                RuleCondition::Range {
                    feature: feature.name.clone(),
                    lower,
                    upper,
                }
            }
            (Split::Categorical { categories }, TreeFeatureKind::Categorical { levels }) => {
                let allowed: Vec<String> = match existing.map(|i| &path[i]) {
                    Some(RuleCondition::Levels { levels, .. }) => levels.clone(),
                    _ => levels.clone(),
                };
                let levels = allowed
                    .into_iter()
                    .filter(|l| categories.binary_search(l).is_ok() == go_left)
                    .collect();
                RuleCondition::Levels {
                    feature: feature.name.clone(),
                    levels,
                }
            }
            (Split::Categorical { .. }, TreeFeatureKind::Numeric) => unreachable!("split kind matches feature"),
        };
        match existing {
            Some(i) => path[i] = cond,
            None => path.push(cond),
        }
        walk(tree, if go_left { &s.left } else { &s.right }, path, out);
        *path = saved;
    }
}

/// Applies extracted rules directly, without the tree.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleClassifier {
    pub rules: Vec<TreeRule>,
}

impl RuleClassifier {
    pub fn new(rules: Vec<TreeRule>) -> Self {
        RuleClassifier { rules }
    }

    /// Label of the first rule whose conditions all hold, if any.
    pub fn classify_record(&self, record: &PatientRecord) -> Result<Option<RankedClassLabel>> {
        for rule in &self.rules {
            let mut all = true;
            for c in &rule.conditions {
                let v = record.feature(c.feature())?;
                if !c.matches(v) {
                    all = false;
                    break;
                }
            }
            if all {
                return Ok(Some(rule.label));
            }
        }
        Ok(None)
    }
}

/// Plain-text rule listing, one rule per line.
pub fn rules_to_text(rules: &[TreeRule]) -> String {
    rules
        .iter()
        .map(|r| format!("{r}  [n={}, expected_cost={}]\n", r.support, r.expected_cost))
        .collect()
}

pub fn rules_to_csv(rules: &[TreeRule]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["rule", "conditions", "class", "support", "expected_cost"])?;
    for (i, r) in rules.iter().enumerate() {
        w.write_record([
            (i + 1).to_string(),
            r.condition_text(),
            r.label.to_string(),
            r.support.to_string(),
            r.expected_cost.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| CasemixError::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| CasemixError::invalid(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::CostMatrix;
    use crate::tree::{build_tree, Column, Internal, TrainingData, TreeFeature, TreeParams, TreeSummary};

    fn labels(idx: &[usize]) -> Vec<RankedClassLabel> {
        idx.iter().map(|&i| RankedClassLabel::from_index(i)).collect()
    }

    fn params(k: usize) -> TreeParams {
        TreeParams {
            min_split: 2,
            min_leaf: 1,
            max_depth: 30,
            cp: 0.0,
            loss: CostMatrix::linear(k).unwrap(),
        }
    }

    #[test]
    fn single_leaf_gives_empty_rule() {
        let data = TrainingData::from_numeric_rows(&["x"], &[vec![1.0], vec![2.0]]).unwrap();
        let tree = build_tree(&data, &labels(&[1, 1]), &params(2)).unwrap();
        let rules = extract_rules(&tree);
        assert_eq!(rules.len(), 1);
        assert!(rules[0].conditions.is_empty());
        assert_eq!(rules[0].to_string(), "TRUE -> class 2");
    }

    fn leaf(label: usize, n: usize) -> Node {
        let mut counts = vec![0; 3];
        counts[label] = n;
        Node {
            n,
            class_counts: counts,
            impurity: 0.0,
            label: RankedClassLabel::from_index(label),
            expected_cost: 0.0,
            split: None,
        }
    }

    fn internal(t: f64, left: Node, right: Node) -> Node {
        let counts: Vec<usize> = left.class_counts.iter().zip(&right.class_counts).map(|(a, b)| a + b).collect();
        Node {
            n: left.n + right.n,
            class_counts: counts,
            impurity: 0.5,
            label: RankedClassLabel::from_index(0),
            expected_cost: 0.5,
            split: Some(Internal {
                feature: 0,
                split: Split::Numeric { threshold: t },
                decrease: 1.0,
                left: Box::new(left),
                right: Box::new(right),
            }),
        }
    }

    #[test]
    fn nested_bounds_merge_to_tightest() {
        // x < 5, then x < 3
        let root = internal(5.0, internal(3.0, leaf(0, 2), leaf(1, 2)), leaf(2, 2));
        let tree = DecisionTree {
            features: vec![TreeFeature {
                name: "x".into(),
                kind: TreeFeatureKind::Numeric,
            }],
            params: params(3),
            summary: TreeSummary {
                depth: 2,
                leaves: 3,
                n_train: 6,
            },
            root,
        };
        let text: Vec<String> = extract_rules(&tree).iter().map(ToString::to_string).collect();
        assert_eq!(
            text,
            vec!["x < 3 -> class 1", "3 <= x < 5 -> class 2", "x >= 5 -> class 3"]
        );
    }

    #[test]
    fn categorical_rules_and_csv() {
        let data = TrainingData::new(
            vec![TreeFeature {
                name: "cause".into(),
                kind: TreeFeatureKind::Categorical {
                    levels: vec!["contact".into(), "flame".into(), "scald".into()],
                },
            }],
            vec![Column::Categorical(vec![1, 2, 0, 1, 2, 0])],
        )
        .unwrap();
        let tree = build_tree(&data, &labels(&[1, 0, 0, 1, 0, 0]), &params(2)).unwrap();
        let rules = extract_rules(&tree);
        assert_eq!(rules.len(), 2);
        assert_eq!(rules[0].to_string(), "cause in {contact, scald} -> class 1");
        assert_eq!(rules[1].to_string(), "cause in {flame} -> class 2");
        let csv = rules_to_csv(&rules).unwrap();
        assert!(csv.starts_with("rule,conditions,class,support,expected_cost\n1,\"cause in {contact, scald}\",1,4,0\n"));
        assert_eq!(rules_to_text(&rules).lines().count(), 2);
    }

    #[test]
    fn classifier_matches_tree_on_grid() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![(i % 7) as f64, (i / 7) as f64]).collect();
        let y: Vec<usize> = rows.iter().map(|r| ((r[0] + 2.0 * r[1]) as usize / 4) % 3).collect();
        let data = TrainingData::from_numeric_rows(&["los_days", "tbsa_pct"], &rows).unwrap();
        let tree = build_tree(&data, &labels(&y), &params(3)).unwrap();
        let clf = RuleClassifier::new(extract_rules(&tree));
        for a in 0..30 {
            for b in 0..30 {
                let mut r = PatientRecord::blank("r");
                r.los_days = Some(a as f64 * 0.25 - 0.5);
                r.tbsa_pct = Some(b as f64 * 0.25 - 0.5);
                assert_eq!(clf.classify_record(&r).unwrap(), Some(tree.predict_record(&r).unwrap()));
            }
        }
    }
}
