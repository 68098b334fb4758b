//! Cost-sensitive classification trees.
//!
//! Binary recursive partitioning with a loss-matrix Gini criterion,
//! minimum-expected-cost leaf labels and weakest-link pruning.

mod build;
mod data;
mod impurity;
mod io;
mod rules;
mod split;

use serde::{Deserialize, Serialize};

pub use build::build_tree;
pub use data::{Column, TrainingData, TreeFeature, TreeFeatureKind};
pub use impurity::{gini_loss_impurity, leaf_label};
pub use io::TREE_FORMAT_VERSION;
pub use rules::{extract_rules, rules_to_csv, rules_to_text, RuleClassifier, RuleCondition, TreeRule};
pub use split::{best_split, SplitCandidate};

use crate::cost::CostMatrix;
use crate::domain::{FeatureRef, PatientRecord, RankedClassLabel};
use crate::error::{CasemixError, Result};
use crate::dataset::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeParams {
    #[serde(default = "default_min_split")]
    pub min_split: usize,
    #[serde(default = "default_min_leaf")]
    pub min_leaf: usize,
    #[serde(default = "default_max_depth")]
    pub max_depth: usize,
    /// Complexity threshold relative to the root's total cost. Infinite
    /// values are written to JSON as `null`.
    #[serde(default = "default_cp", with = "cp_serde")]
    pub cp: f64,
    pub loss: CostMatrix,
}

fn default_min_split() -> usize {
    20
}
fn default_min_leaf() -> usize {
    7
}
fn default_max_depth() -> usize {
    30
}
fn default_cp() -> f64 {
    0.01
}

pub(crate) mod cp_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(cp: &f64, s: S) -> Result<S::Ok, S::Error> {
        if cp.is_finite() {
            s.serialize_f64(*cp)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl TreeParams {
    pub fn new(loss: CostMatrix) -> Self {
        TreeParams {
            min_split: default_min_split(),
            min_leaf: default_min_leaf(),
            max_depth: default_max_depth(),
            cp: default_cp(),
            loss,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_leaf < 1 {
            return Err(CasemixError::invalid("min_leaf must be at least 1"));
        }
        if self.min_split < 2 * self.min_leaf {
            return Err(CasemixError::invalid(format!(
                "min_split ({}) must be at least 2 * min_leaf ({})",
                self.min_split, self.min_leaf
            )));
        }
        if self.cp.is_nan() || self.cp < 0.0 {
            return Err(CasemixError::invalid(format!("cp must be >= 0, got {}", self.cp)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Split {
    /// Rows with `value < threshold` go left.
    Numeric { threshold: f64 },
    /// Rows whose level is in `categories` (sorted) go left.
    Categorical { categories: Vec<String> },
}

impl Split {
    /// `Some(true)` for left, `None` when the value cannot be routed.
    fn goes_left(&self, value: FeatureRef<'_>) -> Option<bool> {
        match (self, value) {
            (Split::Numeric { threshold }, FeatureRef::Num(x)) => Some(x < *threshold),
            (Split::Categorical { categories }, FeatureRef::Cat(s)) => {
                Some(categories.binary_search_by(|c| c.as_str().cmp(s)).is_ok())
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Internal {
    /// Index into the tree's feature list.
    pub feature: usize,
    pub split: Split,
    /// `n·I(parent) − n_L·I(L) − n_R·I(R)`.
    pub decrease: f64,
    pub left: Box<Node>,
    pub right: Box<Node>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub n: usize,
    pub class_counts: Vec<usize>,
    pub impurity: f64,
    /// Minimum expected-cost label of the node's rows.
    pub label: RankedClassLabel,
    /// Expected cost per row of predicting `label`.
    pub expected_cost: f64,
    pub split: Option<Internal>,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.split.is_none()
    }

    /// Total (un-normalized) misclassification cost as a leaf.
    pub fn leaf_total_cost(&self) -> f64 {
        self.expected_cost * self.n as f64
    }

    pub fn leaf_count(&self) -> usize {
        match &self.split {
            None => 1,
            Some(s) => s.left.leaf_count() + s.right.leaf_count(),
        }
    }

    pub fn depth(&self) -> usize {
        match &self.split {
            None => 0,
            Some(s) => 1 + s.left.depth().max(s.right.depth()),
        }
    }

    /// Total cost of the subtree's leaves.
    pub fn subtree_cost(&self) -> f64 {
        match &self.split {
            None => self.leaf_total_cost(),
            Some(s) => s.left.subtree_cost() + s.right.subtree_cost(),
        }
    }

    /// Child taken when the split value is missing: larger n, ties left.
    fn majority_child(s: &Internal) -> &Node {
        if s.right.n > s.left.n {
            &s.right
        } else {
            &s.left
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeSummary {
    pub depth: usize,
    pub leaves: usize,
    pub n_train: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    pub features: Vec<TreeFeature>,
    pub params: TreeParams,
    pub root: Node,
    pub summary: TreeSummary,
}

impl DecisionTree {
    pub fn k(&self) -> usize {
        self.params.loss.k()
    }

    pub fn feature_names(&self) -> Vec<&str> {
        self.features.iter().map(|f| f.name.as_str()).collect()
    }

    /// Predicts from values given in the tree's feature order. Missing
    /// values, and categorical levels not seen in training, follow the
    /// child with more training rows.
    pub fn predict_row(&self, row: &[Option<FeatureRef<'_>>]) -> Result<RankedClassLabel> {
        if row.len() != self.features.len() {
            return Err(CasemixError::invalid(format!(
                "row has {} values, tree expects {}",
                row.len(),
                self.features.len()
            )));
        }
        let mut node = &self.root;
        while let Some(s) = &node.split {
            node = match row[s.feature] {
                None => Node::majority_child(s),
                Some(v) => {
                    let known = match (&self.features[s.feature].kind, v) {
                        (TreeFeatureKind::Numeric, FeatureRef::Num(_)) => true,
                        (TreeFeatureKind::Categorical { levels }, FeatureRef::Cat(c)) => {
                            levels.binary_search_by(|l| l.as_str().cmp(c)).is_ok()
                        }
                        _ => {
                            return Err(CasemixError::invalid(format!(
                                "feature {} has the wrong kind",
                                self.features[s.feature].name
                            )))
                        }
                    };
                    match s.split.goes_left(v) {
                        _ if !known => Node::majority_child(s),
                        Some(true) => &s.left,
                        Some(false) => &s.right,
                        None => unreachable!("kind checked above"),
                    }
                }
            };
        }
        Ok(node.label)
    }

    /// Looks features up by name on the record.
    pub fn predict_record(&self, record: &PatientRecord) -> Result<RankedClassLabel> {
        let row = self
            .features
            .iter()
            .map(|f| record.feature(&f.name))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| match e {
                CasemixError::SchemaMismatch(m) => CasemixError::invalid(m),
                other => other,
            })?;
        self.predict_row(&row)
    }

    pub fn predict_dataset(&self, ds: &Dataset) -> Result<Vec<RankedClassLabel>> {
        ds.records.iter().map(|r| self.predict_record(r)).collect()
    }

    pub fn predict_training(&self, data: &TrainingData) -> Result<Vec<RankedClassLabel>> {
        (0..data.n_rows()).map(|i| self.predict_row(&data.row(i))).collect()
    }

    /// Summed impurity decrease per feature, descending; unused features
    /// are omitted. Ties keep feature order.
    pub fn variable_importance(&self) -> Vec<(String, f64)> {
        let mut scores = vec![0.0; self.features.len()];
        let mut used = vec![false; self.features.len()];
        let mut stack = vec![&self.root];
        while let Some(node) = stack.pop() {
            if let Some(s) = &node.split {
                scores[s.feature] += s.decrease;
                used[s.feature] = true;
                stack.push(&s.left);
                stack.push(&s.right);
            }
        }
        let mut out: Vec<(usize, f64)> = (0..scores.len()).filter(|&i| used[i]).map(|i| (i, scores[i])).collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        out.into_iter().map(|(i, s)| (self.features[i].name.clone(), s)).collect()
    }

    /// Sum over leaves of their total misclassification cost.
    pub fn training_cost(&self) -> f64 {
        self.root.subtree_cost()
    }

    pub fn loss(&self) -> &CostMatrix {
        &self.params.loss
    }
}
