//! JSON model documents.

use serde::{Deserialize, Serialize};

use super::{DecisionTree, Internal, Node, Split, TreeFeature, TreeFeatureKind, TreeParams, TreeSummary};
use crate::domain::RankedClassLabel;
use crate::error::{CasemixError, Result};

pub const TREE_FORMAT_VERSION: &str = "casemix-tree/1";

#[derive(Deserialize)]
struct Header {
    version: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeDoc {
    version: String,
    params: TreeParams,
    schema: Vec<TreeFeature>,
    summary: TreeSummary,
    root: NodeDoc,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    n: usize,
    counts: Vec<usize>,
    label: usize,
    expected_cost: f64,
    impurity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    feature: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    categories: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    decrease: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    children: Vec<NodeDoc>,
}

fn to_doc(tree: &DecisionTree, node: &Node) -> NodeDoc {
    let mut doc = NodeDoc {
        n: node.n,
        counts: node.class_counts.clone(),
        label: node.label.rank(),
        expected_cost: node.expected_cost,
        impurity: node.impurity,
        feature: None,
        threshold: None,
        categories: None,
        decrease: None,
        children: Vec::new(),
    };
    if let Some(s) = &node.split {
        doc.feature = Some(tree.features[s.feature].name.clone());
        match &s.split {
            Split::Numeric { threshold } => doc.threshold = Some(*threshold),
            Split::Categorical { categories } => doc.categories = Some(categories.clone()),
        }
        doc.decrease = Some(s.decrease);
        doc.children = vec![to_doc(tree, &s.left), to_doc(tree, &s.right)];
    }
    doc
}

fn bad(path: &str, msg: impl std::fmt::Display) -> CasemixError {
    CasemixError::parse(path, msg)
}

fn from_doc(doc: NodeDoc, features: &[TreeFeature], k: usize, path: &str) -> Result<Node> {
    if doc.counts.len() != k {
        return Err(bad(path, format!("counts has {} entries, expected {k}", doc.counts.len())));
    }
    if doc.counts.iter().sum::<usize>() != doc.n {
        return Err(bad(path, "counts do not sum to n"));
    }
    if doc.label == 0 || doc.label > k {
        return Err(bad(path, format!("label {} outside 1..={k}", doc.label)));
    }
    let split = match (doc.feature, doc.children.len()) {
        (None, 0) => {
            if doc.threshold.is_some() || doc.categories.is_some() || doc.decrease.is_some() {
                return Err(bad(path, "leaf carries split fields"));
            }
            None
        }
        (Some(name), 2) => {
            let index = features
                .iter()
                .position(|f| f.name == name)
                .ok_or_else(|| bad(path, format!("unknown feature {name:?}")))?;
            let split = match (&features[index].kind, doc.threshold, doc.categories) {
                (TreeFeatureKind::Numeric, Some(t), None) if t.is_finite() => Split::Numeric { threshold: t },
                (TreeFeatureKind::Categorical { levels }, None, Some(cats)) => {
                    if cats.windows(2).any(|w| w[0] >= w[1]) || cats.iter().any(|c| levels.binary_search(c).is_err()) {
                        return Err(bad(path, "categories must be sorted, unique, known levels"));
                    }
                    Split::Categorical { categories: cats }
                }
                _ => return Err(bad(path, format!("split does not match the kind of {name:?}"))),
            };
            let mut children = doc.children.into_iter();
            let left = from_doc(children.next().expect("two children"), features, k, &format!("{path}.children[0]"))?;
            let right = from_doc(children.next().expect("two children"), features, k, &format!("{path}.children[1]"))?;
            if left.n + right.n != doc.n {
                return Err(bad(path, "children n do not sum to parent n"));
            }
            Some(Internal {
                feature: index,
                split,
                decrease: doc.decrease.ok_or_else(|| bad(path, "internal node lacks decrease"))?,
                left: Box::new(left),
                right: Box::new(right),
            })
        }
        _ => return Err(bad(path, "a node needs either no feature and no children, or a feature and two children")),
    };
    Ok(Node {
        n: doc.n,
        class_counts: doc.counts,
        impurity: doc.impurity,
        label: RankedClassLabel::from_index(doc.label - 1),
        expected_cost: doc.expected_cost,
        split,
    })
}

impl DecisionTree {
    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> Result<String> {
        let doc = TreeDoc {
            version: TREE_FORMAT_VERSION.to_string(),
            params: self.params.clone(),
            schema: self.features.clone(),
            summary: self.summary.clone(),
            root: to_doc(self, &self.root),
        };
        let mut text = serde_json::to_string_pretty(&doc)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<DecisionTree> {
        let header: Header = serde_json::from_str(text)?;
        match header.version.as_deref() {
            Some(TREE_FORMAT_VERSION) => {}
            found => {
                return Err(CasemixError::Version {
                    expected: TREE_FORMAT_VERSION.to_string(),
                    found: found.unwrap_or("<missing>").to_string(),
                })
            }
        }
        let doc: TreeDoc = serde_json::from_str(text)?;
        doc.params.validate().map_err(|e| bad("params", e))?;
        let mut names: Vec<&str> = doc.schema.iter().map(|f| f.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(bad("schema", "duplicate feature names"));
        }
        for (i, f) in doc.schema.iter().enumerate() {
            if let TreeFeatureKind::Categorical { levels } = &f.kind {
                if levels.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(bad(&format!("schema[{i}]"), "levels must be sorted and unique"));
                }
            }
        }
        let root = from_doc(doc.root, &doc.schema, doc.params.loss.k(), "root")?;
        let summary = TreeSummary {
            depth: root.depth(),
            leaves: root.leaf_count(),
            n_train: root.n,
        };
        if summary != doc.summary {
            return Err(bad("summary", "does not match the tree"));
        }
        Ok(DecisionTree {
            features: doc.schema,
            params: doc.params,
            root,
            summary,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::CostMatrix;
    use crate::tree::{build_tree, Column, TrainingData};

    fn sample_tree() -> (DecisionTree, TrainingData) {
        let rows: Vec<(f64, u32)> = (0..60).map(|i| ((i as f64).sqrt() * 1.37, (i % 3) as u32)).collect();
        let data = TrainingData::new(
            vec![
                TreeFeature {
                    name: "x".into(),
                    kind: TreeFeatureKind::Numeric,
                },
                TreeFeature {
                    name: "c".into(),
                    kind: TreeFeatureKind::Categorical {
                        levels: vec!["a".into(), "b".into(), "c".into()],
                    },
                },
            ],
            vec![
                Column::Numeric(rows.iter().map(|r| r.0).collect()),
                Column::Categorical(rows.iter().map(|r| r.1).collect()),
            ],
        )
        .unwrap();
        let labels: Vec<_> = rows
            .iter()
            .map(|r| RankedClassLabel::from_index(((r.0 / 3.0) as usize + (r.1 == 1) as usize).min(3)))
            .collect();
        let params = TreeParams {
            min_split: 4,
            min_leaf: 2,
            max_depth: 30,
            cp: 0.0,
            loss: CostMatrix::linear(4).unwrap(),
        };
        (build_tree(&data, &labels, &params).unwrap(), data)
    }

    #[test]
    fn round_trip_is_lossless() {
        let (tree, data) = sample_tree();
        assert!(tree.summary.leaves > 2);
        let text = tree.to_json().unwrap();
        let back = DecisionTree::from_json(&text).unwrap();
        assert_eq!(back, tree);
        assert_eq!(back.to_json().unwrap(), text);
        assert_eq!(back.predict_training(&data).unwrap(), tree.predict_training(&data).unwrap());
    }

    #[test]
    fn truncated_document_reports_location() {
        let (tree, _) = sample_tree();
        let text = tree.to_json().unwrap();
        let err = DecisionTree::from_json(&text[..text.len() / 2]).unwrap_err();
        match err {
            CasemixError::Parse { location, .. } => assert!(location.starts_with("line ")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_is_explicit() {
        let (tree, _) = sample_tree();
        let text = tree.to_json().unwrap().replace(TREE_FORMAT_VERSION, "casemix-tree/0");
        assert!(matches!(
            DecisionTree::from_json(&text),
            Err(CasemixError::Version { found, .. }) if found == "casemix-tree/0"
        ));
        assert!(matches!(DecisionTree::from_json("{}"), Err(CasemixError::Version { .. })));
    }

    #[test]
    fn semantic_errors_name_the_node() {
        let (tree, _) = sample_tree();
        let mut v: serde_json::Value = serde_json::from_str(&tree.to_json().unwrap()).unwrap();
        v["root"]["children"][1]["counts"] = serde_json::json!([1]);
        let err = DecisionTree::from_json(&v.to_string()).unwrap_err();
        match err {
            CasemixError::Parse { location, .. } => assert_eq!(location, "root.children[1]"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
