//! Recursive growth and weakest-link pruning.

use super::data::TrainingData;
use super::impurity::{min_cost_label, quadratic_form};
use super::split::{class_indices, counts_of, search};
use super::{DecisionTree, Internal, Node, TreeParams, TreeSummary};
use crate::cost::CostMatrix;
use crate::domain::RankedClassLabel;
use crate::error::{CasemixError, Result};

/// Subtrees smaller than this are grown on the current thread.
const PARALLEL_MIN_ROWS: usize = 1024;

/// Grows a tree to the stopping rules, then prunes it at `params.cp`.
pub fn build_tree(data: &TrainingData, labels: &[RankedClassLabel], params: &TreeParams) -> Result<DecisionTree> {
    params.validate()?;
    if data.n_rows() == 0 {
        return Err(CasemixError::invalid("cannot build a tree from zero rows"));
    }
    let y = class_indices(labels, data.n_rows(), &params.loss)?;
    let rows: Vec<u32> = (0..data.n_rows() as u32).collect();
    let grower = Grower { data, y: &y, params };
    let mut root = grower.grow(rows, 0);
    prune(&mut root, params.cp);
    Ok(DecisionTree {
        features: data.features.clone(),
        params: params.clone(),
        summary: TreeSummary {
            depth: root.depth(),
            leaves: root.leaf_count(),
            n_train: data.n_rows(),
        },
        root,
    })
}

pub(crate) fn make_node(counts: Vec<usize>, loss: &CostMatrix) -> Node {
    let n: usize = counts.iter().sum();
    let nf = n as f64;
    let cf: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let (label, total) = min_cost_label(&counts, loss);
    Node {
        n,
        impurity: quadratic_form(&cf, loss) / (nf * nf),
        label,
        expected_cost: total / nf,
        class_counts: counts,
        split: None,
    }
}

struct Grower<'a> {
    data: &'a TrainingData,
    y: &'a [usize],
    params: &'a TreeParams,
}

impl Grower<'_> {
    fn grow(&self, rows: Vec<u32>, depth: usize) -> Node {
        let k = self.params.loss.k();
        let mut node = make_node(counts_of(self.y, &rows, k), &self.params.loss);
        if rows.len() < self.params.min_split || depth >= self.params.max_depth || node.impurity == 0.0 {
            return node;
        }
        let Some(found) = search(self.data, self.y, &rows, &self.params.loss, self.params.min_leaf) else {
            return node;
        };
        let column = &self.data.columns[found.feature];
        let (left_rows, right_rows): (Vec<u32>, Vec<u32>) =
            rows.iter().partition(|&&r| found.raw.goes_left(column, r as usize));
        let (left, right) = if rows.len() >= PARALLEL_MIN_ROWS {
            rayon::join(|| self.grow(left_rows, depth + 1), || self.grow(right_rows, depth + 1))
        } else {
            (self.grow(left_rows, depth + 1), self.grow(right_rows, depth + 1))
        };
        node.split = Some(Internal {
            feature: found.feature,
            split: found.raw.to_split(&self.data.features[found.feature].kind),
            decrease: found.decrease,
            left: Box::new(left),
            right: Box::new(right),
        });
        node
    }
}

/// Cost-complexity of collapsing `node`: cost saved per extra leaf.
fn link_strength(node: &Node) -> f64 {
    (node.leaf_total_cost() - node.subtree_cost()) / (node.leaf_count() - 1) as f64
}

/// Preorder index and strength of the weakest internal node; the first
/// one in preorder wins ties.
fn weakest(node: &Node, next: &mut usize, best: &mut Option<(usize, f64)>) {
    let here = *next;
    *next += 1;
    if let Some(s) = &node.split {
        let g = link_strength(node);
        if best.is_none_or(|(_, b)| g < b) {
            *best = Some((here, g));
        }
        weakest(&s.left, next, best);
        weakest(&s.right, next, best);
    }
}

fn collapse(node: &mut Node, target: usize, next: &mut usize) -> bool {
    if *next == target {
        node.split = None;
        return true;
    }
    *next += 1;
    match &mut node.split {
        None => false,
        Some(s) => collapse(&mut s.left, target, next) || collapse(&mut s.right, target, next),
    }
}

/// Repeatedly collapses the weakest link while its strength is below
/// `cp · R(root)`, where R is total misclassification cost.
pub(crate) fn prune(root: &mut Node, cp: f64) {
    let threshold = if cp.is_infinite() {
        f64::INFINITY
    } else {
        cp * root.leaf_total_cost()
    };
    loop {
        let mut best = None;
        weakest(root, &mut 0, &mut best);
        match best {
            Some((target, g)) if g < threshold => {
                collapse(root, target, &mut 0);
            }
            _ => return,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::Split;
    use proptest::prelude::*;

    fn params(k: usize, cp: f64) -> TreeParams {
        TreeParams {
            min_split: 2,
            min_leaf: 1,
            max_depth: 30,
            cp,
            loss: CostMatrix::linear(k).unwrap(),
        }
    }

    fn labels(idx: &[usize]) -> Vec<RankedClassLabel> {
        idx.iter().map(|&i| RankedClassLabel::from_index(i)).collect()
    }

    #[test]
    fn empty_and_mismatched_inputs_rejected() {
        let data = TrainingData::from_numeric_rows(&["x"], &[]).unwrap();
        assert!(build_tree(&data, &[], &params(2, 0.0)).is_err());
        let data = TrainingData::from_numeric_rows(&["x"], &[vec![1.0]]).unwrap();
        assert!(build_tree(&data, &labels(&[5]), &params(2, 0.0)).is_err());
        assert!(build_tree(&data, &labels(&[0, 1]), &params(2, 0.0)).is_err());
    }

    #[test]
    fn single_class_gives_single_leaf() {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64]).collect();
        let data = TrainingData::from_numeric_rows(&["x"], &rows).unwrap();
        let tree = build_tree(&data, &labels(&[2; 30]), &params(3, 0.0)).unwrap();
        assert!(tree.root.is_leaf());
        assert_eq!(tree.root.label.rank(), 3);
    }

    #[test]
    fn max_depth_is_respected() {
        let rows: Vec<Vec<f64>> = (0..64).map(|i| vec![i as f64]).collect();
        let y: Vec<usize> = (0..64).map(|i| i % 2).collect();
        let data = TrainingData::from_numeric_rows(&["x"], &rows).unwrap();
        let mut p = params(2, 0.0);
        p.max_depth = 3;
        let tree = build_tree(&data, &labels(&y), &p).unwrap();
        assert!(tree.summary.depth <= 3);
    }

    #[test]
    fn nested_threshold_tree_structure() {
        let rows: Vec<Vec<f64>> = (0..9).map(|i| vec![i as f64]).collect();
        let y = [0, 0, 0, 1, 1, 1, 2, 2, 2];
        let data = TrainingData::from_numeric_rows(&["x"], &rows).unwrap();
        let tree = build_tree(&data, &labels(&y), &params(3, 0.0)).unwrap();
        assert_eq!(tree.summary.leaves, 3);
        let s = tree.root.split.as_ref().unwrap();
        assert!(matches!(s.split, Split::Numeric { threshold } if threshold == 2.5 || threshold == 5.5));
        assert_eq!(s.left.n + s.right.n, 9);
    }

    fn walk(node: &Node, f: &mut impl FnMut(&Node)) {
        f(node);
        if let Some(s) = &node.split {
            walk(&s.left, f);
            walk(&s.right, f);
        }
    }

    fn arb_problem() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<usize>, usize)> {
        (2usize..5, 5usize..60).prop_flat_map(|(k, n)| {
            (
                proptest::collection::vec(proptest::collection::vec(0i32..6, 2), n)
                    .prop_map(|r| r.into_iter().map(|v| v.into_iter().map(f64::from).collect()).collect()),
                proptest::collection::vec(0..k, n),
                Just(k),
            )
        })
    }

    proptest! {
        #[test]
        fn structural_invariants((rows, y, k) in arb_problem()) {
            let data = TrainingData::from_numeric_rows(&["a", "b"], &rows).unwrap();
            let tree = build_tree(&data, &labels(&y), &params(k, 0.0)).unwrap();
            let mut ok = true;
            walk(&tree.root, &mut |node| {
                let (label, total) = min_cost_label(&node.class_counts, &tree.params.loss);
                ok &= node.label == label && (node.expected_cost * node.n as f64 - total).abs() < 1e-9;
                if let Some(s) = &node.split {
                    ok &= s.left.n + s.right.n == node.n;
                    ok &= s.decrease > 0.0;
                    ok &= s.left.subtree_cost() + s.right.subtree_cost() <= node.leaf_total_cost() + 1e-9;
                }
            });
            prop_assert!(ok);
        }

        #[test]
        fn memorizes_conflict_free_training_data(
            pairs in proptest::collection::vec((0i32..30, 0usize..4), 1..80),
        ) {
            // One feature, so every impure node has a positive first step;
            // repeated values keep the first label seen.
            let mut first = std::collections::BTreeMap::new();
            let rows: Vec<Vec<f64>> = pairs.iter().map(|&(x, _)| vec![f64::from(x)]).collect();
            let y: Vec<usize> = pairs.iter().map(|&(x, l)| *first.entry(x).or_insert(l)).collect();
            let data = TrainingData::from_numeric_rows(&["x"], &rows).unwrap();
            let labels = labels(&y);
            let tree = build_tree(&data, &labels, &params(4, 0.0)).unwrap();
            prop_assert_eq!(tree.predict_training(&data).unwrap(), labels);
        }

        #[test]
        fn leaves_non_increasing_in_cp((rows, y, k) in arb_problem(), a in 0.0f64..0.3, b in 0.0f64..0.3) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let data = TrainingData::from_numeric_rows(&["a", "b"], &rows).unwrap();
            let labels = labels(&y);
            let full = build_tree(&data, &labels, &params(k, 0.0)).unwrap();
            let t_lo = build_tree(&data, &labels, &params(k, lo)).unwrap();
            let t_hi = build_tree(&data, &labels, &params(k, hi)).unwrap();
            prop_assert!(t_hi.summary.leaves <= t_lo.summary.leaves);
            prop_assert!(t_lo.summary.leaves <= full.summary.leaves);
            prop_assert!(t_hi.training_cost() >= t_lo.training_cost() - 1e-9);
            prop_assert!(t_lo.training_cost() >= full.training_cost() - 1e-9);
        }

        #[test]
        fn monotone_transform_invariance((rows, y, k) in arb_problem()) {
            let data = TrainingData::from_numeric_rows(&["a", "b"], &rows).unwrap();
            let moved: Vec<Vec<f64>> = rows.iter().map(|r| vec![r[0].exp(), 3.0 * r[1] - 7.0]).collect();
            let moved_data = TrainingData::from_numeric_rows(&["a", "b"], &moved).unwrap();
            let labels = labels(&y);
            let p = TreeParams { min_split: 4, min_leaf: 2, ..params(k, 0.01) };
            let t1 = build_tree(&data, &labels, &p).unwrap();
            let t2 = build_tree(&moved_data, &labels, &p).unwrap();
            prop_assert_eq!(t1.predict_training(&data).unwrap(), t2.predict_training(&moved_data).unwrap());
            prop_assert_eq!(t1.summary, t2.summary);
        }
    }
}
