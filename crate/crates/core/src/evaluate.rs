//! Grouping quality: intra-group variance, ordinal confusion, boxplot
//! summaries and the tree-versus-rules comparison.

use std::collections::BTreeMap;
use std::fmt::Display;

use serde::{Deserialize, Serialize};

use crate::cost::CostMatrix;
use crate::dataset::Dataset;
use crate::domain::{RankedClassLabel, COST, LOS, TBSA};
use crate::error::{CasemixError, Result};
use crate::preprocess::log1p_factor;

/// Resource factors compared between groupings, in report order.
pub const FACTORS: [&str; 3] = [LOS, COST, TBSA];

/// Adjacent class pairs confused more often than this are merge candidates.
pub const DEFAULT_MERGE_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupVariance {
    pub group: String,
    pub n: usize,
    /// Sample variance of log1p values; 0 for groups of one.
    pub variance: f64,
    /// Set for groups of size 1, which are left out of the mean.
    pub singleton: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub groups: Vec<GroupVariance>,
    /// Unweighted mean over groups with at least two members; 0 if none.
    pub mean: f64,
    /// Size-weighted mean over the same groups.
    pub weighted_mean: f64,
}

fn check_aligned(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(CasemixError::invalid(format!("{what}: {a} values but {b} labels")));
    }
    Ok(())
}

fn grouped<'a, G: Ord>(values: &'a [f64], groups: &'a [G]) -> BTreeMap<&'a G, Vec<f64>> {
    let mut by: BTreeMap<&G, Vec<f64>> = BTreeMap::new();
    for (v, g) in values.iter().zip(groups) {
        by.entry(g).or_default().push(*v);
    }
    by
}

fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
}

/// Per-group sample variance of `ln(1 + value)`. Groups are reported in
/// label order.
pub fn intra_group_variance<G: Ord + Display>(values: &[f64], groups: &[G]) -> Result<VarianceReport> {
    check_aligned(values.len(), groups.len(), "intra_group_variance")?;
    let logged = log1p_factor(values)?;
    let mut out = Vec::new();
    let (mut sum, mut wsum, mut counted, mut wn) = (0.0, 0.0, 0usize, 0usize);
    for (g, xs) in grouped(&logged, groups) {
        let variance = sample_variance(&xs);
        if xs.len() >= 2 {
            sum += variance;
            wsum += variance * xs.len() as f64;
            counted += 1;
            wn += xs.len();
        }
        out.push(GroupVariance {
            group: g.to_string(),
            n: xs.len(),
            variance,
            singleton: xs.len() < 2,
        });
    }
    Ok(VarianceReport {
        groups: out,
        mean: if counted == 0 { 0.0 } else { sum / counted as f64 },
        weighted_mean: if wn == 0 { 0.0 } else { wsum / wn as f64 },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionSummary {
    pub k: usize,
    /// Rows are true classes, columns predicted, both by index.
    pub matrix: Vec<Vec<usize>>,
    pub total: usize,
    pub accuracy: f64,
    pub total_loss: f64,
    pub mean_abs_distance: f64,
    /// Largest `|true − pred|`; 0 when there are no errors.
    pub max_distance: usize,
    /// Count of cases at each distance `0..k`.
    pub distance_histogram: Vec<usize>,
}

impl ConfusionSummary {
    pub fn errors(&self) -> usize {
        self.total - self.distance_histogram[0]
    }

    /// Share of errors within `d` classes of the truth; 1 with no errors.
    pub fn errors_within(&self, d: usize) -> f64 {
        let errors = self.errors();
        if errors == 0 {
            return 1.0;
        }
        let near: usize = self.distance_histogram.iter().take(d + 1).skip(1).sum();
        near as f64 / errors as f64
    }
}

pub fn confusion(
    truth: &[RankedClassLabel],
    pred: &[RankedClassLabel],
    loss: &CostMatrix,
) -> Result<ConfusionSummary> {
    check_aligned(truth.len(), pred.len(), "confusion")?;
    let k = loss.k();
    let mut matrix = vec![vec![0usize; k]; k];
    let mut hist = vec![0usize; k];
    let mut total_loss = 0.0;
    let mut dist_sum = 0usize;
    for (t, p) in truth.iter().zip(pred) {
        if t.index() >= k || p.index() >= k {
            return Err(CasemixError::invalid(format!("label pair ({t}, {p}) outside 1..={k}")));
        }
        matrix[t.index()][p.index()] += 1;
        total_loss += loss.get(t.index(), p.index());
        let d = t.distance(*p);
        hist[d] += 1;
        dist_sum += d;
    }
    let total = truth.len();
    let correct: usize = (0..k).map(|i| matrix[i][i]).sum();
    let max_distance = hist.iter().rposition(|&c| c > 0).unwrap_or(0);
    Ok(ConfusionSummary {
        k,
        matrix,
        total,
        accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        total_loss,
        mean_abs_distance: if total == 0 { 0.0 } else { dist_sum as f64 / total as f64 },
        max_distance,
        distance_histogram: hist,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub group: String,
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxplotReport {
    pub rows: Vec<BoxStats>,
    /// Expected groups with no members; they get no row.
    pub empty_groups: Vec<String>,
}

/// Quantile by linear interpolation between order statistics at
/// `h = (n − 1)·p` (the "type 7" definition). `sorted` must be non-empty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Five-number summaries of raw values per group. Groups listed in
/// `expected` but absent from `groups` are reported as empty.
pub fn boxplot_stats<G: Ord + Display>(values: &[f64], groups: &[G], expected: &[G]) -> Result<BoxplotReport> {
    check_aligned(values.len(), groups.len(), "boxplot_stats")?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(CasemixError::invalid("boxplot values must be finite"));
    }
    let by = grouped(values, groups);
    let mut rows = Vec::with_capacity(by.len());
    for (g, mut xs) in by.iter().map(|(g, xs)| (g, xs.clone())) {
        xs.sort_by(f64::total_cmp);
        rows.push(BoxStats {
            group: g.to_string(),
            n: xs.len(),
            min: xs[0],
            q1: quantile_sorted(&xs, 0.25),
            median: quantile_sorted(&xs, 0.5),
            q3: quantile_sorted(&xs, 0.75),
            max: xs[xs.len() - 1],
        });
    }
    let mut empty: Vec<&G> = expected.iter().filter(|g| !by.contains_key(g)).collect();
    empty.sort();
    empty.dedup();
    Ok(BoxplotReport {
        rows,
        empty_groups: empty.into_iter().map(ToString::to_string).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorComparison {
    pub factor: String,
    pub tree: VarianceReport,
    pub rules: VarianceReport,
    /// `rules.mean / tree.mean`; `None` when the tree mean is 0 and the
    /// rules mean is not.
    pub ratio: Option<f64>,
    pub ratio_infinite: bool,
    pub tree_lower: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityCheck {
    pub grouping: String,
    pub factor: String,
    /// Mean raw factor value per group, in group order.
    pub group_means: Vec<(String, f64)>,
    /// Adjacent group pairs whose mean decreases.
    pub decreases: Vec<(String, String)>,
}

impl MonotonicityCheck {
    pub fn is_monotone(&self) -> bool {
        self.decreases.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeCandidate {
    pub lower: usize,
    pub upper: usize,
    /// Cases of either class predicted as the other.
    pub confused: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub n: usize,
    pub factors: Vec<FactorComparison>,
    pub monotonicity: Vec<MonotonicityCheck>,
    pub merge_candidates: Vec<MergeCandidate>,
    /// True when the tree grouping has the lower mean variance on every
    /// factor.
    pub tree_lower_everywhere: bool,
}

/// Per-group mean of `values` and the adjacent pairs where it decreases.
pub fn monotonicity<G: Ord + Display>(grouping: &str, factor: &str, values: &[f64], groups: &[G]) -> Result<MonotonicityCheck> {
    check_aligned(values.len(), groups.len(), "monotonicity")?;
    let means: Vec<(String, f64)> = grouped(values, groups)
        .into_iter()
        .map(|(g, xs)| (g.to_string(), xs.iter().sum::<f64>() / xs.len() as f64))
        .collect();
    let decreases = means
        .windows(2)
        .filter(|w| w[1].1 < w[0].1)
        .map(|w| (w[0].0.clone(), w[1].0.clone()))
        .collect();
    Ok(MonotonicityCheck {
        grouping: grouping.to_string(),
        factor: factor.to_string(),
        group_means: means,
        decreases,
    })
}

/// Adjacent classes whose mutual confusion exceeds `threshold` of their
/// combined true count.
pub fn merge_candidates(summary: &ConfusionSummary, threshold: f64) -> Vec<MergeCandidate> {
    let m = &summary.matrix;
    (0..summary.k.saturating_sub(1))
        .filter_map(|i| {
            let confused = m[i][i + 1] + m[i + 1][i];
            let support: usize = m[i].iter().sum::<usize>() + m[i + 1].iter().sum::<usize>();
            if support == 0 {
                return None;
            }
            let fraction = confused as f64 / support as f64;
            (fraction > threshold).then_some(MergeCandidate {
                lower: i + 1,
                upper: i + 2,
                confused,
                fraction,
            })
        })
        .collect()
}

/// Compares two labelings of the same records on every resource factor.
pub fn compare_groupings<A, B>(
    ds: &Dataset,
    tree_labels: &[A],
    rule_labels: &[B],
    confusion: Option<&ConfusionSummary>,
    merge_threshold: f64,
) -> Result<Comparison>
where
    A: Ord + Display,
    B: Ord + Display,
{
    check_aligned(ds.len(), tree_labels.len(), "compare_groupings (tree)")?;
    check_aligned(ds.len(), rule_labels.len(), "compare_groupings (rules)")?;
    let mut factors = Vec::new();
    let mut mono = Vec::new();
    for factor in FACTORS {
        let values = ds.factor_values(factor)?;
        let tree = intra_group_variance(&values, tree_labels)?;
        let rules = intra_group_variance(&values, rule_labels)?;
        let (ratio, ratio_infinite) = if tree.mean > 0.0 {
            (Some(rules.mean / tree.mean), false)
        } else if rules.mean > 0.0 {
            (None, true)
        } else {
            (Some(1.0), false)
        };
        factors.push(FactorComparison {
            factor: factor.to_string(),
            tree_lower: tree.mean < rules.mean,
            tree,
            rules,
            ratio,
            ratio_infinite,
        });
        mono.push(monotonicity("tree", factor, &values, tree_labels)?);
        mono.push(monotonicity("rules", factor, &values, rule_labels)?);
    }
    Ok(Comparison {
        n: ds.len(),
        tree_lower_everywhere: factors.iter().all(|f| f.tree_lower),
        factors,
        monotonicity: mono,
        merge_candidates: confusion.map(|c| merge_candidates(c, merge_threshold)).unwrap_or_default(),
    })
}

/// One row per group per factor per grouping.
pub fn variance_csv(comparison: &Comparison) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["grouping", "factor", "group", "n", "variance", "singleton"])?;
    for f in &comparison.factors {
        for (name, report) in [("tree", &f.tree), ("rules", &f.rules)] {
            for g in &report.groups {
                w.write_record([
                    name,
                    f.factor.as_str(),
                    g.group.as_str(),
                    &g.n.to_string(),
                    &g.variance.to_string(),
                    &g.singleton.to_string(),
                ])?;
            }
        }
    }
    finish_csv(w)
}

pub fn boxplot_csv(factor_rows: &[(String, String, BoxplotReport)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["grouping", "factor", "group", "n", "min", "q1", "median", "q3", "max"])?;
    for (grouping, factor, report) in factor_rows {
        for r in &report.rows {
            w.write_record([
                grouping.as_str(),
                factor.as_str(),
                r.group.as_str(),
                &r.n.to_string(),
                &r.min.to_string(),
                &r.q1.to_string(),
                &r.median.to_string(),
                &r.q3.to_string(),
                &r.max.to_string(),
            ])?;
        }
    }
    finish_csv(w)
}

pub fn confusion_csv(summary: &ConfusionSummary) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["true\\pred".to_string()];
    header.extend((1..=summary.k).map(|i| i.to_string()));
    w.write_record(&header)?;
    for (i, row) in summary.matrix.iter().enumerate() {
        let mut rec = vec![(i + 1).to_string()];
        rec.extend(row.iter().map(ToString::to_string));
        w.write_record(&rec)?;
    }
    finish_csv(w)
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| CasemixError::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| CasemixError::invalid(e.to_string()))
}
