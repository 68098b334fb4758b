//! Exhaustive split search under a loss matrix.

use rayon::prelude::*;

use super::data::{Column, TrainingData, TreeFeatureKind};
use super::impurity::quadratic_form;
use super::{Split, TreeParams};
use crate::cost::CostMatrix;
use crate::domain::RankedClassLabel;
use crate::error::{CasemixError, Result};

/// Categorical features with more present levels than this are ordered by
/// mean class index and split on prefixes instead of all subsets.
pub const MAX_SUBSET_LEVELS: usize = 10;

/// Below this many rows the per-feature scan runs sequentially.
const PARALLEL_MIN_ROWS: usize = 256;

/// Relative slack for treating two decreases as equal.
const REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub split: Split,
    pub decrease: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum RawSplit {
    Numeric(f64),
    /// Indexed by level code; true goes left.
    Categorical(Vec<bool>),
}

impl RawSplit {
    pub(crate) fn goes_left(&self, column: &Column, row: usize) -> bool {
        match (self, column) {
            (RawSplit::Numeric(t), Column::Numeric(v)) => v[row] < *t,
            (RawSplit::Categorical(mask), Column::Categorical(v)) => mask[v[row] as usize],
            _ => unreachable!("split kind matches its column"),
        }
    }

    pub(crate) fn to_split(&self, kind: &TreeFeatureKind) -> Split {
        match (self, kind) {
            (RawSplit::Numeric(t), _) => Split::Numeric { threshold: *t },
            (RawSplit::Categorical(mask), TreeFeatureKind::Categorical { levels }) => Split::Categorical {
                categories: levels
                    .iter()
                    .zip(mask)
                    .filter(|(_, &m)| m)
                    .map(|(l, _)| l.clone())
                    .collect(),
            },
            _ => unreachable!("split kind matches its feature"),
        }
    }
}

pub(crate) struct Found {
    pub feature: usize,
    pub raw: RawSplit,
    pub decrease: f64,
}

/// Best split over all rows; `None` when no split decreases impurity.
pub fn best_split(
    data: &TrainingData,
    labels: &[RankedClassLabel],
    params: &TreeParams,
) -> Result<Option<SplitCandidate>> {
    params.validate()?;
    let y = class_indices(labels, data.n_rows(), &params.loss)?;
    let rows: Vec<u32> = (0..data.n_rows() as u32).collect();
    if rows.len() < params.min_split {
        return Ok(None);
    }
    Ok(search(data, &y, &rows, &params.loss, params.min_leaf).map(|f| SplitCandidate {
        feature: f.feature,
        split: f.raw.to_split(&data.features[f.feature].kind),
        decrease: f.decrease,
    }))
}

pub(crate) fn class_indices(labels: &[RankedClassLabel], n: usize, loss: &CostMatrix) -> Result<Vec<usize>> {
    if labels.len() != n {
        return Err(CasemixError::invalid(format!("{} labels for {n} rows", labels.len())));
    }
    labels
        .iter()
        .map(|l| {
            if l.index() < loss.k() {
                Ok(l.index())
            } else {
                Err(CasemixError::invalid(format!("label {l} outside 1..={}", loss.k())))
            }
        })
        .collect()
}

pub(crate) fn counts_of(y: &[usize], rows: &[u32], k: usize) -> Vec<usize> {
    let mut c = vec![0; k];
    for &r in rows {
        c[y[r as usize]] += 1;
    }
    c
}

pub(crate) fn search(data: &TrainingData, y: &[usize], rows: &[u32], loss: &CostMatrix, min_leaf: usize) -> Option<Found> {
    let k = loss.k();
    let parent = counts_of(y, rows, k);
    let parent_f: Vec<f64> = parent.iter().map(|&c| c as f64).collect();
    let n = rows.len() as f64;
    let parent_score = quadratic_form(&parent_f, loss) / n;
    if parent_score <= 0.0 {
        return None;
    }
    let ctx = Ctx {
        y,
        rows,
        loss,
        min_leaf,
        parent: &parent_f,
        parent_score,
        tol: REL_TOL * parent_score,
    };
    let scan = |f: usize| -> Option<(f64, RawSplit)> {
        match &data.columns[f] {
            Column::Numeric(v) => ctx.numeric(v),
            Column::Categorical(v) => {
                let n_levels = match &data.features[f].kind {
                    TreeFeatureKind::Categorical { levels } => levels.len(),
                    TreeFeatureKind::Numeric => unreachable!("checked in TrainingData::new"),
                };
                ctx.categorical(v, n_levels)
            }
        }
    };
    let per_feature: Vec<Option<(f64, RawSplit)>> = if rows.len() >= PARALLEL_MIN_ROWS {
        (0..data.n_features()).into_par_iter().map(scan).collect()
    } else {
        (0..data.n_features()).map(scan).collect()
    };
    let mut best: Option<Found> = None;
    for (feature, cand) in per_feature.into_iter().enumerate() {
        if let Some((decrease, raw)) = cand {
            if best.as_ref().is_none_or(|b| decrease > b.decrease + ctx.tol) {
                best = Some(Found { feature, raw, decrease });
            }
        }
    }
    best
}

struct Ctx<'a> {
    y: &'a [usize],
    rows: &'a [u32],
    loss: &'a CostMatrix,
    min_leaf: usize,
    parent: &'a [f64],
    parent_score: f64,
    tol: f64,
}

impl Ctx<'_> {
    fn decrease(&self, q_left: f64, n_left: usize, q_right: f64, n_right: usize) -> f64 {
        self.parent_score - q_left / n_left as f64 - q_right / n_right as f64
    }

    fn accept(&self, d: f64, best: &Option<(f64, RawSplit)>) -> bool {
        d > self.tol && best.as_ref().is_none_or(|b| d > b.0 + self.tol)
    }

    /// Moves rows left one at a time in value order, keeping `L·c` and
    /// `Lᵀ·c` for both sides so each step costs O(K).
    fn numeric(&self, v: &[f64]) -> Option<(f64, RawSplit)> {
        let k = self.loss.k();
        let mut order: Vec<u32> = self.rows.to_vec();
        order.sort_by(|&a, &b| v[a as usize].total_cmp(&v[b as usize]).then(a.cmp(&b)));
        let n = order.len();
        if v[order[0] as usize] == v[order[n - 1] as usize] {
            return None;
        }
        let mut u_left = vec![0.0; k];
        let mut w_left = vec![0.0; k];
        let mut u_right: Vec<f64> = (0..k)
            .map(|i| (0..k).map(|j| self.loss.get(i, j) * self.parent[j]).sum())
            .collect();
        let mut w_right: Vec<f64> = (0..k)
            .map(|j| (0..k).map(|i| self.loss.get(i, j) * self.parent[i]).sum())
            .collect();
        let mut q_left = 0.0;
        let mut q_right = self.parent_score * n as f64;
        let mut best: Option<(f64, RawSplit)> = None;
        for p in 1..n {
            let c = self.y[order[p - 1] as usize];
            q_right -= u_right[c] + w_right[c];
            q_left += u_left[c] + w_left[c];
            for i in 0..k {
                let col = self.loss.get(i, c);
                let row = self.loss.get(c, i);
                u_right[i] -= col;
                w_right[i] -= row;
                u_left[i] += col;
                w_left[i] += row;
            }
            let lo = v[order[p - 1] as usize];
            let hi = v[order[p] as usize];
            if lo == hi || p < self.min_leaf || n - p < self.min_leaf {
                continue;
            }
            let d = self.decrease(q_left.max(0.0), p, q_right.max(0.0), n - p);
            if self.accept(d, &best) {
                let mid = lo + (hi - lo) / 2.0;
                let threshold = if mid > lo { mid } else { hi };
                best = Some((d, RawSplit::Numeric(threshold)));
            }
        }
        best
    }

    fn categorical(&self, v: &[u32], n_levels: usize) -> Option<(f64, RawSplit)> {
        let k = self.loss.k();
        let mut by_level = vec![vec![0usize; k]; n_levels];
        for &r in self.rows {
            by_level[v[r as usize] as usize][self.y[r as usize]] += 1;
        }
        let present: Vec<usize> = (0..n_levels).filter(|&l| by_level[l].iter().any(|&c| c > 0)).collect();
        let m = present.len();
        if m < 2 {
            return None;
        }
        let mut best: Option<(f64, RawSplit)> = None;
        let consider = |left_levels: &[usize], best: &mut Option<(f64, RawSplit)>| {
            let mut left = vec![0.0; k];
            for &l in left_levels {
                for (c, &x) in left.iter_mut().zip(&by_level[l]) {
                    *c += x as f64;
                }
            }
            let right: Vec<f64> = self.parent.iter().zip(&left).map(|(p, l)| p - l).collect();
            let n_left = left.iter().sum::<f64>() as usize;
            let n_right = self.rows.len() - n_left;
            if n_left < self.min_leaf || n_right < self.min_leaf {
                return;
            }
            let d = self.decrease(
                quadratic_form(&left, self.loss),
                n_left,
                quadratic_form(&right, self.loss),
                n_right,
            );
            if self.accept(d, best) {
                let mut mask = vec![false; n_levels];
                for &l in left_levels {
                    mask[l] = true;
                }
                *best = Some((d, RawSplit::Categorical(mask)));
            }
        };
        if m <= MAX_SUBSET_LEVELS {
            // The first present level always sits on the left, so each
            // partition is visited once.
            for bits in 0..(1u32 << (m - 1)) - 1 {
                let left: Vec<usize> = std::iter::once(present[0])
                    .chain((1..m).filter(|j| bits >> (j - 1) & 1 == 1).map(|j| present[j]))
                    .collect();
                consider(&left, &mut best);
            }
        } else {
            let mean = |l: usize| {
                let c = &by_level[l];
                let n: usize = c.iter().sum();
                c.iter().enumerate().map(|(i, &x)| (i * x) as f64).sum::<f64>() / n as f64
            };
            let mut ordered = present.clone();
            ordered.sort_by(|&a, &b| mean(a).total_cmp(&mean(b)).then(a.cmp(&b)));
            for p in 1..m {
                consider(&ordered[..p], &mut best);
            }
        }
        best
    }
}
