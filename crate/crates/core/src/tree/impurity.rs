//! Loss-matrix impurity and expected-cost leaf labelling.

use crate::cost::CostMatrix;
use crate::domain::RankedClassLabel;
use crate::error::{CasemixError, Result};

fn check(counts: &[usize], loss: &CostMatrix) -> Result<usize> {
    if counts.len() != loss.k() {
        return Err(CasemixError::invalid(format!(
            "{} class counts for a {}-class loss matrix",
            counts.len(),
            loss.k()
        )));
    }
    let n: usize = counts.iter().sum();
    if n == 0 {
        return Err(CasemixError::invalid("class counts are all zero"));
    }
    Ok(n)
}

/// `Σ_ij L[i][j]·c_i·c_j` on raw counts. Dividing by n² gives the impurity.
pub(crate) fn quadratic_form(counts: &[f64], loss: &CostMatrix) -> f64 {
    let k = loss.k();
    let mut total = 0.0;
    for i in 0..k {
        if counts[i] == 0.0 {
            continue;
        }
        let row = loss.row(i);
        let mut inner = 0.0;
        for j in 0..k {
            inner += row[j] * counts[j];
        }
        total += counts[i] * inner;
    }
    total
}

/// Generalized Gini impurity `Σ_{i≠j} L[i][j]·p_i·p_j`.
///
/// With 0-1 loss this is the ordinary Gini index `1 − Σ p_i²`.
pub fn gini_loss_impurity(counts: &[usize], loss: &CostMatrix) -> Result<f64> {
    let n = check(counts, loss)? as f64;
    let c: Vec<f64> = counts.iter().map(|&x| x as f64).collect();
    Ok(quadratic_form(&c, loss) / (n * n))
}

/// Total cost `Σ_i L[i][pred]·c_i` of predicting every member as `pred`.
pub(crate) fn total_cost_of(counts: &[usize], loss: &CostMatrix, pred: usize) -> f64 {
    counts
        .iter()
        .enumerate()
        .map(|(i, &c)| loss.get(i, pred) * c as f64)
        .sum()
}

/// Minimum-total-cost label; ties go to the lowest rank. Returns the label
/// and the (un-normalized) total cost.
pub(crate) fn min_cost_label(counts: &[usize], loss: &CostMatrix) -> (RankedClassLabel, f64) {
    let mut best = (0, f64::INFINITY);
    for pred in 0..loss.k() {
        let cost = total_cost_of(counts, loss, pred);
        if cost < best.1 {
            best = (pred, cost);
        }
    }
    (RankedClassLabel::from_index(best.0), best.1)
}

/// The label minimizing expected misclassification cost, and that cost per
/// member. Ties go to the lowest rank.
pub fn leaf_label(counts: &[usize], loss: &CostMatrix) -> Result<(RankedClassLabel, f64)> {
    let n = check(counts, loss)?;
    let (label, total) = min_cost_label(counts, loss);
    Ok((label, total / n as f64))
}
