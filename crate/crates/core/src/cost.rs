//! Misclassification penalty matrices.

use serde::{Deserialize, Serialize};

use crate::error::{CasemixError, Result};

/// `k`×`k` penalty matrix; rows are true classes, columns predicted classes.
///
/// Indices are zero-based class indices (rank − 1). The diagonal is always
/// zero and every entry is finite and non-negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct CostMatrix {
    k: usize,
    entries: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows.len();
        if k == 0 {
            return Err(CasemixError::invalid("cost matrix must have at least one class"));
        }
        let mut entries = Vec::with_capacity(k * k);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != k {
                return Err(CasemixError::invalid(format!(
                    "cost matrix row {i} has {} entries, expected {k}",
                    row.len()
                )));
            }
            for (j, x) in row.into_iter().enumerate() {
                if !x.is_finite() || x < 0.0 {
                    return Err(CasemixError::invalid(format!(
                        "cost matrix entry ({i},{j}) = {x} is not a finite non-negative number"
                    )));
                }
                if i == j && x != 0.0 {
                    return Err(CasemixError::invalid(format!(
                        "cost matrix diagonal entry ({i},{i}) = {x} must be 0"
                    )));
                }
                entries.push(x);
            }
        }
        Ok(CostMatrix { k, entries })
    }

    /// Penalty `|i − j|`: cost grows linearly with the class distance.
    pub fn linear(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(CasemixError::invalid(format!("linear cost matrix needs k >= 2, got {k}")));
        }
        let entries = (0..k)
            .flat_map(|i| (0..k).map(move |j| i.abs_diff(j) as f64))
            .collect();
        Ok(CostMatrix { k, entries })
    }

    /// Plain 0-1 loss.
    pub fn zero_one(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(CasemixError::invalid(format!("0-1 cost matrix needs k >= 2, got {k}")));
        }
        let entries = (0..k)
            .flat_map(|i| (0..k).map(move |j| if i == j { 0.0 } else { 1.0 }))
            .collect();
        Ok(CostMatrix { k, entries })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn get(&self, true_idx: usize, pred_idx: usize) -> f64 {
        self.entries[true_idx * self.k + pred_idx]
    }

    pub fn row(&self, true_idx: usize) -> &[f64] {
        &self.entries[true_idx * self.k..(true_idx + 1) * self.k]
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.k).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.k).map(<[f64]>::to_vec).collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for CostMatrix {
    type Error = CasemixError;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        CostMatrix::new(rows)
    }
}

impl From<CostMatrix> for Vec<Vec<f64>> {
    fn from(m: CostMatrix) -> Self {
        m.rows()
    }
}
