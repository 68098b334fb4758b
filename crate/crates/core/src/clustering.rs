//! k-means with k-means++ seeding, and severity ranking of clusters.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::RankedClassLabel;
use crate::error::{CasemixError, Result};
use crate::preprocess::log1p_factor;
use crate::rng::{mix_key, tag};

pub const DEFAULT_RESTARTS: usize = 10;
pub const DEFAULT_MAX_ITER: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub k: usize,
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl KMeansParams {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansParams {
            k,
            restarts: DEFAULT_RESTARTS,
            max_iter: DEFAULT_MAX_ITER,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    pub inertia: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Inertia after each centre update of the winning restart.
    pub inertia_trace: Vec<f64>,
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn distinct_count<P: AsRef<[f64]>>(points: &[P]) -> usize {
    let mut v: Vec<&[f64]> = points.iter().map(AsRef::as_ref).collect();
    let cmp = |a: &&[f64], b: &&[f64]| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    };
    v.sort_by(cmp);
    v.dedup_by(|a, b| cmp(a, b) == Ordering::Equal);
    v.len()
}

fn plus_plus_seeds<P: AsRef<[f64]>, R: Rng>(points: &[P], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers = vec![points[rng.random_range(0..n)].as_ref().to_vec()];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| sq_dist(p.as_ref(), &centers[0]))
        .collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = None;
        for (i, d) in d2.iter().enumerate() {
            acc += d;
            if *d > 0.0 && target < acc {
                chosen = Some(i);
                break;
            }
        }
        // Rounding can leave `target` just past the final sum.
        let chosen = chosen.unwrap_or_else(|| d2.iter().rposition(|d| *d > 0.0).expect("distinct points remain"));
        let c = points[chosen].as_ref().to_vec();
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p.as_ref(), &c));
        }
        centers.push(c);
    }
    centers
}

fn assign<P: AsRef<[f64]> + Sync>(points: &[P], centers: &[Vec<f64>]) -> Vec<(usize, f64)> {
    points.par_iter().map(|p| nearest(p.as_ref(), centers)).collect()
}

/// Moves an empty cluster's centre onto the point farthest from its own
/// centre. Returns true if anything changed.
fn repair_empty<P: AsRef<[f64]>>(
    points: &[P],
    centers: &mut [Vec<f64>],
    assigned: &mut [(usize, f64)],
) -> bool {
    let k = centers.len();
    let mut repaired = false;
    loop {
        let mut counts = vec![0usize; k];
        for (c, _) in assigned.iter() {
            counts[*c] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return repaired;
        };
        let mut far = None;
        for (i, (c, d)) in assigned.iter().enumerate() {
            if counts[*c] > 1 && far.is_none_or(|(_, best)| *d > best) {
                far = Some((i, *d));
            }
        }
        let (i, _) = far.expect("a cluster with two or more members exists");
        centers[empty] = points[i].as_ref().to_vec();
        assigned[i] = (empty, 0.0);
        repaired = true;
    }
}

fn update_centers<P: AsRef<[f64]>>(points: &[P], assigned: &[(usize, f64)], k: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, (c, _)) in points.iter().zip(assigned) {
        counts[*c] += 1;
        for (s, x) in sums[*c].iter_mut().zip(p.as_ref()) {
            *s += x;
        }
    }
    for (s, n) in sums.iter_mut().zip(&counts) {
        for x in s.iter_mut() {
            *x /= *n as f64;
        }
    }
    sums
}

fn inertia_of<P: AsRef<[f64]>>(points: &[P], assigned: &[(usize, f64)], centers: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(assigned)
        .map(|(p, (c, _))| sq_dist(p.as_ref(), &centers[*c]))
        .sum()
}

fn lloyd<P: AsRef<[f64]> + Sync>(points: &[P], params: &KMeansParams, run_seed: u64) -> KMeansResult {
    let dim = points[0].as_ref().len();
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
    let mut centers = plus_plus_seeds(points, params.k, &mut rng);
    let mut prev: Option<Vec<usize>> = None;
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut assigned;
    loop {
        assigned = assign(points, &centers);
        let repaired = repair_empty(points, &mut centers, &mut assigned);
        let current: Vec<usize> = assigned.iter().map(|a| a.0).collect();
        if !repaired && prev.as_ref() == Some(&current) {
            break;
        }
        if iterations == params.max_iter {
            break;
        }
        centers = update_centers(points, &assigned, params.k, dim);
        trace.push(inertia_of(points, &assigned, &centers));
        prev = Some(current);
        iterations += 1;
    }
    let inertia = inertia_of(points, &assigned, &centers);
    KMeansResult {
        assignments: assigned.into_iter().map(|a| a.0).collect(),
        centers,
        inertia,
        iterations,
        seed: run_seed,
        inertia_trace: trace,
    }
}

/// Lloyd's algorithm from k-means++ seeds, best of `restarts` runs by
/// inertia. Nearest-centre ties go to the lower centre index.
pub fn kmeans<P: AsRef<[f64]> + Sync>(points: &[P], params: &KMeansParams) -> Result<KMeansResult> {
    if points.is_empty() {
        return Err(CasemixError::invalid("k-means needs at least one point"));
    }
    let dim = points[0].as_ref().len();
    if dim == 0 || points.iter().any(|p| p.as_ref().len() != dim) {
        return Err(CasemixError::invalid("k-means points must share a positive dimension"));
    }
    if points.iter().any(|p| p.as_ref().iter().any(|x| !x.is_finite())) {
        return Err(CasemixError::invalid("k-means points must be finite"));
    }
    if params.k == 0 || params.restarts == 0 {
        return Err(CasemixError::invalid("k-means needs k >= 1 and restarts >= 1"));
    }
    let distinct = distinct_count(points);
    if params.k > distinct {
        return Err(CasemixError::invalid(format!(
            "k = {} exceeds the number of distinct points ({distinct})",
            params.k
        )));
    }
    let mut best: Option<KMeansResult> = None;
    for r in 0..params.restarts {
        let run_seed = mix_key(params.seed, r as u64, tag::KMEANS);
        let res = lloyd(points, params, run_seed);
        if best.as_ref().is_none_or(|b| res.inertia < b.inertia) {
            best = Some(res);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Ranks clusters by ascending mean severity: rank 1 is the cluster with the
/// lowest mean. Equal means go to the lower cluster id first. Returns one
/// label per cluster id.
pub fn rank_clusters(result: &KMeansResult, severity: &[f64]) -> Result<Vec<RankedClassLabel>> {
    if severity.len() != result.assignments.len() {
        return Err(CasemixError::invalid(format!(
            "{} severity values for {} assignments",
            severity.len(),
            result.assignments.len()
        )));
    }
    let k = result.centers.len();
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for (&c, &s) in result.assignments.iter().zip(severity) {
        sums[c] += s;
        counts[c] += 1;
    }
    let means: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &n)| if n == 0 { f64::INFINITY } else { s / n as f64 })
        .collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| means[a].total_cmp(&means[b]).then(a.cmp(&b)));
    let mut ranks = vec![RankedClassLabel::from_index(0); k];
    for (pos, &cluster) in order.iter().enumerate() {
        ranks[cluster] = RankedClassLabel::from_index(pos);
    }
    Ok(ranks)
}

/// Splits one resource factor into `k` ranked classes: log1p transform,
/// 1-D k-means, then ranking by mean log value.
pub fn cluster_factor(values: &[f64], k: usize, seed: u64) -> Result<Vec<RankedClassLabel>> {
    let logged = log1p_factor(values)?;
    cluster_1d(&logged, k, seed)
}

/// 1-D k-means on `values` as given, ranked by cluster mean.
pub fn cluster_1d(values: &[f64], k: usize, seed: u64) -> Result<Vec<RankedClassLabel>> {
    let points: Vec<[f64; 1]> = values.iter().map(|&x| [x]).collect();
    let res = kmeans(&points, &KMeansParams::new(k, seed))?;
    let ranks = rank_clusters(&res, values)?;
    Ok(res.assignments.iter().map(|&c| ranks[c]).collect())
}
