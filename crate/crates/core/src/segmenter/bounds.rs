//! Failure-probability bounds for spill trees.
//!
//! For a query `q` with data sorted by distance `x(1), x(2), ...`, the
//! k-nearest potential at scale `m` is
//! `(1/m) * sum_{i>k} mean_{j<=k} |q - x(j)| / |q - x(i)|`.
//! Summing it over the node sizes `(0.5 + alpha)^i * n` of a depth-`L` tree
//! bounds the probability that the tree misses the true neighbors.

use crate::dataset::Dataset;
use crate::distance::DistanceFunction;
use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundParams {
    /// Neighbors sought.
    pub k: usize,
    /// Spill, strictly inside `(0, 0.5)`.
    pub alpha: f64,
    /// Tree depth.
    pub levels: u32,
}

impl BoundParams {
    fn validate(&self, n: usize) -> Result<()> {
        if self.k == 0 || n <= self.k {
            return Err(invalid(format!("need n > k >= 1, got n = {n}, k = {}", self.k)));
        }
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(invalid(format!("alpha must be in (0, 0.5), got {}", self.alpha)));
        }
        Ok(())
    }
}

fn sorted_distances(query: &[f32], data: &Dataset) -> Result<Vec<f64>> {
    let mut d = data
        .iter()
        .map(|(_, x)| DistanceFunction::Euclidean.distance(query, x))
        .collect::<Result<Vec<_>>>()?;
    d.sort_by(f64::total_cmp);
    Ok(d)
}

fn potential_sorted(dists: &[f64], k: usize, m: f64) -> f64 {
    let mean_near = dists[..k].iter().sum::<f64>() / k as f64;
    if mean_near == 0.0 {
        return 0.0;
    }
    dists[k..].iter().map(|d| mean_near / d).sum::<f64>() / m
}

/// Potential of `query` against `data` for its `k` nearest, at scale `m`.
pub fn potential(query: &[f32], data: &Dataset, k: usize, m: f64) -> Result<f64> {
    if k == 0 || data.len() <= k {
        return Err(invalid(format!("need n > k >= 1, got n = {}, k = {k}", data.len())));
    }
    if !(m > 0.0 && m.is_finite()) {
        return Err(invalid(format!("scale must be positive, got {m}")));
    }
    Ok(potential_sorted(&sorted_distances(query, data)?, k, m))
}

/// Upper bound on the probability that a depth-`levels` tree with spill
/// `alpha` misses the `k` nearest neighbors of `query`. The result can
/// exceed 1, in which case it says nothing.
pub fn failure_bound(query: &[f32], data: &Dataset, params: &BoundParams) -> Result<f64> {
    let n = data.len();
    params.validate(n)?;
    let dists = sorted_distances(query, data)?;
    let shrink = 0.5 + params.alpha;
    let total: f64 = (0..=params.levels)
        .map(|i| potential_sorted(&dists, params.k, shrink.powi(i as i32) * n as f64))
        .sum();
    let factor = if params.k == 1 {
        1.0 / (2.0 * params.alpha)
    } else {
        params.k as f64 / params.alpha
    };
    Ok(factor * total)
}

/// Data-independent approximation `sum_{i=1..L} 1 / (2 (0.5 + alpha)^i n)`.
/// Zero when `levels == 0`.
pub fn failure_bound_estimate(n: usize, alpha: f64, levels: u32) -> f64 {
    (1..=levels)
        .map(|i| 1.0 / (2.0 * (0.5 + alpha).powi(i as i32) * n as f64))
        .sum()
}
