use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::svd::second_singular_vector_rows;
use super::{check_alpha, HyperplaneNode, SegmenterKind, SegmenterTree, MAX_LEVELS};
use crate::dataset::Dataset;
use crate::distance::dot;
use crate::error::{invalid, Error, Result};

/// Split point and spill band over ascending projections `p`:
/// `split = p[n/2]`, `lo = p[floor((0.5 - alpha) n)]`,
/// `hi = p[min(n - 1, floor((0.5 + alpha) n))]`.
pub fn fractile_points(sorted: &[f64], alpha: f64) -> (f64, f64, f64) {
    let n = sorted.len();
    assert!(n > 0, "fractiles of an empty sample");
    let rank = |q: f64| ((q * n as f64).floor() as usize).min(n - 1);
    (sorted[n / 2], sorted[rank(0.5 - alpha)], sorted[rank(0.5 + alpha)])
}

/// Learns a random hyperplane tree: every internal node draws a normal with
/// independent standard normal components, then splits at the median
/// projection of its share of the sample.
pub fn learn_rh(sample: &Dataset, levels: u32, alpha: f64, seed: u64) -> Result<SegmenterTree> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = sample.dim();
    let nodes = learn_nodes(sample, levels, alpha, |_| {
        let raw: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok(raw.iter().map(|v| (v / norm) as f32).collect())
    })?;
    SegmenterTree::from_nodes(SegmenterKind::RandomHyperplane, levels, alpha, seed, dim, nodes)
}

/// Learns an approximate principal direction tree: every internal node uses
/// the second right singular vector of its own share of the sample.
pub fn learn_apd(sample: &Dataset, levels: u32, alpha: f64) -> Result<SegmenterTree> {
    let dim = sample.dim();
    let nodes = learn_nodes(sample, levels, alpha, |rows| {
        let h = second_singular_vector_rows(dim, rows.iter().map(|&r| sample.vector(r)))?;
        Ok(h.into_iter().map(|v| v as f32).collect())
    })?;
    SegmenterTree::from_nodes(SegmenterKind::Apd, levels, alpha, 0, dim, nodes)
}

/// Breadth-first construction; `normal_for` receives the rows reaching the
/// node, in level order.
fn learn_nodes<F>(sample: &Dataset, levels: u32, alpha: f64, mut normal_for: F) -> Result<Vec<HyperplaneNode>>
where
    F: FnMut(&[usize]) -> Result<Vec<f32>>,
{
    check_alpha(alpha)?;
    if levels > MAX_LEVELS {
        return Err(invalid(format!("at most {MAX_LEVELS} levels are supported")));
    }
    let required = 2usize << levels;
    if sample.len() < required {
        return Err(Error::SampleTooSmall {
            required,
            actual: sample.len(),
        });
    }
    let mut nodes = Vec::with_capacity((1 << levels) - 1);
    let mut frontier: Vec<Vec<usize>> = vec![(0..sample.len()).collect()];
    for _ in 0..levels {
        let mut next = Vec::with_capacity(frontier.len() * 2);
        for rows in frontier {
            if rows.len() < 2 {
                return Err(Error::SampleTooSmall {
                    required: 2,
                    actual: rows.len(),
                });
            }
            let normal = normal_for(&rows)?;
            let proj: Vec<f64> = rows.iter().map(|&r| dot(&normal, sample.vector(r))).collect();
            let mut sorted = proj.clone();
            sorted.sort_by(f64::total_cmp);
            let (split, lo, hi) = fractile_points(&sorted, alpha);
            let (mut left, mut right) = (Vec::new(), Vec::new());
            for (r, p) in rows.into_iter().zip(proj) {
                if p < split {
                    left.push(r);
                } else {
                    right.push(r);
                }
            }
            next.push(left);
            next.push(right);
            nodes.push(HyperplaneNode { normal, split, lo, hi });
        }
        frontier = next;
    }
    Ok(nodes)
}
