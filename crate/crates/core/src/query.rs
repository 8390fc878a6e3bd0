//! Query execution over a partitioned index.
//!
//! A query runs in every shard. Inside a shard it visits the segments the
//! segmenter allows, asks each for `k'` neighbors, and merges them; the shard
//! lists are then merged into the final top-k. `k'` can be cut below `topK`
//! using a normal-approximation bound on how many of the global top-k one
//! shard is likely to hold.

use std::collections::HashSet;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{invalid, Error, Result};
use crate::exact::scan_topk;
use crate::neighbor::{rank_order, Neighbor, NeighborList};
use crate::partition::{worker_pool, PartitionedIndex};

const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Inverse of the standard normal CDF on `(0, 1)`.
pub fn probit(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(invalid(format!("probit needs p in (0, 1), got {p}")));
    }
    // 1 - p is exact for p >= 0.5, so mirror the upper half onto the lower.
    if p > 0.5 {
        return Ok(-lower_probit(1.0 - p));
    }
    Ok(lower_probit(p))
}

#[allow(clippy::excessive_precision)]
fn lower_probit(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };
    // One Halley step brings the approximation to full double precision.
    let e = 0.5 * libm::erfc(-x / SQRT_2) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (x * x / 2.0).exp();
    x - u / (1.0 + x * u / 2.0)
}

/// How the confidence `p` maps to a normal quantile.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum QuantileMode {
    /// `probit((1 + p) / 2)`: the two-sided interval at confidence `p`.
    #[default]
    TwoSided,
    /// `probit(1 - p / 2)`, taken literally.
    Literal,
}

impl QuantileMode {
    pub fn quantile(self, p: f64) -> Result<f64> {
        match self {
            QuantileMode::TwoSided => probit((1.0 + p) / 2.0),
            QuantileMode::Literal => probit(1.0 - p / 2.0),
        }
    }
}

/// Per-shard candidate count for `top_k` results spread over `shards`.
///
/// With `s' = 1/shards` and `z = mode.quantile(p)`, returns
/// `ceil((s' + z * sqrt(s'(1 - s') / top_k)) * top_k)` clamped to `[1, top_k]`.
pub fn per_shard_top_k(top_k: usize, shards: usize, p: f64, mode: QuantileMode) -> Result<usize> {
    if top_k == 0 || shards == 0 {
        return Err(invalid("topK and shard count must be positive"));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(invalid(format!("confidence must be in (0, 1), got {p}")));
    }
    let s = 1.0 / shards as f64;
    let z = mode.quantile(p)?;
    let k = top_k as f64;
    let c = s + z * (s * (1.0 - s) / k).sqrt();
    let count = (c * k).ceil();
    if count >= k {
        return Ok(top_k);
    }
    Ok((count as usize).max(1))
}

/// Merges ranked lists into one: sorted by `(distance, doc_id)`, one entry
/// per doc id, at most `k` entries.
pub fn merge<'a, I>(lists: I, k: usize) -> NeighborList
where
    I: IntoIterator<Item = &'a NeighborList>,
{
    let mut all: Vec<Neighbor> = lists.into_iter().flat_map(|l| l.iter().copied()).collect();
    all.sort_by(rank_order);
    let mut seen = HashSet::with_capacity(all.len());
    all.retain(|n| seen.insert(n.doc_id));
    all.truncate(k);
    NeighborList::from_sorted(all)
}

/// Search inside a single segment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SegmentSearch {
    #[default]
    Hnsw,
    /// Exact scan of the segment; isolates routing loss from graph loss.
    Exhaustive,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QueryConfig {
    pub top_k: usize,
    pub ef_search: usize,
    /// Shrink the per-shard candidate count below `top_k`.
    pub per_shard_top_k: bool,
    pub confidence: f64,
    pub quantile: QuantileMode,
    pub segment_search: SegmentSearch,
    /// Visit every segment regardless of routing.
    pub route_all_segments: bool,
}

impl Default for QueryConfig {
    fn default() -> Self {
        Self {
            top_k: 10,
            ef_search: 100,
            per_shard_top_k: false,
            confidence: 0.95,
            quantile: QuantileMode::TwoSided,
            segment_search: SegmentSearch::Hnsw,
            route_all_segments: false,
        }
    }
}

impl QueryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(invalid("topK must be positive"));
        }
        if self.ef_search == 0 {
            return Err(invalid("efSearch must be positive"));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(invalid(format!(
                "confidence must be in (0, 1), got {}",
                self.confidence
            )));
        }
        Ok(())
    }

    /// Candidates requested from each shard.
    pub fn shard_k(&self, shards: usize) -> Result<usize> {
        if self.per_shard_top_k {
            per_shard_top_k(self.top_k, shards, self.confidence, self.quantile)
        } else {
            Ok(self.top_k)
        }
    }
}

pub fn query(index: &PartitionedIndex, q: &[f32], config: &QueryConfig) -> Result<NeighborList> {
    config.validate()?;
    if q.len() != index.dim() {
        return Err(Error::DimensionMismatch {
            expected: index.dim(),
            actual: q.len(),
        });
    }
    let distance = index.distance_function();
    distance.validate(q)?;
    let k = config.shard_k(index.num_shards())?;
    let ef = config.ef_search.max(k);
    let segments = if config.route_all_segments {
        (0..index.num_segments()).collect()
    } else {
        index.segments_for_query(q)?
    };

    let mut shard_lists = Vec::with_capacity(index.num_shards());
    for shard in 0..index.num_shards() {
        let mut lists = Vec::with_capacity(segments.len());
        for &seg in &segments {
            let Some(cell) = index.cell(shard, seg) else {
                continue;
            };
            lists.push(match config.segment_search {
                SegmentSearch::Hnsw => cell.search(q, k, ef)?,
                SegmentSearch::Exhaustive => scan_topk(cell.iter(), q, k, distance),
            });
        }
        shard_lists.push(merge(&lists, k));
    }
    Ok(merge(&shard_lists, config.top_k))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TimingReport {
    pub count: usize,
    pub wall_seconds: f64,
    pub qps: f64,
    pub latency_ms_p50: f64,
    pub latency_ms_p99: f64,
}

impl TimingReport {
    /// Nearest-rank percentiles over per-query latencies in milliseconds.
    pub fn from_latencies(latencies_ms: &[f64], wall_seconds: f64) -> Self {
        let mut sorted = latencies_ms.to_vec();
        sorted.sort_by(f64::total_cmp);
        let pct = |p: f64| {
            if sorted.is_empty() {
                return 0.0;
            }
            let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
            sorted[rank.clamp(1, sorted.len()) - 1]
        };
        let count = sorted.len();
        Self {
            count,
            wall_seconds,
            qps: if wall_seconds > 0.0 {
                count as f64 / wall_seconds
            } else {
                0.0
            },
            latency_ms_p50: pct(50.0),
            latency_ms_p99: pct(99.0),
        }
    }
}

#[derive(Debug)]
pub struct BatchResult {
    /// One entry per query row, in input order.
    pub results: Vec<Result<NeighborList>>,
    pub report: TimingReport,
}

/// Runs every query on a pool of `workers` threads. A failing query is
/// reported in its slot and does not stop the batch.
pub fn batch_query(
    index: &PartitionedIndex,
    queries: &Dataset,
    config: &QueryConfig,
    workers: usize,
) -> Result<BatchResult> {
    config.validate()?;
    let pool = worker_pool(workers)?;
    let start = Instant::now();
    let timed: Vec<(Result<NeighborList>, f64)> = pool.install(|| {
        (0..queries.len())
            .into_par_iter()
            .map(|i| {
                let t = Instant::now();
                let r = query(index, queries.vector(i), config);
                (r, t.elapsed().as_secs_f64() * 1e3)
            })
            .collect()
    });
    let wall = start.elapsed().as_secs_f64();
    let latencies: Vec<f64> = timed.iter().map(|(_, l)| *l).collect();
    Ok(BatchResult {
        results: timed.into_iter().map(|(r, _)| r).collect(),
        report: TimingReport::from_latencies(&latencies, wall),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distance::DistanceFunction;
    use crate::exact::exact_topk;
    use crate::hnsw::HnswParams;
    use crate::partition::{BuildConfig, PartitionSpec};
    use crate::segmenter::{learn_rh, SegmenterTree};
    use crate::synthetic::uniform;
    use proptest::prelude::*;

    fn list(pairs: &[(u64, f64)]) -> NeighborList {
        NeighborList::from_unsorted(pairs.iter().map(|&(d, x)| Neighbor::new(d, x)).collect())
    }

    #[test]
    fn probit_matches_reference() {
        assert!((probit(0.975).unwrap() - 1.959963984540054).abs() < 1e-12);
        assert_eq!(probit(0.5).unwrap(), 0.0);
        for &p in &[1e-12, 1e-6, 0.001, 0.02, 0.024, 0.03, 0.2, 0.7, 0.9, 0.99, 0.999999] {
            // statrs: probit(p) = -sqrt(2) * erfc_inv(2p)
            let want = -SQRT_2 * statrs::function::erf::erfc_inv(2.0 * p);
            let got = probit(p).unwrap();
            assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0), "{p}: {got} vs {want}");
        }
        for p in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(probit(p).is_err());
        }
    }

    proptest! {
        #[test]
        fn probit_is_odd_and_monotone(p in 1e-9f64..0.5, d in 1e-6f64..0.1) {
            let a = probit(p).unwrap();
            prop_assert!((a + probit(1.0 - p).unwrap()).abs() < 1e-9);
            let q = (p + d).min(0.999);
            prop_assert!(probit(q).unwrap() > a);
        }

        #[test]
        fn merge_is_sorted_unique_and_bounded(
            a in prop::collection::vec((0u64..30, 0.0f64..10.0), 0..20),
            b in prop::collection::vec((0u64..30, 0.0f64..10.0), 0..20),
            k in 1usize..25,
        ) {
            let m = merge(&[list(&a), list(&b)], k);
            prop_assert!(m.is_valid());
            prop_assert!(m.len() <= k);
        }
    }

    #[test]
    fn per_shard_table() {
        let p = 0.95;
        assert_eq!(per_shard_top_k(100, 1, p, QuantileMode::TwoSided).unwrap(), 100);
        // s' = 0.5: 0.5 + 1.96 * 0.05 = 0.598 -> 60
        assert_eq!(per_shard_top_k(100, 2, p, QuantileMode::TwoSided).unwrap(), 60);
        // s' = 0.05: 0.05 + 1.96 * sqrt(0.0475 / 100) = 0.09272 -> 10
        assert_eq!(per_shard_top_k(100, 20, p, QuantileMode::TwoSided).unwrap(), 10);
        let mut prev = usize::MAX;
        for s in 1..=64 {
            let k = per_shard_top_k(100, s, p, QuantileMode::TwoSided).unwrap();
            assert!((1..=100).contains(&k));
            assert!(k <= prev);
            prev = k;
        }
        assert_eq!(per_shard_top_k(1, 50, p, QuantileMode::TwoSided).unwrap(), 1);
        // Literal mode uses z = probit(0.525).
        let z = probit(0.525).unwrap();
        let want = ((0.5 + z * (0.25f64 / 100.0).sqrt()) * 100.0).ceil() as usize;
        assert_eq!(per_shard_top_k(100, 2, p, QuantileMode::Literal).unwrap(), want);
        assert!(per_shard_top_k(0, 2, p, QuantileMode::TwoSided).is_err());
        assert!(per_shard_top_k(10, 0, p, QuantileMode::TwoSided).is_err());
        assert!(per_shard_top_k(10, 2, 1.0, QuantileMode::TwoSided).is_err());
    }

    #[test]
    fn merge_examples() {
        let a = list(&[(1, 0.5), (2, 1.0)]);
        let b = list(&[(3, 0.7), (1, 0.5)]);
        assert_eq!(merge(&[a.clone(), b.clone()], 2).ids(), vec![1, 3]);
        assert_eq!(merge(&[a.clone(), b], 10).ids(), vec![1, 3, 2]);
        let tied = list(&[(9, 1.0), (4, 1.0)]);
        assert_eq!(merge(&[tied], 1).ids(), vec![4]);
        assert!(merge(&[] as &[NeighborList], 5).is_empty());
        assert!(merge(&[a], 0).is_empty());
    }

    #[test]
    fn merging_exact_partials_is_exact() {
        let ds = uniform(600, 5, 8);
        let qs = uniform(20, 5, 9);
        let rows: Vec<usize> = (0..ds.len()).collect();
        let parts: Vec<Dataset> = rows.chunks(130).map(|c| ds.select(c)).collect();
        for (_, q) in qs.iter() {
            let partials: Vec<NeighborList> = parts
                .iter()
                .map(|p| exact_topk(p, q, 15, DistanceFunction::Euclidean).unwrap())
                .collect();
            let want = exact_topk(&ds, q, 15, DistanceFunction::Euclidean).unwrap();
            assert_eq!(merge(&partials, 15), want);
        }
    }

    fn build(ds: &Dataset, shards: usize, tree: SegmenterTree) -> PartitionedIndex {
        let config = BuildConfig {
            hnsw: HnswParams {
                ef_construction: 60,
                ..HnswParams::with_m(8)
            },
            workers: 1,
            ..BuildConfig::default()
        };
        PartitionedIndex::build(ds, &PartitionSpec::new(shards, tree).unwrap(), &config).unwrap()
    }

    #[test]
    fn random_segments_query_equals_direct_merge() {
        let ds = uniform(1200, 6, 10);
        let index = build(&ds, 1, SegmenterTree::random(8, 2).unwrap());
        let config = QueryConfig {
            top_k: 10,
            ef_search: 40,
            ..QueryConfig::default()
        };
        for (_, q) in uniform(15, 6, 11).iter() {
            let direct: Vec<NeighborList> = index.cells().map(|(_, c)| c.search(q, 10, 40).unwrap()).collect();
            assert_eq!(query(&index, q, &config).unwrap(), merge(&direct, 10));
        }
    }

    #[test]
    fn exhaustive_over_all_segments_is_exact() {
        let ds = uniform(900, 6, 12);
        let tree = learn_rh(&ds, 2, 0.1, 4).unwrap();
        let index = build(&ds, 3, tree);
        let config = QueryConfig {
            top_k: 7,
            segment_search: SegmentSearch::Exhaustive,
            route_all_segments: true,
            ..QueryConfig::default()
        };
        for (_, q) in uniform(10, 6, 13).iter() {
            let want = exact_topk(&ds, q, 7, DistanceFunction::Euclidean).unwrap();
            assert_eq!(query(&index, q, &config).unwrap(), want);
        }
    }

    #[test]
    fn query_errors() {
        let ds = uniform(100, 4, 1);
        let index = build(&ds, 1, SegmenterTree::random(1, 0).unwrap());
        let ok = QueryConfig::default();
        assert!(matches!(
            query(&index, &[0.0; 3], &ok),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(query(&index, &[f32::NAN, 0.0, 0.0, 0.0], &ok).is_err());
        let zero = QueryConfig { top_k: 0, ..ok };
        assert!(query(&index, &[0.0; 4], &zero).is_err());
    }

    #[test]
    fn batch_is_deterministic_and_ordered() {
        let ds = uniform(1500, 6, 14);
        let qs = uniform(40, 6, 15);
        let tree = learn_rh(&ds, 2, 0.15, 1).unwrap();
        let index = build(&ds, 2, tree);
        let config = QueryConfig {
            per_shard_top_k: true,
            ..QueryConfig::default()
        };
        let a = batch_query(&index, &qs, &config, 1).unwrap();
        let b = batch_query(&index, &qs, &config, 3).unwrap();
        assert_eq!(a.report.count, 40);
        for (i, (x, y)) in a.results.iter().zip(&b.results).enumerate() {
            let x = x.as_ref().unwrap();
            assert_eq!(x, y.as_ref().unwrap());
            assert_eq!(x, &query(&index, qs.vector(i), &config).unwrap());
        }
    }

    #[test]
    fn nearest_rank_percentiles() {
        let lat: Vec<f64> = (1..=100).rev().map(f64::from).collect();
        let r = TimingReport::from_latencies(&lat, 2.0);
        assert_eq!((r.latency_ms_p50, r.latency_ms_p99, r.qps), (50.0, 99.0, 50.0));
        let one = TimingReport::from_latencies(&[3.0], 0.0);
        assert_eq!((one.latency_ms_p50, one.latency_ms_p99, one.qps), (3.0, 3.0, 0.0));
    }
}
