//! Exhaustive k-NN, serial and chunked.

use std::collections::BinaryHeap;

use rayon::prelude::*;

use crate::dataset::{Dataset, DocId};
use crate::distance::DistanceFunction;
use crate::error::{invalid, Result};
use crate::neighbor::{rank_order, Neighbor, NeighborList};
use crate::query::merge;

struct Ranked(Neighbor);

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        rank_order(&self.0, &other.0).is_eq()
    }
}
impl Eq for Ranked {}
impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        rank_order(&self.0, &other.0)
    }
}

/// Top-k scan over arbitrary `(id, vector)` pairs; vectors are assumed to
/// match the query length.
pub(crate) fn scan_topk<'a, I>(docs: I, query: &[f32], k: usize, distance: DistanceFunction) -> NeighborList
where
    I: IntoIterator<Item = (DocId, &'a [f32])>,
{
    let mut heap: BinaryHeap<Ranked> = BinaryHeap::with_capacity(k + 1);
    for (id, v) in docs {
        let n = Neighbor::new(id, distance.eval(query, v));
        if heap.len() < k {
            heap.push(Ranked(n));
        } else if let Some(worst) = heap.peek() {
            if rank_order(&n, &worst.0).is_lt() {
                heap.pop();
                heap.push(Ranked(n));
            }
        }
    }
    NeighborList::from_sorted(heap.into_sorted_vec().into_iter().map(|r| r.0).collect())
}

/// The true `k` nearest documents of `query`, in rank order.
pub fn exact_topk(dataset: &Dataset, query: &[f32], k: usize, distance: DistanceFunction) -> Result<NeighborList> {
    if k == 0 {
        return Err(invalid("k must be positive"));
    }
    dataset.check_dim(query)?;
    distance.validate(query)?;
    if distance == DistanceFunction::Cosine {
        for (_, v) in dataset.iter() {
            distance.validate(v)?;
        }
    }
    Ok(scan_topk(dataset.iter(), query, k, distance))
}

/// Splits `dataset` into `partitions` contiguous chunks, scans every chunk
/// against all queries on up to `workers` threads, then merges the partial
/// lists per query. Results equal [`exact_topk`] for every query.
pub fn partitioned_exact(
    dataset: &Dataset,
    queries: &Dataset,
    k: usize,
    distance: DistanceFunction,
    partitions: usize,
    workers: usize,
) -> Result<Vec<NeighborList>> {
    if partitions == 0 {
        return Err(invalid("partition count must be positive"));
    }
    if workers == 0 {
        return Err(invalid("worker count must be positive"));
    }
    if k == 0 {
        return Err(invalid("k must be positive"));
    }
    if queries.dim() != dataset.dim() {
        return Err(crate::Error::DimensionMismatch {
            expected: dataset.dim(),
            actual: queries.dim(),
        });
    }
    for (_, q) in queries.iter() {
        distance.validate(q)?;
    }
    if distance == DistanceFunction::Cosine {
        for (_, v) in dataset.iter() {
            distance.validate(v)?;
        }
    }
    let n = dataset.len();
    let bounds: Vec<(usize, usize)> = (0..partitions)
        .map(|p| (p * n / partitions, (p + 1) * n / partitions))
        .filter(|(lo, hi)| lo < hi)
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| invalid(format!("cannot start worker pool: {e}")))?;
    let partials: Vec<Vec<NeighborList>> = pool.install(|| {
        bounds
            .par_iter()
            .map(|&(lo, hi)| {
                queries
                    .iter()
                    .map(|(_, q)| scan_topk((lo..hi).map(|r| (dataset.id(r), dataset.vector(r))), q, k, distance))
                    .collect()
            })
            .collect()
    });
    Ok((0..queries.len())
        .map(|qi| merge(partials.iter().map(|p| &p[qi]), k))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::uniform;

    #[test]
    fn hand_example() {
        let ds = Dataset::from_rows(2, [[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]]).unwrap();
        let r = exact_topk(&ds, &[0.0, 0.0], 2, DistanceFunction::Euclidean).unwrap();
        assert_eq!(r.as_slice(), &[Neighbor::new(0, 0.0), Neighbor::new(1, 1.0)]);
    }

    #[test]
    fn k_above_n_ranks_everything() {
        let ds = uniform(30, 3, 4);
        let q = [0.5, 0.5, 0.5];
        let r = exact_topk(&ds, &q, 100, DistanceFunction::Euclidean).unwrap();
        assert_eq!(r.len(), 30);
        assert!(r.is_valid());
        // Prefix of the full ranking.
        let mut all: Vec<Neighbor> = ds
            .iter()
            .map(|(id, v)| Neighbor::new(id, DistanceFunction::Euclidean.distance(&q, v).unwrap()))
            .collect();
        all.sort_by(rank_order);
        assert_eq!(r.as_slice(), all.as_slice());
    }

    #[test]
    fn ties_break_by_id() {
        let ds = Dataset::from_rows(1, [[1.0], [-1.0], [1.0]]).unwrap();
        let r = exact_topk(&ds, &[0.0], 3, DistanceFunction::Euclidean).unwrap();
        assert_eq!(r.ids(), vec![0, 1, 2]);
    }

    #[test]
    fn errors() {
        let ds = uniform(10, 3, 1);
        assert!(exact_topk(&ds, &[0.0, 1.0], 2, DistanceFunction::Euclidean).is_err());
        assert!(exact_topk(&ds, &[0.0, 1.0, 2.0], 0, DistanceFunction::Euclidean).is_err());
        assert!(partitioned_exact(&ds, &ds, 2, DistanceFunction::Euclidean, 0, 1).is_err());
    }

    #[test]
    fn partitioned_matches_serial_for_small_inputs() {
        let ds = uniform(40, 4, 8);
        let qs = uniform(5, 4, 9);
        let serial: Vec<_> = qs
            .iter()
            .map(|(_, q)| exact_topk(&ds, q, 7, DistanceFunction::Euclidean).unwrap())
            .collect();
        for p in [1, 2, 3, 40, 100] {
            let got = partitioned_exact(&ds, &qs, 7, DistanceFunction::Euclidean, p, 3).unwrap();
            assert_eq!(got, serial, "P = {p}");
        }
    }
}
