use std::cmp::Ordering;
use std::collections::HashSet;

use crate::dataset::DocId;
use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub doc_id: DocId,
    pub distance: f64,
}

impl Neighbor {
    pub fn new(doc_id: DocId, distance: f64) -> Self {
        Self { doc_id, distance }
    }
}

/// The global result order: ascending distance, then ascending doc id.
#[inline]
pub fn rank_order(a: &Neighbor, b: &Neighbor) -> Ordering {
    a.distance.total_cmp(&b.distance).then_with(|| a.doc_id.cmp(&b.doc_id))
}

/// Result list sorted by `(distance, doc_id)` with unique doc ids.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NeighborList(Vec<Neighbor>);

impl NeighborList {
    pub fn new() -> Self {
        Self(Vec::new())
    }

    /// Sorts and removes duplicate ids, keeping each id's smallest distance.
    pub fn from_unsorted(mut entries: Vec<Neighbor>) -> Self {
        entries.sort_by(rank_order);
        let mut seen = HashSet::with_capacity(entries.len());
        entries.retain(|n| seen.insert(n.doc_id));
        Self(entries)
    }

    /// Wraps entries the caller already holds in rank order with unique ids.
    pub(crate) fn from_sorted(entries: Vec<Neighbor>) -> Self {
        debug_assert!(entries.windows(2).all(|w| rank_order(&w[0], &w[1]) == Ordering::Less));
        Self(entries)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[Neighbor] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Neighbor> {
        self.0.iter()
    }

    pub fn ids(&self) -> Vec<DocId> {
        self.0.iter().map(|n| n.doc_id).collect()
    }

    pub fn truncate(&mut self, k: usize) {
        self.0.truncate(k);
    }

    pub fn into_vec(self) -> Vec<Neighbor> {
        self.0
    }

    /// Whether the list satisfies its ordering and uniqueness invariants.
    pub fn is_valid(&self) -> bool {
        let sorted = self.0.windows(2).all(|w| rank_order(&w[0], &w[1]) == Ordering::Less);
        let mut seen = HashSet::new();
        sorted && self.0.iter().all(|n| seen.insert(n.doc_id))
    }
}

impl<'a> IntoIterator for &'a NeighborList {
    type Item = &'a Neighbor;
    type IntoIter = std::slice::Iter<'a, Neighbor>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// Fraction of the first `k` truth ids found among the first `k` returned.
pub fn recall_at_k(returned: &NeighborList, truth: &NeighborList, k: usize) -> Result<f64> {
    recall_at_k_ids(&returned.ids(), &truth.ids(), k)
}

/// [`recall_at_k`] over bare id lists, as read from result files.
pub fn recall_at_k_ids(returned: &[DocId], truth: &[DocId], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(invalid("k must be positive"));
    }
    if truth.len() < k {
        return Err(Error::TruthTooShort {
            k,
            available: truth.len(),
        });
    }
    let wanted: HashSet<DocId> = truth[..k].iter().copied().collect();
    let found: HashSet<DocId> = returned
        .iter()
        .take(k)
        .copied()
        .filter(|id| wanted.contains(id))
        .collect();
    Ok(found.len() as f64 / k as f64)
}
