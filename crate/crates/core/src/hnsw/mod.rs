//! Hierarchical navigable small world graph over a single segment.
//!
//! Nodes are stored densely in insertion order. Each node draws a top level
//! from an exponential distribution and is linked into every layer from that
//! level down to 0. Layer 0 therefore holds every node, with up to `m0`
//! links per node; upper layers hold up to `m`.
//!
//! Neighbor selection uses the diversity heuristic (a candidate is kept only
//! if it is closer to the base node than to every neighbor already kept),
//! without candidate extension and with pruned candidates used to top the
//! list back up. All candidate orderings break distance ties by doc id, and
//! insertion is strictly sequential, so a seed plus an insertion order fully
//! determines the graph.

mod format;
mod visited;

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::DocId;
use crate::distance::DistanceFunction;
use crate::error::{invalid, Error, Result};
use crate::neighbor::{Neighbor, NeighborList};

use visited::VisitedSet;

pub(crate) use format::peek_header as format_header;
pub use format::{SEGMENT_MAGIC, SEGMENT_VERSION};

/// Build and search parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct HnswParams {
    /// Max links per node on layers >= 1.
    pub m: usize,
    /// Max links per node on layer 0.
    pub m0: usize,
    pub ef_construction: usize,
    /// Default layer-0 candidate list size for searches.
    pub ef_search: usize,
    /// Level normalization, `1 / ln(m)` by default.
    pub level_mult: f64,
    pub seed: u64,
}

pub const DEFAULT_SEED: u64 = 42;

impl Default for HnswParams {
    fn default() -> Self {
        Self::with_m(16)
    }
}

impl HnswParams {
    /// Defaults derived from `m`: `m0 = 2m`, `level_mult = 1/ln(m)`.
    pub fn with_m(m: usize) -> Self {
        Self {
            m,
            m0: 2 * m,
            ef_construction: 200,
            ef_search: 100,
            level_mult: 1.0 / (m.max(2) as f64).ln(),
            seed: DEFAULT_SEED,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(invalid(format!("m must be at least 2, got {}", self.m)));
        }
        if self.m0 < self.m {
            return Err(invalid(format!("m0 ({}) must be >= m ({})", self.m0, self.m)));
        }
        if self.ef_construction < self.m {
            return Err(invalid(format!(
                "efConstruction ({}) must be >= m ({})",
                self.ef_construction, self.m
            )));
        }
        if self.ef_search == 0 {
            return Err(invalid("efSearch must be positive"));
        }
        if !(self.level_mult.is_finite() && self.level_mult > 0.0) {
            return Err(invalid("level multiplier must be positive and finite"));
        }
        if self.m > u32::MAX as usize
            || self.m0 > u32::MAX as usize
            || self.ef_construction > u32::MAX as usize
            || self.ef_search > u32::MAX as usize
        {
            return Err(invalid("parameters must fit in 32 bits"));
        }
        Ok(())
    }
}

/// `floor(-ln(u) * level_mult)` for `u` in `(0, 1]`.
pub fn level_for_uniform(u: f64, level_mult: f64) -> usize {
    (-u.ln() * level_mult).floor() as usize
}

/// Draws a node level from the exponentially decaying level distribution.
pub fn assign_level<R: Rng + ?Sized>(rng: &mut R, level_mult: f64) -> usize {
    // random::<f64>() is in [0, 1); flip it into (0, 1].
    let u = 1.0 - rng.random::<f64>();
    level_for_uniform(u, level_mult)
}

#[derive(Clone, Copy, Debug)]
struct Candidate {
    dist: f64,
    doc: DocId,
    node: u32,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist.total_cmp(&other.dist).then_with(|| self.doc.cmp(&other.doc))
    }
}

#[derive(Clone, Debug)]
pub struct HnswIndex {
    params: HnswParams,
    distance: DistanceFunction,
    dim: usize,
    doc_ids: Vec<DocId>,
    vectors: Vec<f32>,
    /// `links[node][layer]`, internal node ids.
    links: Vec<Vec<Vec<u32>>>,
    entry_point: Option<u32>,
    max_level: usize,
    lookup: HashMap<DocId, u32>,
    rng: ChaCha8Rng,
    scratch: VisitedSet,
}

impl HnswIndex {
    pub fn new(dim: usize, distance: DistanceFunction, params: HnswParams) -> Result<Self> {
        params.validate()?;
        if dim == 0 || dim > u32::MAX as usize {
            return Err(invalid(format!("invalid dimension {dim}")));
        }
        Ok(Self {
            params,
            distance,
            dim,
            doc_ids: Vec::new(),
            vectors: Vec::new(),
            links: Vec::new(),
            entry_point: None,
            max_level: 0,
            lookup: HashMap::new(),
            rng: ChaCha8Rng::seed_from_u64(params.seed),
            scratch: VisitedSet::default(),
        })
    }

    /// Builds an index by inserting `docs` in order.
    pub fn build<'a, I>(dim: usize, distance: DistanceFunction, params: HnswParams, docs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (DocId, &'a [f32])>,
    {
        let mut index = Self::new(dim, distance, params)?;
        for (id, v) in docs {
            index.insert(id, v)?;
        }
        Ok(index)
    }

    pub fn params(&self) -> &HnswParams {
        &self.params
    }

    pub fn distance_function(&self) -> DistanceFunction {
        self.distance
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn contains(&self, doc: DocId) -> bool {
        self.lookup.contains_key(&doc)
    }

    pub fn entry_point(&self) -> Option<DocId> {
        self.entry_point.map(|n| self.doc_ids[n as usize])
    }

    pub fn max_level(&self) -> usize {
        self.max_level
    }

    /// Top layer of `doc`, if indexed.
    pub fn level_of(&self, doc: DocId) -> Option<usize> {
        self.lookup.get(&doc).map(|&n| self.links[n as usize].len() - 1)
    }

    /// Doc ids linked from `doc` on `layer`.
    pub fn neighbors(&self, doc: DocId, layer: usize) -> Option<Vec<DocId>> {
        let node = *self.lookup.get(&doc)?;
        let layers = &self.links[node as usize];
        layers
            .get(layer)
            .map(|l| l.iter().map(|&n| self.doc_ids[n as usize]).collect())
    }

    /// Indexed documents in insertion order.
    pub fn iter(&self) -> impl ExactSizeIterator<Item = (DocId, &[f32])> + '_ {
        self.doc_ids.iter().copied().zip(self.vectors.chunks_exact(self.dim))
    }

    #[inline]
    fn vector(&self, node: u32) -> &[f32] {
        let i = node as usize * self.dim;
        &self.vectors[i..i + self.dim]
    }

    #[inline]
    fn candidate(&self, query: &[f32], node: u32) -> Candidate {
        Candidate {
            dist: self.distance.eval(query, self.vector(node)),
            doc: self.doc_ids[node as usize],
            node,
        }
    }

    fn check_vector(&self, v: &[f32]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: v.len(),
            });
        }
        self.distance.validate(v)
    }

    pub fn insert(&mut self, doc: DocId, vector: &[f32]) -> Result<()> {
        self.check_vector(vector)?;
        if self.lookup.contains_key(&doc) {
            return Err(Error::DuplicateDocId(doc));
        }
        if self.doc_ids.len() >= u32::MAX as usize {
            return Err(invalid("segment is full"));
        }
        let level = assign_level(&mut self.rng, self.params.level_mult);
        let node = self.doc_ids.len() as u32;
        self.doc_ids.push(doc);
        self.vectors.extend_from_slice(vector);
        self.links.push(vec![Vec::new(); level + 1]);
        self.lookup.insert(doc, node);

        let Some(entry) = self.entry_point else {
            self.entry_point = Some(node);
            self.max_level = level;
            return Ok(());
        };

        let mut visited = std::mem::take(&mut self.scratch);
        visited.reset(self.doc_ids.len());

        let mut eps = vec![self.candidate(vector, entry)];
        for layer in (level + 1..=self.max_level).rev() {
            eps = self.search_layer(vector, &eps, 1, layer, &mut visited);
        }
        for layer in (0..=level.min(self.max_level)).rev() {
            let found = self.search_layer(vector, &eps, self.params.ef_construction, layer, &mut visited);
            let chosen = self.select_neighbors(&found, self.params.m);
            let cap = self.max_degree(layer);
            self.links[node as usize][layer] = chosen.iter().map(|c| c.node).collect();
            for c in &chosen {
                self.links[c.node as usize][layer].push(node);
                if self.links[c.node as usize][layer].len() > cap {
                    self.prune(c.node, layer, cap);
                }
            }
            eps = found;
        }
        self.scratch = visited;

        if level > self.max_level {
            self.max_level = level;
            self.entry_point = Some(node);
        }
        Ok(())
    }

    fn max_degree(&self, layer: usize) -> usize {
        if layer == 0 {
            self.params.m0
        } else {
            self.params.m
        }
    }

    /// Shrinks the link list of `node` on `layer` back to `cap` entries.
    fn prune(&mut self, node: u32, layer: usize, cap: usize) {
        let base = self.vector(node);
        let mut cands: Vec<Candidate> = self.links[node as usize][layer]
            .iter()
            .map(|&n| self.candidate(base, n))
            .collect();
        cands.sort();
        let kept = self.select_neighbors(&cands, cap);
        self.links[node as usize][layer] = kept.iter().map(|c| c.node).collect();
    }

    /// Diversity heuristic over `candidates` (ascending by distance to the
    /// base node), topped up from the pruned ones.
    fn select_neighbors(&self, candidates: &[Candidate], m: usize) -> Vec<Candidate> {
        if candidates.len() <= m {
            return candidates.to_vec();
        }
        let mut selected: Vec<Candidate> = Vec::with_capacity(m);
        let mut pruned = Vec::new();
        for &c in candidates {
            if selected.len() >= m {
                break;
            }
            let cv = self.vector(c.node);
            let diverse = selected
                .iter()
                .all(|s| self.distance.eval(cv, self.vector(s.node)) >= c.dist);
            if diverse {
                selected.push(c);
            } else {
                pruned.push(c);
            }
        }
        for c in pruned {
            if selected.len() >= m {
                break;
            }
            selected.push(c);
        }
        selected
    }

    /// Best-first expansion on one layer; returns up to `ef` nodes ascending.
    fn search_layer(
        &self,
        query: &[f32],
        entry_points: &[Candidate],
        ef: usize,
        layer: usize,
        visited: &mut VisitedSet,
    ) -> Vec<Candidate> {
        visited.reset(self.doc_ids.len());
        let mut frontier: BinaryHeap<Reverse<Candidate>> = BinaryHeap::new();
        let mut best: BinaryHeap<Candidate> = BinaryHeap::new();
        for &ep in entry_points {
            if visited.insert(ep.node) {
                frontier.push(Reverse(ep));
                best.push(ep);
                if best.len() > ef {
                    best.pop();
                }
            }
        }
        while let Some(Reverse(current)) = frontier.pop() {
            if let Some(worst) = best.peek() {
                if best.len() >= ef && current > *worst {
                    break;
                }
            }
            for &next in &self.links[current.node as usize][layer] {
                if !visited.insert(next) {
                    continue;
                }
                let cand = self.candidate(query, next);
                if best.len() < ef || cand < *best.peek().expect("non-empty") {
                    frontier.push(Reverse(cand));
                    best.push(cand);
                    if best.len() > ef {
                        best.pop();
                    }
                }
            }
        }
        best.into_sorted_vec()
    }

    /// Returns up to `n` approximate nearest neighbors of `query`, using a
    /// layer-0 candidate list of size `ef`.
    pub fn search(&self, query: &[f32], n: usize, ef: usize) -> Result<NeighborList> {
        if n == 0 {
            return Err(invalid("number of neighbors must be positive"));
        }
        if ef < n {
            return Err(invalid(format!("ef ({ef}) must be >= n ({n})")));
        }
        self.check_vector(query)?;
        let Some(entry) = self.entry_point else {
            return Ok(NeighborList::new());
        };
        let mut visited = VisitedSet::with_capacity(self.doc_ids.len());
        let mut eps = vec![self.candidate(query, entry)];
        for layer in (1..=self.max_level).rev() {
            eps = self.search_layer(query, &eps, 1, layer, &mut visited);
        }
        let found = self.search_layer(query, &eps, ef, 0, &mut visited);
        Ok(NeighborList::from_sorted(
            found
                .into_iter()
                .take(n)
                .map(|c| Neighbor::new(c.doc, c.dist))
                .collect(),
        ))
    }

    /// Walks every layer and checks the structural invariants: levels match
    /// link layers, degrees respect `m`/`m0`, no self or duplicate links,
    /// links only reach nodes present on that layer, and the entry point
    /// sits on the top layer.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let n = self.doc_ids.len();
        if self.vectors.len() != n * self.dim || self.links.len() != n || self.lookup.len() != n {
            return Err("storage lengths disagree".into());
        }
        match self.entry_point {
            None if n > 0 => return Err("non-empty index without entry point".into()),
            Some(ep) if self.links[ep as usize].len() != self.max_level + 1 => {
                return Err("entry point is not on the top layer".into());
            }
            Some(_) => {}
            None => {}
        }
        for (node, layers) in self.links.iter().enumerate() {
            if layers.is_empty() || layers.len() > self.max_level + 1 {
                return Err(format!("node {node} has {} layers", layers.len()));
            }
            for (layer, adj) in layers.iter().enumerate() {
                if adj.len() > self.max_degree(layer) {
                    return Err(format!("node {node} layer {layer} degree {}", adj.len()));
                }
                let mut seen = std::collections::HashSet::new();
                for &nb in adj {
                    if nb as usize == node {
                        return Err(format!("self link at node {node}"));
                    }
                    if nb as usize >= n {
                        return Err(format!("dangling link {nb} at node {node}"));
                    }
                    if self.links[nb as usize].len() <= layer {
                        return Err(format!("link {node}->{nb} on layer {layer} above target level"));
                    }
                    if !seen.insert(nb) {
                        return Err(format!("duplicate link {node}->{nb}"));
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Dataset;
    use crate::exact::exact_topk;
    use crate::neighbor::recall_at_k;
    use crate::synthetic::uniform;

    fn small_params() -> HnswParams {
        HnswParams {
            ef_construction: 64,
            ..HnswParams::with_m(8)
        }
    }

    #[test]
    fn level_formula() {
        let ml = 1.0 / 16f64.ln();
        assert_eq!(level_for_uniform(1.0, ml), 0);
        assert_eq!(level_for_uniform((-2.0 / ml).exp(), ml), 2);
    }

    #[test]
    fn level_distribution_matches_closed_form() {
        let ml = 1.0 / 16f64.ln();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 1_000_000;
        let above = (0..draws).filter(|_| assign_level(&mut rng, ml) >= 1).count();
        let observed = above as f64 / draws as f64;
        let expected = (-1.0 / ml).exp();
        assert!((observed - expected).abs() <= 0.005, "{observed} vs {expected}");
    }

    #[test]
    fn params_validation() {
        assert!(HnswParams::default().validate().is_ok());
        assert!(HnswParams {
            m: 1,
            ..HnswParams::default()
        }
        .validate()
        .is_err());
        assert!(HnswParams {
            m0: 8,
            ..HnswParams::default()
        }
        .validate()
        .is_err());
        assert!(HnswParams {
            ef_construction: 4,
            ..HnswParams::default()
        }
        .validate()
        .is_err());
        assert!(HnswParams {
            ef_search: 0,
            ..HnswParams::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn first_insert_becomes_entry_point() {
        let mut index = HnswIndex::new(2, DistanceFunction::Euclidean, HnswParams::default()).unwrap();
        index.insert(10, &[1.0, 1.0]).unwrap();
        assert_eq!(index.entry_point(), Some(10));
        let level = index.level_of(10).unwrap();
        assert_eq!(index.max_level(), level);
        for layer in 0..=level {
            assert_eq!(index.neighbors(10, layer).unwrap(), Vec::<u64>::new());
        }
        index.check_invariants().unwrap();
    }

    #[test]
    fn two_points_are_linked() {
        let mut index = HnswIndex::new(2, DistanceFunction::Euclidean, HnswParams::default()).unwrap();
        index.insert(1, &[0.0, 0.0]).unwrap();
        index.insert(2, &[1.0, 0.0]).unwrap();
        assert_eq!(index.neighbors(1, 0).unwrap(), vec![2]);
        assert_eq!(index.neighbors(2, 0).unwrap(), vec![1]);
    }

    #[test]
    fn insert_errors() {
        let mut index = HnswIndex::new(2, DistanceFunction::Cosine, HnswParams::default()).unwrap();
        index.insert(1, &[0.5, 0.5]).unwrap();
        assert!(matches!(index.insert(1, &[1.0, 0.0]), Err(Error::DuplicateDocId(1))));
        assert!(matches!(index.insert(2, &[1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(index.insert(3, &[0.0, 0.0]), Err(Error::ZeroNorm)));
        assert_eq!(index.len(), 1);
    }

    #[test]
    fn search_edge_cases() {
        let mut index = HnswIndex::new(2, DistanceFunction::Euclidean, HnswParams::default()).unwrap();
        assert!(index.search(&[0.0, 0.0], 3, 10).unwrap().is_empty());
        index.insert(4, &[3.0, 4.0]).unwrap();
        let r = index.search(&[0.0, 0.0], 3, 10).unwrap();
        assert_eq!(r.as_slice(), &[Neighbor::new(4, 5.0)]);
        assert!(index.search(&[0.0, 0.0], 5, 4).is_err());
        assert!(index.search(&[0.0, 0.0], 0, 4).is_err());
        assert!(index.search(&[0.0], 1, 4).is_err());
    }

    #[test]
    fn five_point_exhaustive_search() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [5.0, 5.0], [2.0, 3.0]];
        let ds = Dataset::from_rows(2, pts).unwrap();
        let index = HnswIndex::build(2, DistanceFunction::Euclidean, HnswParams::default(), ds.iter()).unwrap();
        for (i, p) in pts.iter().enumerate() {
            let got = index.search(p, 5, 5).unwrap();
            let want = exact_topk(&ds, p, 5, DistanceFunction::Euclidean).unwrap();
            assert_eq!(got.as_slice()[0], Neighbor::new(i as u64, 0.0));
            assert_eq!(got, want);
        }
    }

    #[test]
    fn invariants_hold_during_build() {
        let ds = uniform(600, 8, 5);
        let mut index = HnswIndex::new(8, DistanceFunction::Euclidean, small_params()).unwrap();
        for (i, (id, v)) in ds.iter().enumerate() {
            index.insert(id, v).unwrap();
            if i % 50 == 0 {
                index.check_invariants().unwrap();
            }
        }
        index.check_invariants().unwrap();
    }

    #[test]
    fn layer_zero_is_reachable_from_entry() {
        let ds = uniform(1000, 16, 9);
        let index = HnswIndex::build(16, DistanceFunction::Euclidean, HnswParams::default(), ds.iter()).unwrap();
        let start = index.entry_point.unwrap();
        let mut seen = vec![false; index.len()];
        let mut queue = std::collections::VecDeque::from([start]);
        seen[start as usize] = true;
        while let Some(n) = queue.pop_front() {
            for &nb in &index.links[n as usize][0] {
                if !seen[nb as usize] {
                    seen[nb as usize] = true;
                    queue.push_back(nb);
                }
            }
        }
        let reached = seen.iter().filter(|&&s| s).count();
        assert!(reached as f64 >= 0.99 * index.len() as f64, "reached {reached}");
    }

    #[test]
    fn recall_at_ten_on_random_data() {
        let ds = uniform(10_000, 32, 21);
        let queries = uniform(100, 32, 22);
        let index = HnswIndex::build(32, DistanceFunction::Euclidean, HnswParams::default(), ds.iter()).unwrap();
        let mut total = 0.0;
        for (_, q) in queries.iter() {
            let got = index.search(q, 10, 100).unwrap();
            assert!(got.is_valid() && got.len() == 10);
            let truth = exact_topk(&ds, q, 10, DistanceFunction::Euclidean).unwrap();
            total += recall_at_k(&got, &truth, 10).unwrap();
        }
        let recall = total / queries.len() as f64;
        assert!(recall >= 0.95, "recall@10 = {recall}");
    }

    #[test]
    fn recall_does_not_drop_with_larger_ef() {
        let ds = uniform(3000, 24, 31);
        let queries = uniform(120, 24, 32);
        let index = HnswIndex::build(24, DistanceFunction::Euclidean, small_params(), ds.iter()).unwrap();
        let truths: Vec<_> = queries
            .iter()
            .map(|(_, q)| exact_topk(&ds, q, 10, DistanceFunction::Euclidean).unwrap())
            .collect();
        let mean_recall = |ef: usize| {
            queries
                .iter()
                .zip(&truths)
                .map(|((_, q), t)| recall_at_k(&index.search(q, 10, ef).unwrap(), t, 10).unwrap())
                .sum::<f64>()
                / truths.len() as f64
        };
        let recalls: Vec<f64> = [10, 20, 40, 80, 160].into_iter().map(mean_recall).collect();
        for w in recalls.windows(2) {
            assert!(w[1] >= w[0], "{recalls:?}");
        }
    }

    #[test]
    fn build_is_deterministic() {
        let ds = uniform(500, 8, 41);
        let a = HnswIndex::build(8, DistanceFunction::Euclidean, small_params(), ds.iter()).unwrap();
        let b = HnswIndex::build(8, DistanceFunction::Euclidean, small_params(), ds.iter()).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
    }
}
