//! Two-level `(shard, segment)` partitioning and its on-disk layout.
//!
//! A document's shard is the FNV-1a hash of its key modulo the shard count;
//! its segment comes from the shared segmenter. Every non-empty cell gets its
//! own HNSW graph, and cells build independently on a bounded worker pool.
//!
//! On disk an index is a directory holding `manifest.json` plus one segment
//! file per non-empty cell.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, DocId};
use crate::distance::DistanceFunction;
use crate::error::{invalid, malformed, Error, Result};
use crate::hash::fnv1a_64;
use crate::hnsw::{HnswIndex, HnswParams};
use crate::segmenter::{SegmenterKind, SegmenterTree};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

/// Shard of a document key: `fnv1a_64(key) mod shards`.
pub fn shard_of(key: &[u8], shards: usize) -> usize {
    assert!(shards >= 1, "shard count must be positive");
    (fnv1a_64(key) % shards as u64) as usize
}

/// Default sharding key: the decimal form of the doc id.
pub fn doc_key(id: DocId) -> String {
    id.to_string()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpillMode {
    /// Documents live in one segment; queries near a split visit both sides.
    #[default]
    Virtual,
    /// Documents near a split are copied to both sides; queries take one path.
    Physical,
}

/// Shard count plus the segmenter every shard shares.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionSpec {
    num_shards: usize,
    segmenter: Arc<SegmenterTree>,
}

impl PartitionSpec {
    pub fn new(num_shards: usize, segmenter: SegmenterTree) -> Result<Self> {
        if num_shards == 0 {
            return Err(invalid("shard count must be positive"));
        }
        Ok(Self {
            num_shards,
            segmenter: Arc::new(segmenter),
        })
    }

    pub fn num_shards(&self) -> usize {
        self.num_shards
    }

    pub fn segmenter(&self) -> &SegmenterTree {
        &self.segmenter
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BuildConfig {
    pub hnsw: HnswParams,
    pub distance: DistanceFunction,
    /// Segment builds allowed to run at once.
    pub workers: usize,
    pub spill: SpillMode,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            hnsw: HnswParams::default(),
            distance: DistanceFunction::Euclidean,
            workers: 1,
            spill: SpillMode::Virtual,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PartitionedIndex {
    spec: PartitionSpec,
    hnsw: HnswParams,
    distance: DistanceFunction,
    dim: usize,
    doc_count: usize,
    spill: SpillMode,
    cells: BTreeMap<(usize, usize), HnswIndex>,
}

pub(crate) fn worker_pool(workers: usize) -> Result<rayon::ThreadPool> {
    if workers == 0 {
        return Err(invalid("worker count must be positive"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| invalid(format!("cannot start worker pool: {e}")))
}

impl PartitionedIndex {
    /// Builds with the decimal doc id as every document's shard key.
    pub fn build(dataset: &Dataset, spec: &PartitionSpec, config: &BuildConfig) -> Result<Self> {
        let keys: Vec<String> = dataset.ids().iter().map(|&id| doc_key(id)).collect();
        Self::build_with_keys(dataset, &keys, spec, config)
    }

    /// Builds with explicit shard keys, one per dataset row.
    pub fn build_with_keys<K: AsRef<[u8]>>(
        dataset: &Dataset,
        keys: &[K],
        spec: &PartitionSpec,
        config: &BuildConfig,
    ) -> Result<Self> {
        config.hnsw.validate()?;
        if keys.len() != dataset.len() {
            return Err(invalid(format!("{} keys for {} documents", keys.len(), dataset.len())));
        }
        if let Some(d) = spec.segmenter().dim() {
            if d != dataset.dim() {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: dataset.dim(),
                });
            }
        }
        let pool = worker_pool(config.workers)?;
        let segmenter = spec.segmenter();

        let mut cells: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (row, ((_, v), key)) in dataset.iter().zip(keys).enumerate() {
            let key = key.as_ref();
            let shard = shard_of(key, spec.num_shards());
            match config.spill {
                SpillMode::Virtual => {
                    let seg = segmenter.route_document(v, key)?;
                    cells.entry((shard, seg)).or_default().push(row);
                }
                SpillMode::Physical => {
                    for seg in segmenter.route_document_spilled(v, key)? {
                        cells.entry((shard, seg)).or_default().push(row);
                    }
                }
            }
        }

        let jobs: Vec<((usize, usize), Vec<usize>)> = cells.into_iter().collect();
        let built: Vec<((usize, usize), HnswIndex)> = pool.install(|| {
            jobs.into_par_iter()
                .map(|(cell, rows)| {
                    let docs = rows.iter().map(|&r| (dataset.id(r), dataset.vector(r)));
                    HnswIndex::build(dataset.dim(), config.distance, config.hnsw, docs).map(|ix| (cell, ix))
                })
                .collect::<Result<_>>()
        })?;

        Ok(Self {
            spec: spec.clone(),
            hnsw: config.hnsw,
            distance: config.distance,
            dim: dataset.dim(),
            doc_count: dataset.len(),
            spill: config.spill,
            cells: built.into_iter().collect(),
        })
    }

    pub fn spec(&self) -> &PartitionSpec {
        &self.spec
    }

    pub fn segmenter(&self) -> &SegmenterTree {
        self.spec.segmenter()
    }

    pub fn num_shards(&self) -> usize {
        self.spec.num_shards
    }

    pub fn num_segments(&self) -> usize {
        self.spec.segmenter.num_segments()
    }

    pub fn hnsw_params(&self) -> &HnswParams {
        &self.hnsw
    }

    pub fn distance_function(&self) -> DistanceFunction {
        self.distance
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Distinct documents indexed.
    pub fn doc_count(&self) -> usize {
        self.doc_count
    }

    pub fn spill_mode(&self) -> SpillMode {
        self.spill
    }

    pub fn cell(&self, shard: usize, segment: usize) -> Option<&HnswIndex> {
        self.cells.get(&(shard, segment))
    }

    /// Non-empty cells in `(shard, segment)` order.
    pub fn cells(&self) -> impl Iterator<Item = ((usize, usize), &HnswIndex)> {
        self.cells.iter().map(|(&k, v)| (k, v))
    }

    /// Sum of cell sizes, counting spilled copies.
    pub fn total_entries(&self) -> usize {
        self.cells.values().map(HnswIndex::len).sum()
    }

    /// Segments a query visits in every shard.
    pub fn segments_for_query(&self, q: &[f32]) -> Result<Vec<usize>> {
        let segmenter = self.segmenter();
        match (self.spill, segmenter.kind()) {
            (SpillMode::Physical, SegmenterKind::RandomHyperplane | SegmenterKind::Apd) => {
                Ok(vec![segmenter.route_document(q, &[])?])
            }
            _ => segmenter.route_query(q),
        }
    }

    fn segment_file_name(shard: usize, segment: usize) -> String {
        format!("shard-{shard:04}-segment-{segment:04}.lann")
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut segments = Vec::with_capacity(self.cells.len());
        for (&(shard, segment), index) in &self.cells {
            let file = Self::segment_file_name(shard, segment);
            fs::write(dir.join(&file), index.to_bytes())?;
            segments.push(SegmentEntry {
                shard,
                segment,
                file,
                count: index.len(),
            });
        }
        let manifest = Manifest {
            version: MANIFEST_VERSION,
            num_shards: self.num_shards(),
            segmenter: self.segmenter().clone(),
            hnsw_params: self.hnsw,
            distance_kind: self.distance,
            dim: self.dim,
            doc_count: self.doc_count,
            spill_mode: self.spill,
            segments,
        };
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let raw = fs::read_to_string(dir.join(MANIFEST_FILE))?;
        let m: Manifest = serde_json::from_str(&raw).map_err(|e| malformed(format!("bad manifest: {e}")))?;
        if m.version != MANIFEST_VERSION {
            return Err(malformed(format!("unsupported manifest version {}", m.version)));
        }
        if m.num_shards == 0 || m.dim == 0 {
            return Err(malformed("manifest needs positive shard count and dimension"));
        }
        m.hnsw_params
            .validate()
            .map_err(|e| malformed(format!("bad manifest parameters: {e}")))?;
        if let Some(d) = m.segmenter.dim() {
            if d != m.dim {
                return Err(malformed(format!(
                    "segmenter dimension {d} vs index dimension {}",
                    m.dim
                )));
            }
        }

        let mut cells = BTreeMap::new();
        let mut seen = BTreeSet::new();
        let mut total = 0usize;
        for e in &m.segments {
            if e.shard >= m.num_shards || e.segment >= m.segmenter.num_segments() {
                return Err(malformed(format!(
                    "segment entry ({}, {}) out of range",
                    e.shard, e.segment
                )));
            }
            if !seen.insert((e.shard, e.segment)) {
                return Err(malformed(format!(
                    "duplicate segment entry ({}, {})",
                    e.shard, e.segment
                )));
            }
            if e.file.is_empty() || e.file.contains(['/', '\\']) || e.file == "." || e.file == ".." {
                return Err(malformed(format!("invalid segment file name {:?}", e.file)));
            }
            let bytes = fs::read(dir.join(&e.file))?;
            let header = crate::hnsw::format_header(&bytes)?;
            if header.dim != m.dim {
                return Err(malformed(format!(
                    "{}: dimension {} vs manifest {}",
                    e.file, header.dim, m.dim
                )));
            }
            if header.distance != m.distance_kind {
                return Err(malformed(format!("{}: distance kind differs from manifest", e.file)));
            }
            if header.count != e.count {
                return Err(malformed(format!(
                    "{}: {} nodes vs manifest {}",
                    e.file, header.count, e.count
                )));
            }
            if header.params != m.hnsw_params {
                return Err(malformed(format!("{}: parameters differ from manifest", e.file)));
            }
            let index = HnswIndex::from_bytes(&bytes)?;
            total += index.len();
            cells.insert((e.shard, e.segment), index);
        }
        let consistent = match m.spill_mode {
            SpillMode::Virtual => total == m.doc_count,
            SpillMode::Physical => total >= m.doc_count,
        };
        if !consistent {
            return Err(malformed(format!(
                "segments hold {total} entries for {} documents",
                m.doc_count
            )));
        }
        Ok(Self {
            spec: PartitionSpec::new(m.num_shards, m.segmenter)?,
            hnsw: m.hnsw_params,
            distance: m.distance_kind,
            dim: m.dim,
            doc_count: m.doc_count,
            spill: m.spill_mode,
            cells,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct Manifest {
    version: u32,
    num_shards: usize,
    segmenter: SegmenterTree,
    hnsw_params: HnswParams,
    distance_kind: DistanceFunction,
    dim: usize,
    doc_count: usize,
    spill_mode: SpillMode,
    segments: Vec<SegmentEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmentEntry {
    shard: usize,
    segment: usize,
    file: String,
    count: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmenter::learn_rh;
    use crate::synthetic::uniform;

    fn fast_config(workers: usize) -> BuildConfig {
        BuildConfig {
            hnsw: HnswParams {
                ef_construction: 40,
                ..HnswParams::with_m(8)
            },
            workers,
            ..BuildConfig::default()
        }
    }

    /// Straightforward FNV-1a reference, written separately from `hash.rs`.
    fn reference_fnv(data: &[u8]) -> u64 {
        let mut h: u64 = 14695981039346656037;
        for b in data {
            h = (h ^ *b as u64).wrapping_mul(1099511628211);
        }
        h
    }

    #[test]
    fn shard_hash_examples() {
        assert_eq!(fnv1a_64(b""), 0xcbf29ce484222325);
        assert_eq!(shard_of(b"", 7), (0xcbf29ce484222325u64 % 7) as usize);
        assert_eq!(fnv1a_64(b"a"), reference_fnv(b"a"));
        assert_eq!(fnv1a_64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(shard_of(b"a", 20), (reference_fnv(b"a") % 20) as usize);
        for key in ["x", "1234", "doc-99"] {
            assert_eq!(shard_of(key.as_bytes(), 1), 0);
        }
    }

    #[test]
    fn shards_are_balanced() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let n = 40_000;
        for shards in [2, 5, 16, 32] {
            let mut counts = vec![0usize; shards];
            for _ in 0..n {
                let key: u64 = rng.random();
                counts[shard_of(doc_key(key).as_bytes(), shards)] += 1;
            }
            let expected = n as f64 / shards as f64;
            for c in counts {
                assert!((c as f64 - expected).abs() <= 5.0 * expected.sqrt(), "{shards}: {c}");
            }
        }
    }

    #[test]
    fn degenerate_partitioning_is_plain_hnsw() {
        let ds = uniform(500, 6, 3);
        let tree = SegmenterTree::random(1, 0).unwrap();
        let index = PartitionedIndex::build(&ds, &PartitionSpec::new(1, tree).unwrap(), &fast_config(1)).unwrap();
        let plain = HnswIndex::build(6, DistanceFunction::Euclidean, fast_config(1).hnsw, ds.iter()).unwrap();
        assert_eq!(index.cells().count(), 1);
        assert_eq!(index.cell(0, 0).unwrap().to_bytes(), plain.to_bytes());
    }

    #[test]
    fn virtual_spill_partitions_documents() {
        let ds = uniform(2000, 6, 4);
        let tree = learn_rh(&ds, 2, 0.15, 3).unwrap();
        let index = PartitionedIndex::build(&ds, &PartitionSpec::new(2, tree).unwrap(), &fast_config(2)).unwrap();
        assert_eq!(index.total_entries(), 2000);
        let mut seen = BTreeSet::new();
        for ((shard, _), cell) in index.cells() {
            for (id, _) in cell.iter() {
                assert!(seen.insert(id));
                assert_eq!(shard, shard_of(doc_key(id).as_bytes(), 2));
            }
        }
        assert_eq!(seen.len(), 2000);
    }

    #[test]
    fn physical_spill_copies_band_documents() {
        let ds = uniform(2000, 6, 4);
        let tree = learn_rh(&ds, 2, 0.15, 3).unwrap();
        let expected: usize = ds
            .iter()
            .map(|(_, v)| tree.route_document_spilled(v, b"").unwrap().len())
            .sum();
        let config = BuildConfig {
            spill: SpillMode::Physical,
            ..fast_config(2)
        };
        let index = PartitionedIndex::build(&ds, &PartitionSpec::new(3, tree).unwrap(), &config).unwrap();
        assert_eq!(index.total_entries(), expected);
        assert!(expected > 2000);
        // Copies of one document never cross shards.
        for ((shard, _), cell) in index.cells() {
            for (id, _) in cell.iter() {
                assert_eq!(shard, shard_of(doc_key(id).as_bytes(), 3));
            }
        }
    }

    #[test]
    fn build_checks_inputs() {
        let ds = uniform(100, 6, 4);
        let other = uniform(100, 5, 4);
        let tree = learn_rh(&other, 1, 0.15, 3).unwrap();
        let spec = PartitionSpec::new(1, tree).unwrap();
        assert!(matches!(
            PartitionedIndex::build(&ds, &spec, &fast_config(1)),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(PartitionedIndex::build(&other, &spec, &fast_config(0)).is_err());
        assert!(PartitionSpec::new(0, SegmenterTree::random(1, 0).unwrap()).is_err());
        let empty = Dataset::new(5).unwrap();
        let index = PartitionedIndex::build(&empty, &spec, &fast_config(1)).unwrap();
        assert_eq!(index.cells().count(), 0);
    }

    #[test]
    fn worker_count_does_not_change_the_index() {
        let ds = uniform(1500, 8, 6);
        let spec = PartitionSpec::new(2, SegmenterTree::random(3, 1).unwrap()).unwrap();
        let a = PartitionedIndex::build(&ds, &spec, &fast_config(1)).unwrap();
        let b = PartitionedIndex::build(&ds, &spec, &fast_config(4)).unwrap();
        let bytes = |ix: &PartitionedIndex| ix.cells().map(|(c, s)| (c, s.to_bytes())).collect::<Vec<_>>();
        assert_eq!(bytes(&a), bytes(&b));
    }

    #[test]
    fn save_load_round_trip_and_mismatches() {
        let ds = uniform(800, 6, 7);
        let tree = learn_rh(&ds, 2, 0.15, 3).unwrap();
        let index = PartitionedIndex::build(&ds, &PartitionSpec::new(2, tree).unwrap(), &fast_config(2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        index.save(dir.path()).unwrap();
        let back = PartitionedIndex::load(dir.path()).unwrap();
        assert_eq!(back.doc_count(), 800);
        assert_eq!(back.segmenter(), index.segmenter());
        for ((c, a), (d, b)) in index.cells().zip(back.cells()) {
            assert_eq!(c, d);
            assert_eq!(a.to_bytes(), b.to_bytes());
        }

        let manifest = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();

        let broken = tempfile::tempdir().unwrap();
        index.save(broken.path()).unwrap();
        fs::remove_file(broken.path().join("shard-0000-segment-0000.lann")).unwrap();
        assert!(matches!(PartitionedIndex::load(broken.path()), Err(Error::Io(_))));

        let wrong_dim = tempfile::tempdir().unwrap();
        index.save(wrong_dim.path()).unwrap();
        let other = uniform(50, 5, 1);
        let foreign = HnswIndex::build(5, DistanceFunction::Euclidean, fast_config(1).hnsw, other.iter()).unwrap();
        fs::write(
            wrong_dim.path().join("shard-0000-segment-0000.lann"),
            foreign.to_bytes(),
        )
        .unwrap();
        assert!(matches!(
            PartitionedIndex::load(wrong_dim.path()),
            Err(Error::Format(_))
        ));

        let wrong_kind = tempfile::tempdir().unwrap();
        index.save(wrong_kind.path()).unwrap();
        fs::write(
            wrong_kind.path().join(MANIFEST_FILE),
            manifest.replace("\"distanceKind\": \"euclidean\"", "\"distanceKind\": \"cosine\""),
        )
        .unwrap();
        assert!(matches!(
            PartitionedIndex::load(wrong_kind.path()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn empty_index_round_trip() {
        let empty = Dataset::new(4).unwrap();
        let spec = PartitionSpec::new(3, SegmenterTree::random(2, 0).unwrap()).unwrap();
        let index = PartitionedIndex::build(&empty, &spec, &fast_config(1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        index.save(dir.path()).unwrap();
        let back = PartitionedIndex::load(dir.path()).unwrap();
        assert_eq!(back.cells().count(), 0);
        assert_eq!(back.dim(), 4);
        assert_eq!(back.num_shards(), 3);
    }
}
