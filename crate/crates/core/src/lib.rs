//! Partitioned approximate nearest neighbor search.
//!
//! Documents are hashed to shards, and inside every shard a learned
//! segmenter (random, random hyperplane, or approximate principal direction)
//! splits them into segments. Each non-empty `(shard, segment)` cell holds its
//! own HNSW graph. Queries fan out to every shard, reach one or a few segments
//! per shard through the segmenter, and the partial answers are combined with
//! a two-level merge.
//!
//! The crate also carries an exhaustive search oracle, recall computation and
//! the `fvecs`/`ivecs` containers used by the usual ANN benchmark datasets.

pub mod dataset;
pub mod distance;
pub mod error;
pub mod exact;
pub mod hash;
pub mod hnsw;
pub mod io;
pub mod neighbor;
pub mod partition;
pub mod query;
pub mod segmenter;
pub mod synthetic;

pub use dataset::{Dataset, DocId};
pub use distance::DistanceFunction;
pub use error::{Error, Result};
pub use exact::{exact_topk, partitioned_exact};
pub use hnsw::{HnswIndex, HnswParams};
pub use neighbor::{recall_at_k, Neighbor, NeighborList};
pub use partition::{shard_of, BuildConfig, PartitionSpec, PartitionedIndex, SpillMode};
pub use query::{
    batch_query, merge, per_shard_top_k, probit, query, BatchResult, QuantileMode, QueryConfig, SegmentSearch,
    TimingReport,
};
pub use segmenter::{SegmenterKind, SegmenterTree};
