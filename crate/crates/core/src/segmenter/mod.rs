//! Segmenters map a vector to one of the segments inside a shard.
//!
//! * `Random` assigns documents by hashing their key and sends every query
//!   to all segments.
//! * `RandomHyperplane` and `Apd` hold a complete binary tree of hyperplanes
//!   of depth `levels`; the leaves are the `2^levels` segments. Documents
//!   follow `projection < split` to the left child. Queries follow the
//!   spill band instead: left below `lo`, right above `hi`, and both children
//!   when the projection falls inside `[lo, hi]`.
//!
//! Nodes are stored in level order: node `i` has children `2i + 1` and
//! `2i + 2`, and leaf `j` of the last level is segment `j`.

mod bounds;
mod learn;
mod svd;

use serde::{Deserialize, Serialize};

use crate::distance::dot;
use crate::error::{invalid, malformed, Error, Result};
use crate::hash::{fnv1a_64, fnv1a_64_extend, mix64};

pub use bounds::{failure_bound, failure_bound_estimate, potential, BoundParams};
pub use learn::{fractile_points, learn_apd, learn_rh};
pub use svd::{second_singular_vector, POWER_MAX_ITERATIONS, POWER_TOLERANCE};

pub const SEGMENTER_VERSION: u32 = 1;
pub const MAX_LEVELS: u32 = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum SegmenterKind {
    Random,
    RandomHyperplane,
    Apd,
}

/// One split: unit normal `h`, the median projection `split`, and the spill
/// band `[lo, hi]` at the `0.5 - alpha` and `0.5 + alpha` fractiles.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperplaneNode {
    pub normal: Vec<f32>,
    pub split: f64,
    pub lo: f64,
    pub hi: f64,
}

impl HyperplaneNode {
    #[inline]
    pub fn project(&self, x: &[f32]) -> f64 {
        dot(&self.normal, x)
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.normal.len() != dim {
            return Err(invalid("hyperplane normals must share one dimension"));
        }
        if self.normal.iter().any(|v| !v.is_finite()) {
            return Err(invalid("hyperplane normal is not finite"));
        }
        let norm = dot(&self.normal, &self.normal).sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(invalid(format!("hyperplane normal has norm {norm}")));
        }
        if !(self.lo.is_finite() && self.split.is_finite() && self.hi.is_finite()) {
            return Err(invalid("split points must be finite"));
        }
        if !(self.lo <= self.split && self.split <= self.hi) {
            return Err(invalid("split points must satisfy lo <= split <= hi"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "SegmenterFile", try_from = "SegmenterFile")]
pub struct SegmenterTree {
    kind: SegmenterKind,
    levels: u32,
    alpha: f64,
    seed: u64,
    num_segments: usize,
    dim: Option<usize>,
    nodes: Vec<HyperplaneNode>,
}

impl SegmenterTree {
    /// Data-independent segmenter over `num_segments` segments.
    pub fn random(num_segments: usize, seed: u64) -> Result<Self> {
        if num_segments == 0 {
            return Err(invalid("segment count must be positive"));
        }
        Ok(Self {
            kind: SegmenterKind::Random,
            levels: 0,
            alpha: 0.0,
            seed,
            num_segments,
            dim: None,
            nodes: Vec::new(),
        })
    }

    /// Assembles a hyperplane tree from level-ordered nodes.
    pub fn from_nodes(
        kind: SegmenterKind,
        levels: u32,
        alpha: f64,
        seed: u64,
        dim: usize,
        nodes: Vec<HyperplaneNode>,
    ) -> Result<Self> {
        if kind == SegmenterKind::Random {
            return Err(invalid("random segmenters have no hyperplanes"));
        }
        check_alpha(alpha)?;
        if levels > MAX_LEVELS {
            return Err(invalid(format!("at most {MAX_LEVELS} levels are supported")));
        }
        if dim == 0 {
            return Err(invalid("dimension must be positive"));
        }
        let internal = (1usize << levels) - 1;
        if nodes.len() != internal {
            return Err(invalid(format!(
                "a tree of {levels} levels needs {internal} nodes, got {}",
                nodes.len()
            )));
        }
        for node in &nodes {
            node.validate(dim)?;
        }
        Ok(Self {
            kind,
            levels,
            alpha,
            seed,
            num_segments: 1 << levels,
            dim: Some(dim),
            nodes,
        })
    }

    pub fn kind(&self) -> SegmenterKind {
        self.kind
    }

    pub fn levels(&self) -> u32 {
        self.levels
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_segments(&self) -> usize {
        self.num_segments
    }

    /// Input dimension; `None` for random segmenters, which accept any.
    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn nodes(&self) -> &[HyperplaneNode] {
        &self.nodes
    }

    fn check_dim(&self, x: &[f32]) -> Result<()> {
        match self.dim {
            Some(d) if d != x.len() => Err(Error::DimensionMismatch {
                expected: d,
                actual: x.len(),
            }),
            _ => Ok(()),
        }
    }

    fn leaf_base(&self) -> usize {
        (1usize << self.levels) - 1
    }

    /// Home segment of a document. `key` only matters for random segmenters.
    pub fn route_document(&self, x: &[f32], key: &[u8]) -> Result<usize> {
        self.check_dim(x)?;
        if self.kind == SegmenterKind::Random {
            return Ok(random_segment(key, self.seed, self.num_segments));
        }
        let mut i = 0;
        for _ in 0..self.levels {
            let node = &self.nodes[i];
            i = if node.project(x) < node.split {
                2 * i + 1
            } else {
                2 * i + 2
            };
        }
        Ok(i - self.leaf_base())
    }

    /// Segments a query must visit under virtual spill, ascending.
    pub fn route_query(&self, q: &[f32]) -> Result<Vec<usize>> {
        self.check_dim(q)?;
        if self.kind == SegmenterKind::Random {
            return Ok((0..self.num_segments).collect());
        }
        Ok(self.band_leaves(q))
    }

    /// Segments that receive a copy of the document under physical spill.
    pub fn route_document_spilled(&self, x: &[f32], key: &[u8]) -> Result<Vec<usize>> {
        self.check_dim(x)?;
        if self.kind == SegmenterKind::Random {
            return Ok(vec![random_segment(key, self.seed, self.num_segments)]);
        }
        Ok(self.band_leaves(x))
    }

    fn band_leaves(&self, x: &[f32]) -> Vec<usize> {
        let base = self.leaf_base();
        let mut out = Vec::new();
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            if i >= base {
                out.push(i - base);
                continue;
            }
            let node = &self.nodes[i];
            let p = node.project(x);
            let go_left = p <= node.hi;
            let go_right = p >= node.lo;
            // Right first so the left subtree pops first and output stays sorted.
            if go_right {
                stack.push(2 * i + 2);
            }
            if go_left {
                stack.push(2 * i + 1);
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| malformed(format!("bad segmenter: {e}")))
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..0.5).contains(&alpha) {
        return Err(invalid(format!("alpha must be in [0, 0.5), got {alpha}")));
    }
    Ok(())
}

/// Mixed hash of `key ++ "seg" ++ seed`, independent of the shard hash.
fn random_segment(key: &[u8], seed: u64, num_segments: usize) -> usize {
    // FNV low bits survive suffix extension, so mix before reducing;
    // otherwise segment would be a function of the shard.
    let h = fnv1a_64_extend(fnv1a_64_extend(fnv1a_64(key), b"seg"), &seed.to_le_bytes());
    (mix64(h) % num_segments as u64) as usize
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct SegmenterFile {
    version: u32,
    kind: SegmenterKind,
    levels: u32,
    alpha: f64,
    seed: u64,
    num_segments: usize,
    dim: Option<usize>,
    nodes: Vec<NodeRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeRecord {
    /// `f32` normal widened to `f64`, so the decimal form is exact.
    h: Vec<f64>,
    split: f64,
    lo: f64,
    hi: f64,
}

impl From<SegmenterTree> for SegmenterFile {
    fn from(t: SegmenterTree) -> Self {
        SegmenterFile {
            version: SEGMENTER_VERSION,
            kind: t.kind,
            levels: t.levels,
            alpha: t.alpha,
            seed: t.seed,
            num_segments: t.num_segments,
            dim: t.dim,
            nodes: t
                .nodes
                .into_iter()
                .map(|n| NodeRecord {
                    h: n.normal.into_iter().map(f64::from).collect(),
                    split: n.split,
                    lo: n.lo,
                    hi: n.hi,
                })
                .collect(),
        }
    }
}

impl TryFrom<SegmenterFile> for SegmenterTree {
    type Error = Error;

    fn try_from(f: SegmenterFile) -> Result<Self> {
        if f.version != SEGMENTER_VERSION {
            return Err(malformed(format!("unsupported segmenter version {}", f.version)));
        }
        match f.kind {
            SegmenterKind::Random => {
                if f.levels != 0 || !f.nodes.is_empty() || f.dim.is_some() {
                    return Err(malformed("random segmenter carries hyperplanes"));
                }
                SegmenterTree::random(f.num_segments, f.seed)
            }
            kind => {
                let dim = f
                    .dim
                    .ok_or_else(|| malformed("hyperplane segmenter without dimension"))?;
                let nodes = f
                    .nodes
                    .into_iter()
                    .map(|n| {
                        let normal: Vec<f32> = n.h.iter().map(|&v| v as f32).collect();
                        if normal.iter().zip(&n.h).any(|(&a, &b)| f64::from(a) != b) {
                            return Err(malformed("hyperplane component is not an f32 value"));
                        }
                        Ok(HyperplaneNode {
                            normal,
                            split: n.split,
                            lo: n.lo,
                            hi: n.hi,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let tree = SegmenterTree::from_nodes(kind, f.levels, f.alpha, f.seed, dim, nodes)?;
                if tree.num_segments != f.num_segments {
                    return Err(malformed("segment count does not match tree depth"));
                }
                Ok(tree)
            }
        }
        .map_err(|e| match e {
            Error::InvalidParameter(m) => Error::Format(m),
            other => other,
        })
    }
}
