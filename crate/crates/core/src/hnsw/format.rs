//! Segment file layout (little-endian):
//!
//! ```text
//! magic "LANN" | u16 version | u8 distance kind | u32 dim | u64 count
//! u32 m | u32 m0 | u32 ef_construction | u32 ef_search | f64 level_mult | u64 seed
//! u64 entry point doc id (u64::MAX when empty) | u32 max level
//! per node: u64 doc id | u32 level | per layer 0..=level: u32 degree, degree x u64 doc ids
//! count x dim f32 vectors, in node order
//! ```

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{assign_level, HnswIndex, HnswParams, VisitedSet};
use crate::dataset::DocId;
use crate::distance::DistanceFunction;
use crate::error::{malformed, Error, Result};

pub const SEGMENT_MAGIC: [u8; 4] = *b"LANN";
pub const SEGMENT_VERSION: u16 = 1;

const NO_ENTRY: u64 = u64::MAX;

/// Header fields readable without decoding the whole segment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct SegmentHeader {
    pub distance: DistanceFunction,
    pub dim: usize,
    pub count: usize,
    pub params: HnswParams,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| malformed("truncated segment"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        self.array().map(u16::from_le_bytes)
    }

    fn u32(&mut self) -> Result<u32> {
        self.array().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> Result<u64> {
        self.array().map(u64::from_le_bytes)
    }

    fn f64(&mut self) -> Result<f64> {
        self.array().map(f64::from_le_bytes)
    }
}

fn read_header(r: &mut Reader<'_>) -> Result<SegmentHeader> {
    if r.array::<4>()? != SEGMENT_MAGIC {
        return Err(malformed("bad segment magic"));
    }
    let version = r.u16()?;
    if version != SEGMENT_VERSION {
        return Err(malformed(format!("unsupported segment version {version}")));
    }
    let distance = DistanceFunction::from_code(r.u8()?).ok_or_else(|| malformed("unknown distance kind"))?;
    let dim = r.u32()? as usize;
    let count = usize::try_from(r.u64()?).map_err(|_| malformed("count overflow"))?;
    let params = HnswParams {
        m: r.u32()? as usize,
        m0: r.u32()? as usize,
        ef_construction: r.u32()? as usize,
        ef_search: r.u32()? as usize,
        level_mult: r.f64()?,
        seed: r.u64()?,
    };
    params
        .validate()
        .map_err(|e| malformed(format!("bad segment parameters: {e}")))?;
    if dim == 0 {
        return Err(malformed("zero dimension"));
    }
    Ok(SegmentHeader {
        distance,
        dim,
        count,
        params,
    })
}

pub(crate) fn peek_header(bytes: &[u8]) -> Result<SegmentHeader> {
    read_header(&mut Reader { buf: bytes, pos: 0 })
}

impl HnswIndex {
    pub fn to_bytes(&self) -> Vec<u8> {
        let edges: usize = self.links.iter().flatten().map(Vec::len).sum();
        let layers: usize = self.links.iter().map(Vec::len).sum();
        let mut out = Vec::with_capacity(64 + self.len() * 12 + layers * 4 + edges * 8 + self.vectors.len() * 4);
        out.extend_from_slice(&SEGMENT_MAGIC);
        out.extend_from_slice(&SEGMENT_VERSION.to_le_bytes());
        out.push(self.distance.code());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        let p = &self.params;
        for v in [p.m, p.m0, p.ef_construction, p.ef_search] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&p.level_mult.to_le_bytes());
        out.extend_from_slice(&p.seed.to_le_bytes());
        out.extend_from_slice(&self.entry_point().unwrap_or(NO_ENTRY).to_le_bytes());
        out.extend_from_slice(&(self.max_level as u32).to_le_bytes());
        for (node, layers) in self.links.iter().enumerate() {
            out.extend_from_slice(&self.doc_ids[node].to_le_bytes());
            out.extend_from_slice(&((layers.len() - 1) as u32).to_le_bytes());
            for adj in layers {
                out.extend_from_slice(&(adj.len() as u32).to_le_bytes());
                for &nb in adj {
                    out.extend_from_slice(&self.doc_ids[nb as usize].to_le_bytes());
                }
            }
        }
        for v in &self.vectors {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let SegmentHeader {
            distance,
            dim,
            count,
            params,
        } = read_header(&mut r)?;
        let entry_doc = r.u64()?;
        let max_level = r.u32()? as usize;

        // Each node needs at least 16 bytes; reject absurd counts before allocating.
        if count > bytes.len() / 16 + 1 {
            return Err(malformed("node count exceeds payload"));
        }
        let mut doc_ids = Vec::with_capacity(count);
        let mut raw_links: Vec<Vec<Vec<DocId>>> = Vec::with_capacity(count);
        for _ in 0..count {
            doc_ids.push(r.u64()?);
            let level = r.u32()? as usize;
            if level > max_level {
                return Err(malformed("node level above max level"));
            }
            let mut layers = Vec::with_capacity(level + 1);
            for _ in 0..=level {
                let degree = r.u32()? as usize;
                if degree > params.m0.max(params.m) {
                    return Err(malformed("node degree exceeds limit"));
                }
                let adj = (0..degree).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
                layers.push(adj);
            }
            raw_links.push(layers);
        }

        let mut lookup = HashMap::with_capacity(count);
        for (node, &doc) in doc_ids.iter().enumerate() {
            if lookup.insert(doc, node as u32).is_some() {
                return Err(malformed(format!("duplicate doc id {doc}")));
            }
        }
        let links = raw_links
            .into_iter()
            .map(|layers| {
                layers
                    .into_iter()
                    .map(|adj| {
                        adj.into_iter()
                            .map(|d| {
                                lookup
                                    .get(&d)
                                    .copied()
                                    .ok_or_else(|| malformed(format!("link to unknown doc {d}")))
                            })
                            .collect::<Result<Vec<u32>>>()
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;

        let payload = r.take(
            count
                .checked_mul(dim)
                .and_then(|x| x.checked_mul(4))
                .ok_or_else(|| malformed("size overflow"))?,
        )?;
        let vectors: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if r.pos != bytes.len() {
            return Err(malformed("trailing bytes after segment"));
        }

        let entry_point = match (entry_doc, count) {
            (NO_ENTRY, 0) => None,
            (_, 0) => return Err(malformed("entry point in empty segment")),
            (doc, _) => Some(
                *lookup
                    .get(&doc)
                    .ok_or_else(|| malformed("entry point is not an indexed doc"))?,
            ),
        };

        // Replay the level draws so later inserts continue the same stream.
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        for _ in 0..count {
            assign_level(&mut rng, params.level_mult);
        }

        let index = HnswIndex {
            params,
            distance,
            dim,
            doc_ids,
            vectors,
            links,
            entry_point,
            max_level: if count == 0 { 0 } else { max_level },
            lookup,
            rng,
            scratch: VisitedSet::default(),
        };
        index
            .check_invariants()
            .map_err(|e| Error::Format(format!("inconsistent segment: {e}")))?;
        if let Some(index) = index.vectors.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: index % dim });
        }
        Ok(index)
    }
}
