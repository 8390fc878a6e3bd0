use std::collections::HashSet;

use crate::error::{invalid, Error, Result};

pub type DocId = u64;

/// Fixed-dimension collection of `f32` vectors keyed by unique document ids.
///
/// Vectors live in one contiguous row-major buffer. Every vector is checked
/// for finiteness and length on insertion.
#[derive(Clone, Debug)]
pub struct Dataset {
    dim: usize,
    ids: Vec<DocId>,
    data: Vec<f32>,
    seen: HashSet<DocId>,
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.ids == other.ids && self.data == other.data
    }
}

impl Dataset {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dataset dimension must be positive"));
        }
        Ok(Self {
            dim,
            ids: Vec::new(),
            data: Vec::new(),
            seen: HashSet::new(),
        })
    }

    /// Builds a dataset from a row-major buffer; ids are the row positions.
    pub fn from_flat(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dataset dimension must be positive"));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(invalid(format!(
                "buffer of {} values is not a multiple of dimension {dim}",
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { index: index % dim });
        }
        let n = data.len() / dim;
        let ids: Vec<DocId> = (0..n as DocId).collect();
        let seen = ids.iter().copied().collect();
        Ok(Self { dim, ids, data, seen })
    }

    /// Builds a dataset from rows; ids are the row positions.
    pub fn from_rows<I, V>(dim: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = V>,
        V: AsRef<[f32]>,
    {
        let mut ds = Self::new(dim)?;
        for (i, row) in rows.into_iter().enumerate() {
            ds.push(i as DocId, row.as_ref())?;
        }
        Ok(ds)
    }

    pub fn push(&mut self, id: DocId, vector: &[f32]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: vector.len(),
            });
        }
        if let Some(index) = vector.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        if !self.seen.insert(id) {
            return Err(Error::DuplicateDocId(id));
        }
        self.ids.push(id);
        self.data.extend_from_slice(vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn id(&self, row: usize) -> DocId {
        self.ids[row]
    }

    pub fn ids(&self) -> &[DocId] {
        &self.ids
    }

    pub fn vector(&self, row: usize) -> &[f32] {
        &self.data[row * self.dim..(row + 1) * self.dim]
    }

    pub fn as_flat(&self) -> &[f32] {
        &self.data
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = (DocId, &[f32])> + '_ {
        self.ids.iter().copied().zip(self.data.chunks_exact(self.dim))
    }

    /// Copies the given rows, in the given order, into a new dataset.
    pub fn select(&self, rows: &[usize]) -> Dataset {
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        let mut ids = Vec::with_capacity(rows.len());
        for &r in rows {
            ids.push(self.ids[r]);
            data.extend_from_slice(self.vector(r));
        }
        let seen = ids.iter().copied().collect();
        Dataset {
            dim: self.dim,
            ids,
            data,
            seen,
        }
    }

    pub(crate) fn check_dim(&self, v: &[f32]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: v.len(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_rows() {
        let mut ds = Dataset::new(2).unwrap();
        ds.push(7, &[1.0, 2.0]).unwrap();
        assert!(matches!(ds.push(7, &[3.0, 4.0]), Err(Error::DuplicateDocId(7))));
        assert!(matches!(ds.push(8, &[3.0]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(
            ds.push(9, &[f32::INFINITY, 0.0]),
            Err(Error::NonFinite { index: 0 })
        ));
        assert_eq!(ds.len(), 1);
        assert!(Dataset::new(0).is_err());
    }

    #[test]
    fn flat_and_rows_agree() {
        let a = Dataset::from_flat(2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Dataset::from_rows(2, [[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.vector(1), &[3.0, 4.0]);
        assert_eq!(a.ids(), &[0, 1]);
        let s = a.select(&[1]);
        assert_eq!(s.ids(), &[1]);
        assert!(Dataset::from_flat(2, vec![1.0, 2.0, 3.0]).is_err());
    }
}
