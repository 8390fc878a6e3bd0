use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Metric used to rank documents against a query.
///
/// Components are stored as `f32` but every accumulation runs in `f64`, so
/// the ordering of two candidates does not depend on summation width.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceFunction {
    #[default]
    Euclidean,
    /// `1 - cos(a, b)`.
    Cosine,
}

impl DistanceFunction {
    /// Checked distance between two vectors.
    pub fn distance(self, a: &[f32], b: &[f32]) -> Result<f64> {
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch {
                expected: a.len(),
                actual: b.len(),
            });
        }
        if self == DistanceFunction::Cosine && (norm(a) == 0.0 || norm(b) == 0.0) {
            return Err(Error::ZeroNorm);
        }
        Ok(self.eval(a, b))
    }

    /// Unchecked distance; callers guarantee equal lengths and, for cosine,
    /// nonzero norms.
    #[inline]
    pub(crate) fn eval(self, a: &[f32], b: &[f32]) -> f64 {
        match self {
            DistanceFunction::Euclidean => squared_euclidean(a, b).sqrt(),
            DistanceFunction::Cosine => {
                let mut dot = 0.0f64;
                let mut na = 0.0f64;
                let mut nb = 0.0f64;
                for (&x, &y) in a.iter().zip(b) {
                    let (x, y) = (f64::from(x), f64::from(y));
                    dot += x * y;
                    na += x * x;
                    nb += y * y;
                }
                (1.0 - dot / (na.sqrt() * nb.sqrt())).max(0.0)
            }
        }
    }

    /// Rejects vectors this metric cannot handle: non-finite components, and
    /// zero vectors under cosine.
    pub fn validate(self, v: &[f32]) -> Result<()> {
        if let Some(index) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        if self == DistanceFunction::Cosine && norm(v) == 0.0 {
            return Err(Error::ZeroNorm);
        }
        Ok(())
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            DistanceFunction::Euclidean => 0,
            DistanceFunction::Cosine => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DistanceFunction::Euclidean),
            1 => Some(DistanceFunction::Cosine),
            _ => None,
        }
    }
}

#[inline]
fn squared_euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum()
}

/// Dot product accumulated in `f64`.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

pub fn norm(v: &[f32]) -> f64 {
    dot(v, v).sqrt()
}
