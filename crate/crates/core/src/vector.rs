use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VectorError {
    #[error("empty vector")]
    Empty,
    #[error("non-finite value at position {0}")]
    NonFinite(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("zero-norm vector")]
    ZeroNorm,
}

/// Fixed-dimension embedding with finite components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<T>", into = "Vec<T>")]
#[serde(bound(
    serialize = "T: Scalar + Serialize",
    deserialize = "T: Scalar + Deserialize<'de>"
))]
pub struct EmbeddingVector<T: Scalar> {
    values: Vec<T>,
}

impl<T: Scalar> TryFrom<Vec<T>> for EmbeddingVector<T> {
    type Error = VectorError;

    fn try_from(values: Vec<T>) -> Result<Self, VectorError> {
        Self::new(values)
    }
}

impl<T: Scalar> From<EmbeddingVector<T>> for Vec<T> {
    fn from(v: EmbeddingVector<T>) -> Self {
        v.values
    }
}

impl<T: Scalar> EmbeddingVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self, VectorError> {
        if values.is_empty() {
            return Err(VectorError::Empty);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(VectorError::NonFinite(i));
        }
        Ok(Self { values })
    }

    pub fn from_f64(values: &[f64]) -> Result<Self, VectorError> {
        Self::new(values.iter().map(|&v| T::from_f64_lossy(v)).collect())
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn into_inner(self) -> Vec<T> {
        self.values
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.to_f64_lossy()).collect()
    }

    pub fn check_dim(&self, other: &Self) -> Result<(), VectorError> {
        if self.dim() == other.dim() {
            Ok(())
        } else {
            Err(VectorError::DimMismatch {
                expected: self.dim(),
                got: other.dim(),
            })
        }
    }

    pub fn dot(&self, other: &Self) -> Result<T, VectorError> {
        self.check_dim(other)?;
        Ok(dot(&self.values, &other.values))
    }

    pub fn norm(&self) -> T {
        dot(&self.values, &self.values).sqrt()
    }

    pub fn cosine(&self, other: &Self) -> Result<T, VectorError> {
        self.check_dim(other)?;
        let (na, nb) = (self.norm(), other.norm());
        if na == T::zero() || nb == T::zero() {
            return Err(VectorError::ZeroNorm);
        }
        Ok(dot(&self.values, &other.values) / (na * nb))
    }

    pub fn normalized(&self) -> Result<Self, VectorError> {
        let n = self.norm();
        if n == T::zero() {
            return Err(VectorError::ZeroNorm);
        }
        Ok(Self {
            values: self.values.iter().map(|&v| v / n).collect(),
        })
    }

    pub fn scaled(&self, c: T) -> Result<Self, VectorError> {
        Self::new(self.values.iter().map(|&v| v * c).collect())
    }
}

pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Error unless every vector has the same dimension as the first.
pub fn check_uniform_dim<'a, T: Scalar + 'a>(
    vectors: impl IntoIterator<Item = &'a EmbeddingVector<T>>,
) -> Result<Option<usize>, VectorError> {
    let mut dim = None;
    for v in vectors {
        match dim {
            None => dim = Some(v.dim()),
            Some(d) if d != v.dim() => {
                return Err(VectorError::DimMismatch {
                    expected: d,
                    got: v.dim(),
                })
            }
            _ => {}
        }
    }
    Ok(dim)
}
