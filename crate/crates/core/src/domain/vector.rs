use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VectorError {
    #[error("vector is empty")]
    Empty,
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

fn check_finite(values: &[f64]) -> Result<(), VectorError> {
    if values.is_empty() {
        return Err(VectorError::Empty);
    }
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(VectorError::NonFinite(i)),
        None => Ok(()),
    }
}

macro_rules! finite_vector {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Serialize)]
        #[serde(transparent)]
        pub struct $name(Vec<f64>);

        impl $name {
            pub fn new(values: Vec<f64>) -> Result<Self, VectorError> {
                check_finite(&values)?;
                Ok(Self(values))
            }

            pub fn values(&self) -> &[f64] {
                &self.0
            }

            pub fn into_values(self) -> Vec<f64> {
                self.0
            }

            pub fn dim(&self) -> usize {
                self.0.len()
            }

            pub fn norm(&self) -> f64 {
                self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
            }

            pub fn expect_dim(&self, expected: usize) -> Result<(), VectorError> {
                if self.dim() == expected {
                    Ok(())
                } else {
                    Err(VectorError::DimensionMismatch { expected, found: self.dim() })
                }
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                let values = Vec::<f64>::deserialize(deserializer)?;
                $name::new(values).map_err(serde::de::Error::custom)
            }
        }

        impl TryFrom<Vec<f64>> for $name {
            type Error = VectorError;

            fn try_from(values: Vec<f64>) -> Result<Self, VectorError> {
                $name::new(values)
            }
        }
    };
}

finite_vector!(
    /// A point in the encoder's latent space.
    EmbeddingVector
);
finite_vector!(
    /// A point in the decoder's token-embedding space.
    ProjectedVector
);

impl EmbeddingVector {
    /// Largest absolute coordinate difference.
    pub fn linf_distance(&self, other: &EmbeddingVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_and_empty() {
        assert_eq!(EmbeddingVector::new(vec![]).unwrap_err(), VectorError::Empty);
        assert_eq!(
            EmbeddingVector::new(vec![1.0, f64::NAN]).unwrap_err(),
            VectorError::NonFinite(1)
        );
        assert!(ProjectedVector::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn serde_is_transparent_and_checked() {
        let v = EmbeddingVector::new(vec![0.5, -1.0]).unwrap();
        assert_eq!(serde_json::to_string(&v).unwrap(), "[0.5,-1.0]");
        assert!(serde_json::from_str::<EmbeddingVector>("[]").is_err());
    }
}
