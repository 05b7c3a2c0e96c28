use thiserror::Error;

use super::TokenId;
use crate::scalar::Probability;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistributionError {
    #[error("distribution over an empty vocabulary")]
    Empty,
    #[error("entry {index} is negative or not finite ({value})")]
    BadEntry { index: usize, value: f64 },
    #[error("probabilities sum to {sum}, expected 1")]
    NotNormalized { sum: f64 },
    #[error("cannot normalize a vector with total mass {mass}")]
    ZeroMass { mass: f64 },
    #[error("token {token} outside a vocabulary of size {vocab}")]
    OutOfRange { token: u32, vocab: usize },
}

/// Dense probability vector over a vocabulary.
///
/// Entries are non-negative and sum to one within
/// [`Probability::normalization_tolerance`].
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution<T = f64> {
    probs: Vec<T>,
}

impl<T: Probability> Distribution<T> {
    pub fn new(probs: Vec<T>) -> Result<Self, DistributionError> {
        if probs.is_empty() {
            return Err(DistributionError::Empty);
        }
        for (index, &p) in probs.iter().enumerate() {
            if !(p.is_finite() && p >= T::zero()) {
                return Err(DistributionError::BadEntry {
                    index,
                    value: p.as_f64(),
                });
            }
        }
        let sum: T = probs.iter().copied().sum();
        if (sum - T::one()).abs() > T::normalization_tolerance() {
            return Err(DistributionError::NotNormalized { sum: sum.as_f64() });
        }
        Ok(Self { probs })
    }

    /// Builds from `f64` literals, converting to `T`.
    pub fn from_f64s(probs: &[f64]) -> Result<Self, DistributionError> {
        Self::new(probs.iter().map(|&p| T::lit(p)).collect())
    }

    /// Divides non-negative weights by their total.
    pub fn normalize(weights: Vec<T>) -> Result<Self, DistributionError> {
        for (index, &w) in weights.iter().enumerate() {
            if !(w.is_finite() && w >= T::zero()) {
                return Err(DistributionError::BadEntry {
                    index,
                    value: w.as_f64(),
                });
            }
        }
        let mass: T = weights.iter().copied().sum();
        if !(mass > T::zero()) {
            return Err(DistributionError::ZeroMass { mass: mass.as_f64() });
        }
        Self::new(weights.into_iter().map(|w| w / mass).collect())
    }

    pub fn uniform(vocab: usize) -> Self {
        assert!(vocab > 0, "uniform distribution over an empty vocabulary");
        let p = T::one() / T::from_usize(vocab).expect("vocab size representable");
        Self { probs: vec![p; vocab] }
    }

    pub fn point_mass(vocab: usize, token: TokenId) -> Result<Self, DistributionError> {
        if token.index() >= vocab {
            return Err(DistributionError::OutOfRange { token: token.0, vocab });
        }
        let mut probs = vec![T::zero(); vocab];
        probs[token.index()] = T::one();
        Ok(Self { probs })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Probability of `token`; zero outside the vocabulary.
    #[inline]
    pub fn prob(&self, token: TokenId) -> T {
        self.probs.get(token.index()).copied().unwrap_or_else(T::zero)
    }

    #[inline]
    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    pub fn into_probs(self) -> Vec<T> {
        self.probs
    }

    /// Tokens with non-zero probability, ascending.
    pub fn support(&self) -> impl Iterator<Item = (TokenId, T)> + '_ {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > T::zero())
            .map(|(i, &p)| (TokenId(i as u32), p))
    }

    pub fn map_scalar<U: Probability>(&self) -> Distribution<U> {
        Distribution {
            probs: self
                .probs
                .iter()
                .map(|&p| U::from_f64(p.as_f64()).expect("representable"))
                .collect(),
        }
    }
}
