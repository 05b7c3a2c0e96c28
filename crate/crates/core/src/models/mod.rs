//! Autoregressive sequence models.
//!
//! A [`SequenceModel`] maps a prefix of tokens to the distribution of the next
//! token. The concrete implementation is [`TabularMarkovModel`], an order-`k`
//! Markov model that can be fitted from a [`Corpus`] by smoothed count
//! normalization and coarsened into a cheaper draft model.

mod corpus;
mod distribution;
mod sampling;
mod tabular;

use std::fmt;

use thiserror::Error;

pub use corpus::{cross_entropy, Corpus};
pub use distribution::{Distribution, DistributionError};
pub use sampling::{ar_decode, sample_token, sample_with_uniform};
pub use tabular::{derive_draft, fit_tabular, Context, TabularMarkovModel, BEGIN_MARKER};

use crate::scalar::Probability;

/// Index of a token in a vocabulary of size `V`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TokenId(pub u32);

impl TokenId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<u32> for TokenId {
    fn from(value: u32) -> Self {
        TokenId(value)
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Builds a token vector from raw ids.
pub fn tokens(ids: &[u32]) -> Vec<TokenId> {
    ids.iter().copied().map(TokenId).collect()
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("token {token} is outside the vocabulary of size {vocab}")]
    VocabularyMismatch { token: u32, vocab: usize },
    #[error("models disagree on vocabulary size ({left} vs {right})")]
    VocabularySizeMismatch { left: usize, right: usize },
    #[error("cannot fit a model on an empty corpus")]
    EmptyCorpus,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("sequence {sequence}, position {position}: model assigns zero probability to observed token {token}")]
    Divergence {
        sequence: usize,
        position: usize,
        token: u32,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Distribution(#[from] DistributionError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The conditional `P(y_t | y_<t)` of an autoregressive model.
///
/// Implementations must be pure: the same prefix always yields the same
/// distribution.
pub trait SequenceModel<T: Probability = f64> {
    fn vocab_size(&self) -> usize;

    fn next_distribution(&self, prefix: &[TokenId]) -> Result<Distribution<T>, ModelError>;

    fn check_prefix(&self, prefix: &[TokenId]) -> Result<(), ModelError> {
        let vocab = self.vocab_size();
        match prefix.iter().find(|t| t.index() >= vocab) {
            Some(t) => Err(ModelError::VocabularyMismatch { token: t.0, vocab }),
            None => Ok(()),
        }
    }
}

impl<T: Probability, M: SequenceModel<T> + ?Sized> SequenceModel<T> for &M {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn next_distribution(&self, prefix: &[TokenId]) -> Result<Distribution<T>, ModelError> {
        (**self).next_distribution(prefix)
    }
}

/// Fails unless both models share a vocabulary.
pub fn check_same_vocab<T: Probability>(
    a: &(impl SequenceModel<T> + ?Sized),
    b: &(impl SequenceModel<T> + ?Sized),
) -> Result<usize, ModelError> {
    let (left, right) = (a.vocab_size(), b.vocab_size());
    if left != right {
        return Err(ModelError::VocabularySizeMismatch { left, right });
    }
    Ok(left)
}

/// A model whose next-token distribution is computed by a closure. Handy for
/// hand-built fixtures in tests.
pub struct FnModel<T, F> {
    vocab: usize,
    f: F,
    _marker: std::marker::PhantomData<T>,
}

impl<T, F> FnModel<T, F>
where
    T: Probability,
    F: Fn(&[TokenId]) -> Distribution<T>,
{
    pub fn new(vocab: usize, f: F) -> Self {
        Self {
            vocab,
            f,
            _marker: std::marker::PhantomData,
        }
    }
}

impl<T, F> SequenceModel<T> for FnModel<T, F>
where
    T: Probability,
    F: Fn(&[TokenId]) -> Distribution<T>,
{
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn next_distribution(&self, prefix: &[TokenId]) -> Result<Distribution<T>, ModelError> {
        self.check_prefix(prefix)?;
        Ok((self.f)(prefix))
    }
}
