//! Exact laws by enumeration.
//!
//! These are the ground truth for the statistical tests: the output law of
//! plain autoregressive decoding, the output law of the speculative decoder
//! (with the uniform acceptance draws integrated out in closed form), the
//! single-position emission law, and total-variation distances between them.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::models::{check_same_vocab, Distribution, ModelError, SequenceModel, TokenId};
use crate::scalar::Probability;
use crate::ssd::{acceptance_threshold, residual_distribution, ResidualRule, SsdConfig, SsdError};

/// Largest `V^H` the enumerators accept.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("enumeration of {vocab}^{horizon} sequences exceeds the limit of {ENUMERATION_LIMIT}")]
    TooLarge { vocab: usize, horizon: usize },
    #[error("support mismatch: {left} vs {right}")]
    SupportMismatch { left: usize, right: usize },
    #[error("horizon {horizon} exceeds target length {target_len}")]
    HorizonTooLong { horizon: usize, target_len: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ssd(#[from] SsdError),
}

/// Probability of every length-`H` token sequence. Sequences missing from the
/// map have probability zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDistribution<T = f64> {
    horizon: usize,
    probs: BTreeMap<Vec<TokenId>, T>,
}

impl<T: Probability> SequenceDistribution<T> {
    fn empty(horizon: usize) -> Self {
        Self {
            horizon,
            probs: BTreeMap::new(),
        }
    }

    fn add(&mut self, seq: &[TokenId], mass: T) {
        debug_assert_eq!(seq.len(), self.horizon);
        let slot = self.probs.entry(seq.to_vec()).or_insert_with(T::zero);
        *slot = *slot + mass;
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn prob(&self, seq: &[TokenId]) -> T {
        self.probs.get(seq).copied().unwrap_or_else(T::zero)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[TokenId], T)> + '_ {
        self.probs.iter().map(|(k, &v)| (k.as_slice(), v))
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn total(&self) -> T {
        self.probs.values().copied().sum()
    }

    /// Law of the first token.
    pub fn first_token_marginal(&self, vocab: usize) -> Vec<T> {
        let mut out = vec![T::zero(); vocab];
        for (seq, p) in self.iter() {
            if let Some(t) = seq.first() {
                out[t.index()] = out[t.index()] + p;
            }
        }
        out
    }
}

/// Half the L1 distance.
pub trait TotalVariation<T: Probability> {
    fn tv_distance(&self, other: &Self) -> Result<T, OracleError>;
}

impl<T: Probability> TotalVariation<T> for Distribution<T> {
    fn tv_distance(&self, other: &Self) -> Result<T, OracleError> {
        if self.len() != other.len() {
            return Err(OracleError::SupportMismatch {
                left: self.len(),
                right: other.len(),
            });
        }
        let l1: T = self
            .probs()
            .iter()
            .zip(other.probs())
            .map(|(&a, &b)| (a - b).abs())
            .sum();
        Ok(l1 / T::lit(2.0))
    }
}

impl<T: Probability> TotalVariation<T> for SequenceDistribution<T> {
    fn tv_distance(&self, other: &Self) -> Result<T, OracleError> {
        if self.horizon != other.horizon {
            return Err(OracleError::SupportMismatch {
                left: self.horizon,
                right: other.horizon,
            });
        }
        let mut l1 = T::zero();
        for (seq, &a) in &self.probs {
            l1 = l1 + (a - other.prob(seq)).abs();
        }
        for (seq, &b) in &other.probs {
            if !self.probs.contains_key(seq) {
                l1 = l1 + b.abs();
            }
        }
        Ok(l1 / T::lit(2.0))
    }
}

pub fn tv_distance<T: Probability, D: TotalVariation<T>>(a: &D, b: &D) -> Result<T, OracleError> {
    a.tv_distance(b)
}

fn guard(vocab: usize, horizon: usize) -> Result<(), OracleError> {
    let size = (vocab as u128).checked_pow(horizon as u32);
    match size {
        Some(n) if n <= ENUMERATION_LIMIT => Ok(()),
        _ => Err(OracleError::TooLarge { vocab, horizon }),
    }
}

/// Law of the next `horizon` tokens under plain autoregressive sampling.
pub fn exact_ar_distribution<T: Probability>(
    model: &(impl SequenceModel<T> + ?Sized),
    prefix: &[TokenId],
    horizon: usize,
) -> Result<SequenceDistribution<T>, OracleError> {
    guard(model.vocab_size(), horizon)?;
    model.check_prefix(prefix)?;
    let mut out = SequenceDistribution::empty(horizon);
    let mut context = prefix.to_vec();
    ar_walk(model, prefix.len(), horizon, &mut context, T::one(), &mut out)?;
    Ok(out)
}

fn ar_walk<T: Probability>(
    model: &(impl SequenceModel<T> + ?Sized),
    start: usize,
    horizon: usize,
    context: &mut Vec<TokenId>,
    mass: T,
    out: &mut SequenceDistribution<T>,
) -> Result<(), OracleError> {
    if context.len() - start == horizon {
        out.add(&context[start..], mass);
        return Ok(());
    }
    let dist = model.next_distribution(context)?;
    for (t, p) in dist.support() {
        context.push(t);
        ar_walk(model, start, horizon, context, mass * p, out)?;
        context.pop();
    }
    Ok(())
}

/// Probability that a drafted token is accepted, averaged over the draft:
/// `Σ_x p(x) · min(1, min(1, q(x)/p(x)) + β)`.
pub fn analytic_acceptance_prob<T: Probability>(q: &Distribution<T>, p: &Distribution<T>, beta: T) -> T {
    p.support()
        .map(|(x, px)| px * acceptance_threshold(q.prob(x), px, beta).min(T::one()))
        .sum()
}

/// Exact law of the token emitted at one position: accepted drafts plus the
/// residual branch weighted by the rejection probability.
pub fn step_emission_distribution<T: Probability>(
    q: &Distribution<T>,
    p: &Distribution<T>,
    beta: T,
) -> Result<Distribution<T>, OracleError> {
    step_emission_distribution_with(q, p, beta, residual_distribution)
}

pub fn step_emission_distribution_with<T: Probability>(
    q: &Distribution<T>,
    p: &Distribution<T>,
    beta: T,
    residual: ResidualRule<T>,
) -> Result<Distribution<T>, OracleError> {
    if q.len() != p.len() {
        return Err(OracleError::SupportMismatch {
            left: q.len(),
            right: p.len(),
        });
    }
    let mut out = vec![T::zero(); q.len()];
    let mut reject = T::zero();
    for (x, px) in p.support() {
        let a = acceptance_threshold(q.prob(x), px, beta).min(T::one());
        out[x.index()] = px * a;
        reject = reject + px * (T::one() - a);
    }
    if reject > T::zero() {
        let res = residual(q, p);
        for (slot, &r) in out.iter_mut().zip(res.dist.probs()) {
            *slot = *slot + reject * r;
        }
    }
    Ok(Distribution::new(out).map_err(ModelError::from)?)
}

/// Exact law of the first `horizon` tokens emitted by the speculative decoder.
pub fn exact_ssd_distribution<T: Probability>(
    target: &(impl SequenceModel<T> + ?Sized),
    draft: &(impl SequenceModel<T> + ?Sized),
    prefix: &[TokenId],
    config: &SsdConfig,
    horizon: usize,
) -> Result<SequenceDistribution<T>, OracleError> {
    exact_ssd_distribution_with(target, draft, prefix, config, horizon, residual_distribution)
}

/// [`exact_ssd_distribution`] for a decoder using `residual` after rejections.
pub fn exact_ssd_distribution_with<T: Probability>(
    target: &(impl SequenceModel<T> + ?Sized),
    draft: &(impl SequenceModel<T> + ?Sized),
    prefix: &[TokenId],
    config: &SsdConfig,
    horizon: usize,
    residual: ResidualRule<T>,
) -> Result<SequenceDistribution<T>, OracleError> {
    config.validate()?;
    let vocab = check_same_vocab(target, draft)?;
    guard(vocab, horizon)?;
    target.check_prefix(prefix)?;
    if horizon > config.target_len {
        return Err(OracleError::HorizonTooLong {
            horizon,
            target_len: config.target_len,
        });
    }
    let walker = SsdWalker {
        target,
        draft,
        start: prefix.len(),
        horizon,
        draft_len: config.draft_len,
        beta: T::lit(config.beta),
        residual,
    };
    let mut out = SequenceDistribution::empty(horizon);
    let mut context = prefix.to_vec();
    walker.walk(&mut context, 0, T::one(), &mut out)?;
    Ok(out)
}

struct SsdWalker<'a, T: Probability, Mt: ?Sized, Md: ?Sized> {
    target: &'a Mt,
    draft: &'a Md,
    start: usize,
    horizon: usize,
    draft_len: usize,
    beta: T,
    residual: ResidualRule<T>,
}

impl<T, Mt, Md> SsdWalker<'_, T, Mt, Md>
where
    T: Probability,
    Mt: SequenceModel<T> + ?Sized,
    Md: SequenceModel<T> + ?Sized,
{
    /// `position` is the index within the current cycle's draft. Once the
    /// horizon is filled, nothing later can change the first `horizon` tokens,
    /// so the remaining branch mass lands on the current sequence.
    fn walk(
        &self,
        context: &mut Vec<TokenId>,
        position: usize,
        mass: T,
        out: &mut SequenceDistribution<T>,
    ) -> Result<(), OracleError> {
        if context.len() - self.start >= self.horizon {
            out.add(&context[self.start..self.start + self.horizon], mass);
            return Ok(());
        }
        let q = self.target.next_distribution(context)?;
        if position == self.draft_len {
            return self.emit_and_restart(context, &q, mass, out);
        }
        let p = self.draft.next_distribution(context)?;
        let mut reject = T::zero();
        for (x, px) in p.support() {
            let a = acceptance_threshold(q.prob(x), px, self.beta).min(T::one());
            reject = reject + px * (T::one() - a);
            let keep = px * a;
            if keep > T::zero() {
                context.push(x);
                self.walk(context, position + 1, mass * keep, out)?;
                context.pop();
            }
        }
        if reject > T::zero() {
            let res = (self.residual)(&q, &p);
            self.emit_and_restart(context, &res.dist, mass * reject, out)?;
        }
        Ok(())
    }

    fn emit_and_restart(
        &self,
        context: &mut Vec<TokenId>,
        law: &Distribution<T>,
        mass: T,
        out: &mut SequenceDistribution<T>,
    ) -> Result<(), OracleError> {
        for (y, py) in law.support() {
            context.push(y);
            self.walk(context, 0, mass * py, out)?;
            context.pop();
        }
        Ok(())
    }
}
