//! Speculative decoding with a tolerance factor.
//!
//! One cycle drafts `L_d` tokens from the cheap model, scores every drafted
//! position with the target model in one verification step, then walks the
//! draft left to right. Token `x_i` is kept when `r_i < min(1, q(x_i)/p(x_i)) + β`
//! with `r_i` uniform. The first rejected position is replaced by a draw from
//! `normalize(max(0, q_i - p_i))` and ends the cycle. If every drafted token is
//! kept, one bonus token is drawn from the target's conditional after the
//! whole draft.
//!
//! At `β = 0` the output law is exactly the target's autoregressive law; larger
//! `β` trades that exactness for a higher acceptance rate.
//!
//! Uniform draws are consumed in a fixed order per cycle: `L_d` for drafting,
//! one per acceptance test (none after a rejection), then one for the
//! resampled or bonus token.

use thiserror::Error;

use crate::models::{check_same_vocab, sample_token, Distribution, ModelError, SequenceModel, TokenId};
use crate::rng::{RandomStream, UniformSource};
use crate::scalar::Probability;

#[derive(Debug, Error)]
pub enum SsdError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Decoding hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsdConfig {
    /// Tokens drafted per cycle (`L_d`).
    pub draft_len: usize,
    /// Tokens to emit in total (`L_t`).
    pub target_len: usize,
    /// Tolerance factor added to the acceptance threshold.
    pub beta: f64,
    pub seed: u64,
}

impl SsdConfig {
    pub fn new(draft_len: usize, target_len: usize, beta: f64, seed: u64) -> Result<Self, SsdError> {
        let config = Self {
            draft_len,
            target_len,
            beta,
            seed,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), SsdError> {
        if self.draft_len < 1 {
            return Err(SsdError::InvalidConfig("draft_len must be at least 1".into()));
        }
        if self.target_len < 1 {
            return Err(SsdError::InvalidConfig("target_len must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(SsdError::InvalidConfig(format!(
                "beta must lie in [0, 1], got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

/// A drafted token with the probability each model assigns to it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DraftedToken<T = f64> {
    pub token: TokenId,
    /// Draft-model probability `p(x)`.
    pub p_prob: T,
    /// Target-model probability `q(x)`.
    pub q_prob: T,
}

/// Record of one draft/verify cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleTrace<T = f64> {
    /// Length of the full context (prompt plus emitted tokens) when the cycle began.
    pub context_len: usize,
    pub drafted: Vec<DraftedToken<T>>,
    /// One flag per acceptance test; a `false` can only be last.
    pub accept_flags: Vec<bool>,
    /// The `r_i` used by each acceptance test.
    pub uniform_draws: Vec<f64>,
    /// Position and replacement token of the rejected draft.
    pub resampled: Option<(usize, TokenId)>,
    pub bonus: Option<TokenId>,
    /// The residual was empty and the replacement came from `q`.
    pub residual_fallback: bool,
}

impl<T: Probability> CycleTrace<T> {
    pub fn accepted(&self) -> usize {
        self.accept_flags.iter().take_while(|&&a| a).count()
    }

    /// Tokens this cycle appends to the context, in order.
    pub fn emitted(&self) -> Vec<TokenId> {
        let mut out: Vec<TokenId> = self.drafted[..self.accepted()].iter().map(|d| d.token).collect();
        out.extend(self.resampled.map(|(_, t)| t));
        out.extend(self.bonus);
        out
    }

    pub fn emitted_len(&self) -> usize {
        self.accepted() + usize::from(self.resampled.is_some()) + usize::from(self.bonus.is_some())
    }

    /// Structural invariants of a cycle with draft length `draft_len`.
    pub fn check_structure(&self, draft_len: usize) -> Result<(), SsdError> {
        let fail = |msg: String| Err(SsdError::InvariantViolation(msg));
        if self.drafted.len() != draft_len {
            return fail(format!("{} drafted tokens, expected {draft_len}", self.drafted.len()));
        }
        if self.accept_flags.is_empty() || self.accept_flags.len() > draft_len {
            return fail(format!(
                "{} acceptance tests for draft length {draft_len}",
                self.accept_flags.len()
            ));
        }
        if self.uniform_draws.len() != self.accept_flags.len() {
            return fail("one uniform draw per acceptance test".into());
        }
        let rejections = self.accept_flags.iter().filter(|&&a| !a).count();
        let last_rejected = self.accept_flags.last() == Some(&false);
        if rejections > 1 || (rejections == 1 && !last_rejected) {
            return fail("a rejection must terminate the acceptance flags".into());
        }
        match (rejections, self.resampled, self.bonus) {
            (1, Some((pos, _)), None) if pos + 1 == self.accept_flags.len() => {}
            (0, None, Some(_)) if self.accept_flags.len() == draft_len => {}
            _ => return fail("resampled iff a rejection, bonus iff all accepted".into()),
        }
        if let Some(d) = self.drafted.iter().find(|d| !(d.p_prob > T::zero())) {
            return fail(format!("drafted token {} has draft probability {}", d.token, d.p_prob));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DecodeCounts {
    pub draft_tokens_generated: usize,
    pub target_calls: usize,
    pub accepted_tokens: usize,
    pub resampled_tokens: usize,
    pub bonus_tokens: usize,
    pub residual_fallbacks: usize,
}

impl DecodeCounts {
    /// Tokens appended before truncation to `L_t`.
    pub fn emitted_tokens(&self) -> usize {
        self.accepted_tokens + self.resampled_tokens + self.bonus_tokens
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult<T = f64> {
    /// Exactly `L_t` new tokens.
    pub tokens: Vec<TokenId>,
    pub cycles: Vec<CycleTrace<T>>,
    pub counts: DecodeCounts,
}

impl<T: Probability> DecodeResult<T> {
    /// Re-derives every recorded probability from the models and checks the
    /// structural invariants of each cycle and of the whole run.
    pub fn replay(
        &self,
        target: &(impl SequenceModel<T> + ?Sized),
        draft: &(impl SequenceModel<T> + ?Sized),
        prefix: &[TokenId],
        config: &SsdConfig,
    ) -> Result<(), SsdError> {
        let mut context = prefix.to_vec();
        let mut counts = DecodeCounts::default();
        for (n, cycle) in self.cycles.iter().enumerate() {
            cycle.check_structure(config.draft_len)?;
            if cycle.context_len != context.len() {
                return Err(SsdError::InvariantViolation(format!(
                    "cycle {n} starts at context length {}, replay has {}",
                    cycle.context_len,
                    context.len()
                )));
            }
            let mut ext = context.clone();
            for (i, d) in cycle.drafted.iter().enumerate() {
                let p = draft.next_distribution(&ext)?.prob(d.token);
                let q = target.next_distribution(&ext)?.prob(d.token);
                if p == d.p_prob && q == d.q_prob {
                    ext.push(d.token);
                } else {
                    return Err(SsdError::InvariantViolation(format!(
                        "cycle {n} position {i}: recorded (p, q) = ({}, {}), replay gives ({p}, {q})",
                        d.p_prob, d.q_prob
                    )));
                }
            }
            counts.draft_tokens_generated += cycle.drafted.len();
            counts.target_calls += 1;
            counts.accepted_tokens += cycle.accepted();
            counts.resampled_tokens += usize::from(cycle.resampled.is_some());
            counts.bonus_tokens += usize::from(cycle.bonus.is_some());
            counts.residual_fallbacks += usize::from(cycle.residual_fallback);
            context.extend(cycle.emitted());
        }
        if counts != self.counts {
            return Err(SsdError::InvariantViolation(format!(
                "counts {:?} do not match replay {counts:?}",
                self.counts
            )));
        }
        let emitted = &context[prefix.len()..];
        if emitted.len() < config.target_len || self.tokens[..] != emitted[..config.target_len] {
            return Err(SsdError::InvariantViolation(
                "tokens are not the truncated emission".into(),
            ));
        }
        if emitted.len() - cycle_last_len(&self.cycles) >= config.target_len {
            return Err(SsdError::InvariantViolation("decoding continued past L_t".into()));
        }
        Ok(())
    }
}

fn cycle_last_len<T: Probability>(cycles: &[CycleTrace<T>]) -> usize {
    cycles.last().map_or(0, CycleTrace::emitted_len)
}

/// Draft tokens together with the draft conditionals they were sampled from.
#[derive(Debug, Clone, PartialEq)]
pub struct Draft<T = f64> {
    pub tokens: Vec<TokenId>,
    pub distributions: Vec<Distribution<T>>,
}

/// Samples `draft_len` tokens autoregressively from `draft`, one draw each.
pub fn draft_generate<T: Probability>(
    draft: &(impl SequenceModel<T> + ?Sized),
    prefix: &[TokenId],
    draft_len: usize,
    rng: &mut impl UniformSource,
) -> Result<Draft<T>, ModelError> {
    let mut context = Vec::with_capacity(prefix.len() + draft_len);
    context.extend_from_slice(prefix);
    let mut distributions = Vec::with_capacity(draft_len);
    for _ in 0..draft_len {
        let dist = draft.next_distribution(&context)?;
        context.push(sample_token(&dist, rng));
        distributions.push(dist);
    }
    Ok(Draft {
        tokens: context.split_off(prefix.len()),
        distributions,
    })
}

/// Target conditionals at every drafted position plus the one after the
/// draft: `L_d + 1` distributions, the `i`-th conditioned on the first `i`
/// draft tokens. Billed as a single target call.
pub fn target_verify<T: Probability>(
    target: &(impl SequenceModel<T> + ?Sized),
    prefix: &[TokenId],
    draft_tokens: &[TokenId],
) -> Result<Vec<Distribution<T>>, ModelError> {
    let mut context = Vec::with_capacity(prefix.len() + draft_tokens.len());
    context.extend_from_slice(prefix);
    let mut out = Vec::with_capacity(draft_tokens.len() + 1);
    out.push(target.next_distribution(&context)?);
    for &t in draft_tokens {
        context.push(t);
        out.push(target.next_distribution(&context)?);
    }
    Ok(out)
}

/// `min(1, q/p) + β`.
#[inline]
pub fn acceptance_threshold<T: Probability>(q_at_x: T, p_at_x: T, beta: T) -> T {
    (q_at_x / p_at_x).min(T::one()) + beta
}

/// Tolerance-relaxed acceptance test: `r < min(1, q/p) + β`, strict.
pub fn accept_token<T: Probability>(q_at_x: T, p_at_x: T, beta: T, r: f64) -> Result<bool, SsdError> {
    if !(p_at_x > T::zero()) {
        return Err(SsdError::InvariantViolation(format!(
            "drafted token has draft probability {p_at_x}"
        )));
    }
    Ok(T::lit(r) < acceptance_threshold(q_at_x, p_at_x, beta))
}

/// Outcome of building the replacement distribution after a rejection.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual<T = f64> {
    pub dist: Distribution<T>,
    /// `max(0, q - p)` had (numerically) no mass, so `dist` is `q`.
    pub fell_back: bool,
}

/// Replacement-token law after a rejection.
pub type ResidualRule<T> = fn(&Distribution<T>, &Distribution<T>) -> Residual<T>;

/// `normalize(max(0, q - p))`, or `q` itself when the residual mass is below
/// [`Probability::residual_floor`].
pub fn residual_distribution<T: Probability>(q: &Distribution<T>, p: &Distribution<T>) -> Residual<T> {
    let diff: Vec<T> = q
        .probs()
        .iter()
        .zip(p.probs())
        .map(|(&a, &b)| (a - b).max(T::zero()))
        .collect();
    let mass: T = diff.iter().copied().sum();
    if mass < T::residual_floor() {
        return Residual {
            dist: q.clone(),
            fell_back: true,
        };
    }
    match Distribution::normalize(diff) {
        Ok(dist) => Residual { dist, fell_back: false },
        Err(_) => Residual {
            dist: q.clone(),
            fell_back: true,
        },
    }
}

/// One draft/verify/accept cycle starting from `context`.
pub fn ssd_cycle<T: Probability>(
    target: &(impl SequenceModel<T> + ?Sized),
    draft: &(impl SequenceModel<T> + ?Sized),
    context: &[TokenId],
    config: &SsdConfig,
    rng: &mut impl UniformSource,
) -> Result<CycleTrace<T>, SsdError> {
    ssd_cycle_with(target, draft, context, config, rng, residual_distribution)
}

/// [`ssd_cycle`] with a caller-supplied residual rule.
pub fn ssd_cycle_with<T: Probability>(
    target: &(impl SequenceModel<T> + ?Sized),
    draft: &(impl SequenceModel<T> + ?Sized),
    context: &[TokenId],
    config: &SsdConfig,
    rng: &mut impl UniformSource,
    residual: ResidualRule<T>,
) -> Result<CycleTrace<T>, SsdError> {
    config.validate()?;
    let beta = T::lit(config.beta);
    let Draft {
        tokens,
        distributions: p_dists,
    } = draft_generate(draft, context, config.draft_len, rng)?;
    let q_dists = target_verify(target, context, &tokens)?;

    let drafted: Vec<DraftedToken<T>> = tokens
        .iter()
        .zip(p_dists.iter().zip(&q_dists))
        .map(|(&token, (p, q))| DraftedToken {
            token,
            p_prob: p.prob(token),
            q_prob: q.prob(token),
        })
        .collect();

    let mut trace = CycleTrace {
        context_len: context.len(),
        drafted,
        accept_flags: Vec::with_capacity(config.draft_len),
        uniform_draws: Vec::with_capacity(config.draft_len),
        resampled: None,
        bonus: None,
        residual_fallback: false,
    };

    for i in 0..config.draft_len {
        let d = trace.drafted[i];
        let r = rng.next_uniform();
        trace.uniform_draws.push(r);
        let accepted = accept_token(d.q_prob, d.p_prob, beta, r)?;
        trace.accept_flags.push(accepted);
        if !accepted {
            let res = residual(&q_dists[i], &p_dists[i]);
            trace.residual_fallback = res.fell_back;
            trace.resampled = Some((i, sample_token(&res.dist, rng)));
            return Ok(trace);
        }
    }
    trace.bonus = Some(sample_token(&q_dists[config.draft_len], rng));
    Ok(trace)
}

/// Runs cycles until at least `L_t` tokens have been emitted and returns the
/// first `L_t` of them with the full trace.
pub fn ssd_decode<T: Probability>(
    target: &(impl SequenceModel<T> + ?Sized),
    draft: &(impl SequenceModel<T> + ?Sized),
    prefix: &[TokenId],
    config: &SsdConfig,
    rng: &mut impl UniformSource,
) -> Result<DecodeResult<T>, SsdError> {
    ssd_decode_with(target, draft, prefix, config, rng, residual_distribution)
}

/// [`ssd_decode`] driven by a fresh stream seeded with `config.seed`.
pub fn ssd_decode_seeded<T: Probability>(
    target: &(impl SequenceModel<T> + ?Sized),
    draft: &(impl SequenceModel<T> + ?Sized),
    prefix: &[TokenId],
    config: &SsdConfig,
) -> Result<DecodeResult<T>, SsdError> {
    let mut rng = RandomStream::from_seed(config.seed);
    ssd_decode(target, draft, prefix, config, &mut rng)
}

/// [`ssd_decode`] with a caller-supplied residual rule.
pub fn ssd_decode_with<T: Probability>(
    target: &(impl SequenceModel<T> + ?Sized),
    draft: &(impl SequenceModel<T> + ?Sized),
    prefix: &[TokenId],
    config: &SsdConfig,
    rng: &mut impl UniformSource,
    residual: ResidualRule<T>,
) -> Result<DecodeResult<T>, SsdError> {
    config.validate()?;
    check_same_vocab(target, draft)?;
    target.check_prefix(prefix)?;

    let mut context = prefix.to_vec();
    let mut cycles = Vec::new();
    let mut counts = DecodeCounts::default();
    while context.len() - prefix.len() < config.target_len {
        let cycle = ssd_cycle_with(target, draft, &context, config, rng, residual)?;
        counts.draft_tokens_generated += cycle.drafted.len();
        counts.target_calls += 1;
        counts.accepted_tokens += cycle.accepted();
        counts.resampled_tokens += usize::from(cycle.resampled.is_some());
        counts.bonus_tokens += usize::from(cycle.bonus.is_some());
        counts.residual_fallbacks += usize::from(cycle.residual_fallback);
        context.extend(cycle.emitted());
        cycles.push(cycle);
    }
    let mut tokens = context.split_off(prefix.len());
    tokens.truncate(config.target_len);
    Ok(DecodeResult { tokens, cycles, counts })
}
