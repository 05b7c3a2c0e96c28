use super::{Distribution, ModelError, SequenceModel, TokenId};
use crate::rng::UniformSource;
use crate::scalar::Probability;

/// Inverse-CDF lookup: token `i` owns the half-open cell
/// `[F(i-1), F(i))` where `F` is the cumulative sum in ascending token order,
/// accumulated in `f64`.
///
/// A draw that lands past the accumulated total (rounding) maps to the last
/// token with positive probability.
pub fn sample_with_uniform<T: Probability>(dist: &Distribution<T>, u: f64) -> TokenId {
    let mut cumulative = 0.0f64;
    let mut last_positive = 0usize;
    for (i, &p) in dist.probs().iter().enumerate() {
        if p > T::zero() {
            last_positive = i;
            cumulative += p.as_f64();
            if u < cumulative {
                return TokenId(i as u32);
            }
        }
    }
    TokenId(last_positive as u32)
}

/// Draws one token using exactly one uniform from `rng`.
pub fn sample_token<T: Probability>(dist: &Distribution<T>, rng: &mut impl UniformSource) -> TokenId {
    let u = rng.next_uniform();
    sample_with_uniform(dist, u)
}

/// Plain autoregressive decoding: appends `target_len` tokens, one uniform draw
/// each, and returns only the new tokens.
pub fn ar_decode<T: Probability>(
    model: &(impl SequenceModel<T> + ?Sized),
    prefix: &[TokenId],
    target_len: usize,
    rng: &mut impl UniformSource,
) -> Result<Vec<TokenId>, ModelError> {
    model.check_prefix(prefix)?;
    let mut context = prefix.to_vec();
    context.reserve(target_len);
    for _ in 0..target_len {
        let dist = model.next_distribution(&context)?;
        context.push(sample_token(&dist, rng));
    }
    Ok(context.split_off(prefix.len()))
}
