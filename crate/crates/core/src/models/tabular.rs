use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use super::{Corpus, Distribution, ModelError, SequenceModel, TokenId};
use crate::scalar::Probability;

/// Pads contexts shorter than the model order. Never a valid token id.
pub const BEGIN_MARKER: u32 = u32::MAX;

/// The last `k` tokens of a prefix, front-padded with [`BEGIN_MARKER`].
pub type Context = Vec<u32>;

const FILE_MAGIC: &str = "tabular-markov v1";

fn context_of(prefix: &[TokenId], order: usize) -> Context {
    let start = prefix.len().saturating_sub(order);
    let pad = order - (prefix.len() - start);
    let mut ctx = Vec::with_capacity(order);
    ctx.extend(std::iter::repeat_n(BEGIN_MARKER, pad));
    ctx.extend(prefix[start..].iter().map(|t| t.0));
    ctx
}

/// Order-`k` Markov model with an explicit conditional table.
///
/// Contexts missing from the table fall back to the uniform distribution. With
/// zero smoothing that is not what the fitted model would say, so each such
/// lookup is counted (see [`TabularMarkovModel::fallback_count`]).
#[derive(Debug)]
pub struct TabularMarkovModel<T = f64> {
    vocab: usize,
    order: usize,
    smoothing: T,
    table: BTreeMap<Context, Distribution<T>>,
    fallbacks: AtomicU64,
}

impl<T: Probability> Clone for TabularMarkovModel<T> {
    fn clone(&self) -> Self {
        Self {
            vocab: self.vocab,
            order: self.order,
            smoothing: self.smoothing,
            table: self.table.clone(),
            fallbacks: AtomicU64::new(self.fallback_count()),
        }
    }
}

impl<T: Probability> PartialEq for TabularMarkovModel<T> {
    fn eq(&self, other: &Self) -> bool {
        self.vocab == other.vocab
            && self.order == other.order
            && self.smoothing == other.smoothing
            && self.table == other.table
    }
}

impl<T: Probability> TabularMarkovModel<T> {
    /// Builds a model from an explicit table. Every context must have length
    /// `order` and every row must cover `vocab` tokens.
    pub fn from_table(
        vocab: usize,
        order: usize,
        smoothing: T,
        table: BTreeMap<Context, Distribution<T>>,
    ) -> Result<Self, ModelError> {
        if vocab == 0 {
            return Err(ModelError::InvalidArgument("vocabulary must be non-empty".into()));
        }
        if !(smoothing.is_finite() && smoothing >= T::zero()) {
            return Err(ModelError::InvalidArgument(format!(
                "smoothing must be finite and non-negative, got {smoothing}"
            )));
        }
        for (ctx, row) in &table {
            if ctx.len() != order {
                return Err(ModelError::InvalidArgument(format!(
                    "context {ctx:?} has length {}, expected {order}",
                    ctx.len()
                )));
            }
            if let Some(&bad) = ctx.iter().find(|&&t| t != BEGIN_MARKER && t as usize >= vocab) {
                return Err(ModelError::VocabularyMismatch { token: bad, vocab });
            }
            if row.len() != vocab {
                return Err(ModelError::InvalidArgument(format!(
                    "row for context {ctx:?} has {} entries, expected {vocab}",
                    row.len()
                )));
            }
        }
        Ok(Self {
            vocab,
            order,
            smoothing,
            table,
            fallbacks: AtomicU64::new(0),
        })
    }

    /// Order-0 model with a single row.
    pub fn unigram(dist: Distribution<T>) -> Self {
        let vocab = dist.len();
        let table = BTreeMap::from([(Vec::new(), dist)]);
        Self::from_table(vocab, 0, T::zero(), table).expect("single row is consistent")
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing(&self) -> T {
        self.smoothing
    }

    pub fn table(&self) -> &BTreeMap<Context, Distribution<T>> {
        &self.table
    }

    /// Number of unsmoothed lookups that hit an unseen context.
    pub fn fallback_count(&self) -> u64 {
        self.fallbacks.load(Ordering::Relaxed)
    }

    pub fn context(&self, prefix: &[TokenId]) -> Context {
        context_of(prefix, self.order)
    }

    /// Plain-text dump that reloads bit-exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{FILE_MAGIC}");
        let _ = writeln!(out, "vocab = {}", self.vocab);
        let _ = writeln!(out, "order = {}", self.order);
        let _ = writeln!(out, "smoothing = {}", self.smoothing);
        for (ctx, row) in &self.table {
            out.push_str("row");
            for &t in ctx {
                if t == BEGIN_MARKER {
                    out.push_str(" ^");
                } else {
                    let _ = write!(out, " {t}");
                }
            }
            out.push_str(" :");
            for p in row.probs() {
                let _ = write!(out, " {p}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ModelError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

        let parse_err = |line: usize, message: String| ModelError::Parse { line, message };

        match lines.next() {
            Some((_, FILE_MAGIC)) => {}
            Some((line, other)) => return Err(parse_err(line, format!("expected `{FILE_MAGIC}`, found `{other}`"))),
            None => return Err(parse_err(1, "empty model file".into())),
        }

        let mut header = |key: &str| -> Result<(usize, String), ModelError> {
            let (line, text) = lines
                .next()
                .ok_or_else(|| parse_err(0, format!("missing `{key}` header")))?;
            let (k, v) = text
                .split_once('=')
                .ok_or_else(|| parse_err(line, format!("expected `{key} = <value>`")))?;
            if k.trim() != key {
                return Err(parse_err(line, format!("expected `{key}`, found `{}`", k.trim())));
            }
            Ok((line, v.trim().to_string()))
        };
        let (line, v) = header("vocab")?;
        let vocab: usize = v.parse().map_err(|_| parse_err(line, format!("bad vocab `{v}`")))?;
        let (line, v) = header("order")?;
        let order: usize = v.parse().map_err(|_| parse_err(line, format!("bad order `{v}`")))?;
        let (line, v) = header("smoothing")?;
        let smoothing: T = v.parse().map_err(|_| parse_err(line, format!("bad smoothing `{v}`")))?;

        let mut table = BTreeMap::new();
        for (line, text) in lines {
            let body = text
                .strip_prefix("row")
                .ok_or_else(|| parse_err(line, "expected a `row` line".into()))?;
            let (ctx_text, probs_text) = body
                .split_once(':')
                .ok_or_else(|| parse_err(line, "missing `:` separator".into()))?;
            let ctx = ctx_text
                .split_whitespace()
                .map(|t| match t {
                    "^" => Ok(BEGIN_MARKER),
                    t => t
                        .parse::<u32>()
                        .map_err(|_| parse_err(line, format!("bad context token `{t}`"))),
                })
                .collect::<Result<Context, _>>()?;
            let probs = probs_text
                .split_whitespace()
                .map(|p| {
                    p.parse::<T>()
                        .map_err(|_| parse_err(line, format!("bad probability `{p}`")))
                })
                .collect::<Result<Vec<T>, _>>()?;
            let row = Distribution::new(probs).map_err(|e| parse_err(line, e.to_string()))?;
            if table.insert(ctx, row).is_some() {
                return Err(parse_err(line, "duplicate context".into()));
            }
        }
        Self::from_table(vocab, order, smoothing, table)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

impl<T: Probability> SequenceModel<T> for TabularMarkovModel<T> {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn next_distribution(&self, prefix: &[TokenId]) -> Result<Distribution<T>, ModelError> {
        self.check_prefix(prefix)?;
        match self.table.get(&self.context(prefix)) {
            Some(row) => Ok(row.clone()),
            None => {
                if self.smoothing == T::zero() {
                    self.fallbacks.fetch_add(1, Ordering::Relaxed);
                }
                Ok(Distribution::uniform(self.vocab))
            }
        }
    }
}

fn check_smoothing<T: Probability>(alpha: T) -> Result<(), ModelError> {
    if alpha.is_finite() && alpha >= T::zero() {
        Ok(())
    } else {
        Err(ModelError::InvalidArgument(format!(
            "smoothing must be finite and non-negative, got {alpha}"
        )))
    }
}

/// Turns per-context (weighted) counts into rows `(count + α) / (total + αV)`.
fn smoothed_rows<T: Probability>(
    counts: BTreeMap<Context, (Vec<T>, T)>,
    alpha: T,
    vocab: usize,
) -> Result<BTreeMap<Context, Distribution<T>>, ModelError> {
    let v = T::from_usize(vocab).expect("vocab representable");
    counts
        .into_iter()
        .map(|(ctx, (row, total))| {
            let denom = total + alpha * v;
            let probs = row.into_iter().map(|c| (c + alpha) / denom).collect();
            Ok((ctx, Distribution::new(probs)?))
        })
        .collect()
}

/// Maximum-likelihood fit with additive smoothing.
///
/// Every position of every sequence is a training event whose context is the
/// `order` preceding tokens (front-padded). For each observed context the
/// conditional is `(count + α) / (total + αV)`; at `α = 0` this is the exact
/// minimizer of the corpus cross-entropy.
pub fn fit_tabular<T: Probability>(
    corpus: &Corpus,
    order: usize,
    smoothing: T,
) -> Result<TabularMarkovModel<T>, ModelError> {
    check_smoothing(smoothing)?;
    if corpus.token_count() == 0 {
        return Err(ModelError::EmptyCorpus);
    }
    let vocab = corpus.vocab_size();
    let mut counts: BTreeMap<Context, (Vec<T>, T)> = BTreeMap::new();
    for seq in corpus.sequences() {
        for (pos, token) in seq.iter().enumerate() {
            let entry = counts
                .entry(context_of(&seq[..pos], order))
                .or_insert_with(|| (vec![T::zero(); vocab], T::zero()));
            entry.0[token.index()] = entry.0[token.index()] + T::one();
            entry.1 = entry.1 + T::one();
        }
    }
    let table = smoothed_rows(counts, smoothing, vocab)?;
    TabularMarkovModel::from_table(vocab, order, smoothing, table)
}

/// Coarsens `target` to a shorter context.
///
/// For each length-`new_order` context, the draft conditional is the
/// occurrence-weighted average of the target's conditionals over the positions
/// of `reference` that have that draft context, then smoothed with
/// `extra_smoothing` as if the averaged mass were counts. Positions whose draft
/// context is complete but whose target context is still padded are skipped:
/// they do not extend the draft context with real tokens.
pub fn derive_draft<T: Probability>(
    target: &TabularMarkovModel<T>,
    reference: &Corpus,
    new_order: usize,
    extra_smoothing: T,
) -> Result<TabularMarkovModel<T>, ModelError> {
    check_smoothing(extra_smoothing)?;
    if new_order >= target.order() {
        return Err(ModelError::InvalidArgument(format!(
            "draft order {new_order} must be below target order {}",
            target.order()
        )));
    }
    if reference.vocab_size() != target.vocab_size() {
        return Err(ModelError::VocabularySizeMismatch {
            left: target.vocab_size(),
            right: reference.vocab_size(),
        });
    }
    if reference.token_count() == 0 {
        return Err(ModelError::EmptyCorpus);
    }
    let vocab = target.vocab_size();
    let mut mass: BTreeMap<Context, (Vec<T>, T)> = BTreeMap::new();
    for seq in reference.sequences() {
        for pos in 0..seq.len() {
            if pos >= new_order && pos < target.order() {
                continue;
            }
            let history = &seq[..pos];
            let q = target.next_distribution(history)?;
            let entry = mass
                .entry(context_of(history, new_order))
                .or_insert_with(|| (vec![T::zero(); vocab], T::zero()));
            for (acc, &p) in entry.0.iter_mut().zip(q.probs()) {
                *acc = *acc + p;
            }
            entry.1 = entry.1 + T::one();
        }
    }
    let table = smoothed_rows(mass, extra_smoothing, vocab)?;
    TabularMarkovModel::from_table(vocab, new_order, extra_smoothing, table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::tokens;

    fn corpus(vocab: usize, seqs: &[&[u32]]) -> Corpus {
        Corpus::new(vocab, seqs.iter().map(|s| tokens(s)).collect()).unwrap()
    }

    #[test]
    fn context_padding() {
        assert_eq!(context_of(&tokens(&[4, 5, 6]), 2), vec![5, 6]);
        assert_eq!(context_of(&tokens(&[6]), 3), vec![BEGIN_MARKER, BEGIN_MARKER, 6]);
        assert_eq!(context_of(&[], 0), Vec::<u32>::new());
    }

    #[test]
    fn order_zero_ignores_context() {
        let m = TabularMarkovModel::unigram(Distribution::<f64>::new(vec![0.2, 0.3, 0.5]).unwrap());
        for prefix in [tokens(&[]), tokens(&[0, 2, 1])] {
            assert_eq!(m.next_distribution(&prefix).unwrap().probs(), &[0.2, 0.3, 0.5]);
        }
    }

    #[test]
    fn order_one_alternation_counts() {
        let m = fit_tabular::<f64>(&corpus(2, &[&[0, 1, 0, 1]]), 1, 0.0).unwrap();
        assert_eq!(m.next_distribution(&tokens(&[1, 0])).unwrap().probs(), &[0.0, 1.0]);
        assert_eq!(m.next_distribution(&tokens(&[0, 1])).unwrap().probs(), &[1.0, 0.0]);

        let m = fit_tabular::<f64>(&corpus(2, &[&[0, 1, 0, 1, 0]]), 1, 0.0).unwrap();
        assert_eq!(m.next_distribution(&tokens(&[0])).unwrap().prob(TokenId(1)), 1.0);
        assert_eq!(m.next_distribution(&tokens(&[1])).unwrap().prob(TokenId(0)), 1.0);
    }

    #[test]
    fn single_symbol_corpus_is_point_mass() {
        let m = fit_tabular::<f64>(&corpus(2, &[&[0, 0, 0]]), 0, 0.0).unwrap();
        assert_eq!(m.next_distribution(&[]).unwrap().probs(), &[1.0, 0.0]);
    }

    #[test]
    fn smoothing_formula_and_unseen_contexts() {
        // context 0 is followed by 1 twice: (2 + 1) / (2 + 2), (0 + 1) / (2 + 2)
        let m = fit_tabular::<f64>(&corpus(2, &[&[0, 1, 0, 1]]), 1, 1.0).unwrap();
        assert_eq!(m.next_distribution(&tokens(&[0])).unwrap().probs(), &[0.25, 0.75]);

        let m = fit_tabular::<f64>(&corpus(3, &[&[0, 0, 0]]), 1, 1.0).unwrap();
        let d = m.next_distribution(&tokens(&[2])).unwrap();
        assert_eq!(d, Distribution::uniform(3));
        assert_eq!(m.fallback_count(), 0);

        let m = fit_tabular::<f64>(&corpus(2, &[&[0, 0, 0]]), 1, 1.0).unwrap();
        assert_eq!(m.next_distribution(&tokens(&[1])).unwrap().probs(), &[0.5, 0.5]);
    }

    #[test]
    fn unsmoothed_fallback_is_counted() {
        let m = fit_tabular::<f64>(&corpus(3, &[&[0, 0, 0]]), 1, 0.0).unwrap();
        assert_eq!(m.next_distribution(&tokens(&[2])).unwrap(), Distribution::uniform(3));
        assert_eq!(m.next_distribution(&tokens(&[0])).unwrap().probs(), &[1.0, 0.0, 0.0]);
        assert_eq!(m.fallback_count(), 1);
    }

    #[test]
    fn fit_errors() {
        let empty = Corpus::new(2, vec![]).unwrap();
        assert!(matches!(
            fit_tabular::<f64>(&empty, 1, 0.0),
            Err(ModelError::EmptyCorpus)
        ));
        let c = corpus(2, &[&[0]]);
        assert!(fit_tabular::<f64>(&c, 1, -1.0).is_err());
    }

    #[test]
    fn derive_constant_conditionals() {
        let row = Distribution::<f64>::new(vec![0.3, 0.7]).unwrap();
        let table = BTreeMap::from([
            (vec![BEGIN_MARKER], row.clone()),
            (vec![0], row.clone()),
            (vec![1], row.clone()),
        ]);
        let target = TabularMarkovModel::from_table(2, 1, 0.0, table).unwrap();
        let draft = derive_draft(&target, &corpus(2, &[&[0, 1, 1, 0, 1]]), 0, 0.0).unwrap();
        let d = draft.next_distribution(&[]).unwrap();
        for (a, b) in d.probs().iter().zip(row.probs()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn derive_marginalizes_to_unigram_after_first_position() {
        let c = corpus(2, &[&[0, 1, 0, 1]]);
        let target = fit_tabular::<f64>(&c, 1, 0.0).unwrap();
        let draft = derive_draft(&target, &c, 0, 0.0).unwrap();
        let d = draft.next_distribution(&tokens(&[1])).unwrap();
        assert!((d.probs()[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((d.probs()[1] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(draft.order(), 0);
    }

    #[test]
    fn derive_requires_shorter_order() {
        let c = corpus(2, &[&[0, 1, 0, 1]]);
        let target = fit_tabular::<f64>(&c, 1, 0.0).unwrap();
        assert!(matches!(
            derive_draft(&target, &c, 1, 0.0),
            Err(ModelError::InvalidArgument(_))
        ));
    }

    #[test]
    fn text_round_trip_is_exact() {
        let c = corpus(3, &[&[0, 1, 2, 2, 1, 0, 0, 2], &[2, 2, 1]]);
        let m = fit_tabular::<f64>(&c, 2, 0.37).unwrap();
        let back = TabularMarkovModel::<f64>::from_text(&m.to_text()).unwrap();
        assert_eq!(m, back);
        for (ctx, row) in m.table() {
            let b = &back.table()[ctx];
            for (x, y) in row.probs().iter().zip(b.probs()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        let m32 = fit_tabular::<f32>(&c, 1, 0.1).unwrap();
        assert_eq!(TabularMarkovModel::<f32>::from_text(&m32.to_text()).unwrap(), m32);
    }

    #[test]
    fn malformed_model_text_reports_line() {
        let text = "tabular-markov v1\nvocab = 2\norder = 0\nsmoothing = 0\nrow : 0.5 x\n";
        match TabularMarkovModel::<f64>::from_text(text) {
            Err(ModelError::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("unexpected {other:?}"),
        }
    }
}
