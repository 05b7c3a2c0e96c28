use std::fmt::Write as _;
use std::path::Path;

use super::{ModelError, SequenceModel, TokenId};
use crate::scalar::Probability;

/// Training sequences over a fixed vocabulary.
///
/// Text form: a `vocab=<V>` header line, then one sequence per line as
/// whitespace-separated decimal token ids. Blank lines and `#` comments are
/// ignored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    vocab: usize,
    sequences: Vec<Vec<TokenId>>,
}

impl Corpus {
    pub fn new(vocab: usize, sequences: Vec<Vec<TokenId>>) -> Result<Self, ModelError> {
        if vocab == 0 {
            return Err(ModelError::InvalidArgument("vocabulary must be non-empty".into()));
        }
        for seq in &sequences {
            if let Some(t) = seq.iter().find(|t| t.index() >= vocab) {
                return Err(ModelError::VocabularyMismatch { token: t.0, vocab });
            }
        }
        Ok(Self { vocab, sequences })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab
    }

    pub fn sequences(&self) -> &[Vec<TokenId>] {
        &self.sequences
    }

    pub fn token_count(&self) -> usize {
        self.sequences.iter().map(Vec::len).sum()
    }

    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let mut vocab = None;
        let mut sequences = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let Some(v) = vocab else {
                let value = body
                    .strip_prefix("vocab")
                    .and_then(|rest| rest.trim_start().strip_prefix('='))
                    .ok_or_else(|| ModelError::Parse {
                        line,
                        message: format!("expected `vocab=<V>` header, found `{body}`"),
                    })?;
                let v: usize = value.trim().parse().map_err(|_| ModelError::Parse {
                    line,
                    message: format!("bad vocabulary size `{}`", value.trim()),
                })?;
                if v == 0 {
                    return Err(ModelError::Parse {
                        line,
                        message: "vocabulary size must be positive".into(),
                    });
                }
                vocab = Some(v);
                continue;
            };
            let seq = body
                .split_whitespace()
                .map(|tok| {
                    let id: u32 = tok.parse().map_err(|_| ModelError::Parse {
                        line,
                        message: format!("bad token id `{tok}`"),
                    })?;
                    if id as usize >= v {
                        return Err(ModelError::Parse {
                            line,
                            message: format!("token {id} outside vocabulary of size {v}"),
                        });
                    }
                    Ok(TokenId(id))
                })
                .collect::<Result<Vec<_>, _>>()?;
            sequences.push(seq);
        }
        let vocab = vocab.ok_or(ModelError::Parse {
            line: 1,
            message: "missing `vocab=<V>` header".into(),
        })?;
        Self::new(vocab, sequences)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("vocab={}\n", self.vocab);
        for seq in &self.sequences {
            let mut first = true;
            for t in seq {
                if !first {
                    out.push(' ');
                }
                first = false;
                let _ = write!(out, "{t}");
            }
            out.push('\n');
        }
        out
    }
}

/// Mean negative log-likelihood per token, in nats.
///
/// Each token is scored under the model's conditional given the tokens before
/// it in its own sequence.
pub fn cross_entropy<T: Probability>(
    model: &(impl SequenceModel<T> + ?Sized),
    corpus: &Corpus,
) -> Result<T, ModelError> {
    if corpus.vocab_size() != model.vocab_size() {
        return Err(ModelError::VocabularySizeMismatch {
            left: model.vocab_size(),
            right: corpus.vocab_size(),
        });
    }
    let n = corpus.token_count();
    if n == 0 {
        return Err(ModelError::EmptyCorpus);
    }
    let mut total = T::zero();
    for (sequence, seq) in corpus.sequences().iter().enumerate() {
        for (position, &token) in seq.iter().enumerate() {
            let p = model.next_distribution(&seq[..position])?.prob(token);
            if !(p > T::zero()) {
                return Err(ModelError::Divergence {
                    sequence,
                    position,
                    token: token.0,
                });
            }
            total = total - p.ln();
        }
    }
    Ok(total / T::from_usize(n).expect("token count representable"))
}
