//! Flat `key = value` run configuration.
//!
//! ```text
//! # models: a file, a corpus to fit, or (draft only) a coarsening of the target
//! target_corpus = corpus.txt
//! target_order = 2
//! draft_order = 0
//! prefix = 0 1
//! draft_len = 3
//! beta = 0.2
//! betas = 0, 0.1, 0.2
//! ```
//!
//! Relative paths resolve against the directory holding the file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context as _, Result};
use ssd_core::bench::CostModel;
use ssd_core::models::{derive_draft, fit_tabular, Corpus};
use ssd_core::{SequenceModel as _, SsdConfig, TabularModel, TokenId};

use crate::UsageError;

const KEYS: &[&str] = &[
    "target_model",
    "target_corpus",
    "target_order",
    "target_smoothing",
    "draft_model",
    "draft_corpus",
    "draft_reference",
    "draft_order",
    "draft_smoothing",
    "draft_same_as_target",
    "prefix",
    "draft_len",
    "target_len",
    "beta",
    "seed",
    "c_draft",
    "c_target",
    "c_target_serial",
    "token_duration",
    "betas",
    "draft_lens",
    "trials",
    "out",
];

#[derive(Debug, Clone, PartialEq)]
pub enum TargetSource {
    File(PathBuf),
    Fit {
        corpus: PathBuf,
        order: usize,
        smoothing: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum DraftSource {
    File(PathBuf),
    Fit {
        corpus: PathBuf,
        order: usize,
        smoothing: f64,
    },
    /// Coarsen the target against a reference corpus.
    Derive {
        reference: PathBuf,
        order: usize,
        smoothing: f64,
    },
    SameAsTarget,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub target: TargetSource,
    pub draft: DraftSource,
    pub prefix: Vec<TokenId>,
    pub ssd: SsdConfig,
    pub cost: CostModel,
    pub betas: Vec<f64>,
    pub draft_lens: Vec<usize>,
    pub trials: usize,
    pub out: Option<PathBuf>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub beta: Option<f64>,
    pub draft_len: Option<usize>,
    pub target_len: Option<usize>,
    pub trials: Option<usize>,
    pub out: Option<PathBuf>,
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

struct Entries {
    values: BTreeMap<String, (usize, String)>,
    base: PathBuf,
}

impl Entries {
    fn raw(&self, key: &str) -> Option<&(usize, String)> {
        self.values.get(key)
    }

    fn parse<V: std::str::FromStr>(&self, key: &str) -> Result<Option<V>> {
        match self.raw(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|_| usage(format!("line {line}: bad value `{v}` for `{key}`"))),
        }
    }

    fn list<V: std::str::FromStr>(&self, key: &str) -> Result<Option<Vec<V>>> {
        match self.raw(key) {
            None => Ok(None),
            Some((line, v)) => v
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse()
                        .map_err(|_| usage(format!("line {line}: bad list entry `{s}` for `{key}`")))
                })
                .collect::<Result<Vec<V>>>()
                .map(Some),
        }
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(|(_, v)| self.base.join(v))
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (k, v) = body
                .split_once('=')
                .ok_or_else(|| usage(format!("line {line}: expected `key = value`")))?;
            let key = k.trim();
            if !KEYS.contains(&key) {
                return Err(usage(format!("line {line}: unknown key `{key}`")));
            }
            if values.insert(key.to_string(), (line, v.trim().to_string())).is_some() {
                return Err(usage(format!("line {line}: duplicate key `{key}`")));
            }
        }
        let e = Entries {
            values,
            base: base.to_path_buf(),
        };

        let target = match (e.path("target_model"), e.path("target_corpus")) {
            (Some(p), None) => TargetSource::File(p),
            (None, Some(corpus)) => TargetSource::Fit {
                corpus,
                order: e.parse("target_order")?.unwrap_or(2),
                smoothing: e.parse("target_smoothing")?.unwrap_or(0.0),
            },
            (Some(_), Some(_)) => return Err(usage("give either target_model or target_corpus, not both")),
            (None, None) => return Err(usage("missing target_model or target_corpus")),
        };

        let same: bool = e.parse("draft_same_as_target")?.unwrap_or(false);
        let draft_order: Option<usize> = e.parse("draft_order")?;
        let draft_smoothing: f64 = e.parse("draft_smoothing")?.unwrap_or(0.0);
        let draft = if same {
            DraftSource::SameAsTarget
        } else if let Some(p) = e.path("draft_model") {
            DraftSource::File(p)
        } else if let Some(corpus) = e.path("draft_corpus") {
            DraftSource::Fit {
                corpus,
                order: draft_order.unwrap_or(0),
                smoothing: draft_smoothing,
            }
        } else if let Some(order) = draft_order {
            let reference = match (&target, e.path("draft_reference")) {
                (_, Some(r)) => r,
                (TargetSource::Fit { corpus, .. }, None) => corpus.clone(),
                (TargetSource::File(_), None) => {
                    return Err(usage("deriving a draft from a target file needs draft_reference"))
                }
            };
            DraftSource::Derive {
                reference,
                order,
                smoothing: draft_smoothing,
            }
        } else {
            return Err(usage(
                "missing draft: set draft_model, draft_corpus, draft_order, or draft_same_as_target",
            ));
        };

        let prefix = e
            .list::<u32>("prefix")?
            .unwrap_or_default()
            .into_iter()
            .map(TokenId)
            .collect();
        let ssd = SsdConfig {
            draft_len: e.parse("draft_len")?.unwrap_or(3),
            target_len: e.parse("target_len")?.unwrap_or(100),
            beta: e.parse("beta")?.unwrap_or(0.0),
            seed: e.parse("seed")?.unwrap_or(0),
        };
        let d = CostModel::default();
        let cost = CostModel {
            c_draft: e.parse("c_draft")?.unwrap_or(d.c_draft),
            c_target: e.parse("c_target")?.unwrap_or(d.c_target),
            c_target_serial: e.parse("c_target_serial")?.unwrap_or(d.c_target_serial),
            token_duration: e.parse("token_duration")?.unwrap_or(d.token_duration),
        };
        let config = Self {
            target,
            draft,
            prefix,
            ssd,
            cost,
            betas: e.list("betas")?.unwrap_or_else(|| vec![0.0, 0.1, 0.2, 0.3, 0.4]),
            draft_lens: e.list("draft_lens")?.unwrap_or_else(|| (1..=8).collect()),
            trials: e.parse("trials")?.unwrap_or(200),
            out: e.path("out"),
        };
        Ok(config)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.ssd.seed = v;
        }
        if let Some(v) = o.beta {
            self.ssd.beta = v;
        }
        if let Some(v) = o.draft_len {
            self.ssd.draft_len = v;
        }
        if let Some(v) = o.target_len {
            self.ssd.target_len = v;
        }
        if let Some(v) = o.trials {
            self.trials = v;
        }
        if let Some(v) = &o.out {
            self.out = Some(v.clone());
        }
    }

    /// Numeric invariants and existence of every referenced file.
    pub fn validate(&self) -> Result<()> {
        self.ssd.validate().map_err(|e| usage(e.to_string()))?;
        self.cost.validate().map_err(|e| usage(e.to_string()))?;
        if self.trials == 0 {
            return Err(usage("trials must be at least 1"));
        }
        for p in self.referenced_files() {
            if !p.is_file() {
                return Err(usage(format!("file not found: {}", p.display())));
            }
        }
        Ok(())
    }

    fn referenced_files(&self) -> Vec<&Path> {
        let mut out = Vec::new();
        match &self.target {
            TargetSource::File(p) | TargetSource::Fit { corpus: p, .. } => out.push(p.as_path()),
        }
        match &self.draft {
            DraftSource::File(p) | DraftSource::Fit { corpus: p, .. } | DraftSource::Derive { reference: p, .. } => {
                out.push(p.as_path())
            }
            DraftSource::SameAsTarget => {}
        }
        out
    }

    /// Loads or builds the target and draft models.
    pub fn build_models(&self) -> Result<(TabularModel, TabularModel)> {
        let load_corpus = |p: &Path| Corpus::load(p).map_err(|e| usage(format!("corpus {}: {e}", p.display())));
        let target = match &self.target {
            TargetSource::File(p) => TabularModel::load(p).map_err(|e| usage(format!("model {}: {e}", p.display())))?,
            TargetSource::Fit {
                corpus,
                order,
                smoothing,
            } => fit_tabular(&load_corpus(corpus)?, *order, *smoothing).context("fitting target")?,
        };
        let draft = match &self.draft {
            DraftSource::SameAsTarget => target.clone(),
            DraftSource::File(p) => TabularModel::load(p).map_err(|e| usage(format!("model {}: {e}", p.display())))?,
            DraftSource::Fit {
                corpus,
                order,
                smoothing,
            } => fit_tabular(&load_corpus(corpus)?, *order, *smoothing).context("fitting draft")?,
            DraftSource::Derive {
                reference,
                order,
                smoothing,
            } => derive_draft(&target, &load_corpus(reference)?, *order, *smoothing)
                .map_err(|e| usage(format!("deriving draft: {e}")))?,
        };
        if let Some(t) = self.prefix.iter().find(|t| t.index() >= target.vocab_size()) {
            return Err(usage(format!(
                "prefix token {t} outside vocabulary of size {}",
                target.vocab_size()
            )));
        }
        Ok((target, draft))
    }
}
