//! Subcommand bodies. Each returns the text it would print so the output can
//! be compared byte for byte.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context as _, Result};
use ssd_core::bench::{
    format_sig6, render_csv, render_table, simulate_cost, sweep_beta, sweep_draft_len, SweepRow, SweepSpec,
};
use ssd_core::models::{cross_entropy, derive_draft, fit_tabular, Corpus, ModelError};
use ssd_core::verify::{run_suite, VerifyLevel, VerifyOptions, VerifyReport};
use ssd_core::{ssd_decode_seeded, DecodeResult, TabularModel, TokenId};

use crate::config::RunConfig;
use crate::UsageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    Beta,
    DraftLen,
}

fn join_tokens(tokens: &[TokenId]) -> String {
    tokens.iter().map(TokenId::to_string).collect::<Vec<_>>().join(" ")
}

fn load_corpus(path: &Path) -> Result<Corpus> {
    Corpus::load(path).map_err(|e| match e {
        ModelError::Io(io) => UsageError(format!("cannot read corpus {}: {io}", path.display())).into(),
        other => UsageError(format!("corpus {}: {other}", path.display())).into(),
    })
}

fn describe_entropy(model: &TabularModel, corpus: &Corpus) -> String {
    match cross_entropy(model, corpus) {
        Ok(h) => format!("cross-entropy {} nats/token", format_sig6(h)),
        Err(e) => format!("cross-entropy infinite ({e})"),
    }
}

pub fn fit(corpus_path: &Path, order: usize, smoothing: f64, out: &Path) -> Result<String> {
    let corpus = load_corpus(corpus_path)?;
    let model = fit_tabular(&corpus, order, smoothing).map_err(|e| UsageError(e.to_string()))?;
    model.save(out).with_context(|| format!("writing {}", out.display()))?;
    Ok(format!(
        "fitted order-{order} model on {} tokens ({} contexts) -> {}\n{}\n",
        corpus.token_count(),
        model.table().len(),
        out.display(),
        describe_entropy(&model, &corpus)
    ))
}

pub fn derive(target_path: &Path, corpus_path: &Path, order: usize, smoothing: f64, out: &Path) -> Result<String> {
    let target =
        TabularModel::load(target_path).map_err(|e| UsageError(format!("model {}: {e}", target_path.display())))?;
    let corpus = load_corpus(corpus_path)?;
    let draft = derive_draft(&target, &corpus, order, smoothing).map_err(|e| UsageError(e.to_string()))?;
    draft.save(out).with_context(|| format!("writing {}", out.display()))?;
    Ok(format!(
        "derived order-{order} draft from order-{} target -> {}\ntarget {}\ndraft {}\n",
        target.order(),
        out.display(),
        describe_entropy(&target, &corpus),
        describe_entropy(&draft, &corpus)
    ))
}

pub fn decode(config: &RunConfig) -> Result<(String, DecodeResult)> {
    config.validate()?;
    let (target, draft) = config.build_models()?;
    let result = ssd_decode_seeded(&target, &draft, &config.prefix, &config.ssd)?;
    let metrics = simulate_cost(&result, &config.cost);

    let mut out = String::new();
    let c = &config.ssd;
    let _ = writeln!(
        out,
        "config: draft_len={} target_len={} beta={} seed={}",
        c.draft_len,
        c.target_len,
        format_sig6(c.beta),
        c.seed
    );
    let _ = writeln!(out, "tokens: {}", join_tokens(&result.tokens));
    for (i, cycle) in result.cycles.iter().enumerate() {
        let drafted: Vec<TokenId> = cycle.drafted.iter().map(|d| d.token).collect();
        let flags: String = cycle.accept_flags.iter().map(|&a| if a { '+' } else { '-' }).collect();
        let tail = match (cycle.resampled, cycle.bonus) {
            (Some((pos, t)), _) => format!("resampled {t} at {pos}"),
            (None, Some(t)) => format!("bonus {t}"),
            (None, None) => String::new(),
        };
        let _ = writeln!(
            out,
            "cycle {i}: drafted [{}] accept {flags} {tail}{}",
            join_tokens(&drafted),
            if cycle.residual_fallback {
                " (residual fallback)"
            } else {
                ""
            }
        );
    }
    let n = &result.counts;
    let _ = writeln!(out, "target_calls = {}", n.target_calls);
    let _ = writeln!(out, "draft_tokens = {}", n.draft_tokens_generated);
    let _ = writeln!(out, "accepted_tokens = {}", n.accepted_tokens);
    let _ = writeln!(out, "acceptance_rate = {}", format_sig6(metrics.acceptance_rate));
    let _ = writeln!(
        out,
        "mean_emitted_per_cycle = {}",
        format_sig6(metrics.mean_emitted_per_cycle)
    );
    let _ = writeln!(out, "sim_cost = {}", format_sig6(metrics.sim_cost));
    let _ = writeln!(out, "rtf_analog = {}", format_sig6(metrics.rtf_analog));
    let _ = writeln!(out, "speedup_vs_ar = {}", format_sig6(metrics.speedup_vs_ar));
    Ok((out, result))
}

pub fn verify(level: VerifyLevel, seed: u64) -> (String, VerifyReport) {
    let report = run_suite(&VerifyOptions::new(level, seed));
    let verdict = if report.passed() {
        "all properties hold"
    } else {
        "FAILED"
    };
    let name = match level {
        VerifyLevel::Quick => "quick",
        VerifyLevel::Full => "full",
    };
    let text = format!("verify level={name} seed={seed}\n{report}{verdict}\n");
    (text, report)
}

pub fn sweep(config: &RunConfig, kind: SweepKind) -> Result<(Vec<SweepRow>, String)> {
    config.validate()?;
    match kind {
        SweepKind::Beta if config.betas.is_empty() => return Err(UsageError("empty beta list".into()).into()),
        SweepKind::DraftLen if config.draft_lens.is_empty() => {
            return Err(UsageError("empty draft length list".into()).into())
        }
        _ => {}
    }
    let (target, draft) = config.build_models()?;
    let spec = SweepSpec {
        prefix: &config.prefix,
        base: config.ssd,
        cost: config.cost,
        trials: config.trials,
    };
    let rows = match kind {
        SweepKind::Beta => sweep_beta(&target, &draft, &spec, &config.betas),
        SweepKind::DraftLen => sweep_draft_len(&target, &draft, &spec, &config.draft_lens),
    }
    .map_err(|e| UsageError(e.to_string()))?;
    let csv = render_csv(&rows);
    Ok((rows, csv))
}

pub fn sweep_summary(rows: &[SweepRow]) -> String {
    render_table(rows)
}
