//! Simulated cost of speculative decoding and parameter sweeps.
//!
//! Latency is modeled in abstract cost units: every drafted token costs
//! `c_draft`, every verification cycle costs one `c_target` no matter how many
//! positions it scores, and the autoregressive baseline pays `c_target_serial`
//! per token. Wall time is never measured.

use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::models::{SequenceModel, TokenId};
use crate::oracle::{analytic_acceptance_prob, step_emission_distribution, OracleError, TotalVariation};
use crate::rng::RandomStream;
use crate::scalar::Probability;
use crate::ssd::{ssd_decode, DecodeResult, SsdConfig, SsdError};

/// Largest draft length a sweep accepts.
pub const MAX_SWEEP_DRAFT_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid cost model: {0}")]
    InvalidCost(String),
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
    #[error(transparent)]
    Ssd(#[from] SsdError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    /// Cost per drafted token.
    pub c_draft: f64,
    /// Cost per verification cycle.
    pub c_target: f64,
    /// Cost per token of plain autoregressive decoding with the target.
    pub c_target_serial: f64,
    /// Seconds of speech represented by one token.
    pub token_duration: f64,
}

impl Default for CostModel {
    /// Draft at a third of the target's cost, 25 tokens per second of speech.
    fn default() -> Self {
        Self {
            c_draft: 1.0,
            c_target: 3.0,
            c_target_serial: 3.0,
            token_duration: 0.04,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<(), BenchError> {
        let fields = [
            ("c_draft", self.c_draft),
            ("c_target", self.c_target),
            ("c_target_serial", self.c_target_serial),
            ("token_duration", self.token_duration),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(BenchError::InvalidCost(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Efficiency figures for one decode, or the mean over several.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Metrics {
    /// Accepted drafts over acceptance tests performed. Drafts after a rejection
    /// are never tested and do not count.
    pub acceptance_rate: f64,
    /// Tokens appended per cycle, before truncation.
    pub mean_emitted_per_cycle: f64,
    pub target_calls: f64,
    pub draft_tokens: f64,
    pub sim_cost: f64,
    /// `sim_cost / (L_t · token_duration)`.
    pub rtf_analog: f64,
    /// `(L_t · c_target_serial) / sim_cost`.
    pub speedup_vs_ar: f64,
}

/// Cost-model figures for a finished decode.
pub fn simulate_cost<T: Probability>(result: &DecodeResult<T>, cost: &CostModel) -> Metrics {
    let counts = &result.counts;
    let target_len = result.tokens.len() as f64;
    let tested: usize = result.cycles.iter().map(|c| c.accept_flags.len()).sum();
    let sim_cost = counts.draft_tokens_generated as f64 * cost.c_draft + counts.target_calls as f64 * cost.c_target;
    Metrics {
        acceptance_rate: if tested == 0 {
            0.0
        } else {
            counts.accepted_tokens as f64 / tested as f64
        },
        mean_emitted_per_cycle: counts.emitted_tokens() as f64 / counts.target_calls as f64,
        target_calls: counts.target_calls as f64,
        draft_tokens: counts.draft_tokens_generated as f64,
        sim_cost,
        rtf_analog: sim_cost / (target_len * cost.token_duration),
        speedup_vs_ar: target_len * cost.c_target_serial / sim_cost,
    }
}

/// One sweep point averaged over its trials.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub beta: f64,
    pub draft_len: usize,
    pub trials: usize,
    pub mean: Metrics,
    /// Standard error of the mean `rtf_analog`.
    pub rtf_stderr: f64,
    /// Standard error of the mean `speedup_vs_ar`.
    pub speedup_stderr: f64,
    /// Acceptance tests pooled over all trials.
    pub acceptance_tests: usize,
    /// Mean of the exact acceptance probability at every tested position.
    pub analytic_acceptance_mean: f64,
    /// Mean TV between the exact single-position emission law and the
    /// target's conditional, over every tested position.
    pub step_tv_mean: f64,
}

/// Shared inputs of a sweep.
#[derive(Debug, Clone, Copy)]
pub struct SweepSpec<'a> {
    pub prefix: &'a [TokenId],
    pub base: SsdConfig,
    pub cost: CostModel,
    pub trials: usize,
}

pub fn sweep_beta<T, Mt, Md>(
    target: &Mt,
    draft: &Md,
    spec: &SweepSpec<'_>,
    betas: &[f64],
) -> Result<Vec<SweepRow>, BenchError>
where
    T: Probability,
    Mt: SequenceModel<T> + Sync + ?Sized,
    Md: SequenceModel<T> + Sync + ?Sized,
{
    if betas.is_empty() {
        return Err(BenchError::InvalidSweep("empty beta list".into()));
    }
    let configs: Vec<SsdConfig> = betas.iter().map(|&beta| SsdConfig { beta, ..spec.base }).collect();
    run_sweep(target, draft, spec, &configs)
}

pub fn sweep_draft_len<T, Mt, Md>(
    target: &Mt,
    draft: &Md,
    spec: &SweepSpec<'_>,
    lens: &[usize],
) -> Result<Vec<SweepRow>, BenchError>
where
    T: Probability,
    Mt: SequenceModel<T> + Sync + ?Sized,
    Md: SequenceModel<T> + Sync + ?Sized,
{
    if lens.is_empty() {
        return Err(BenchError::InvalidSweep("empty draft length list".into()));
    }
    if let Some(&bad) = lens.iter().find(|&&l| !(1..=MAX_SWEEP_DRAFT_LEN).contains(&l)) {
        return Err(BenchError::InvalidSweep(format!(
            "draft length {bad} outside [1, {MAX_SWEEP_DRAFT_LEN}]"
        )));
    }
    let configs: Vec<SsdConfig> = lens
        .iter()
        .map(|&draft_len| SsdConfig { draft_len, ..spec.base })
        .collect();
    run_sweep(target, draft, spec, &configs)
}

/// Point `i` draws its trial seeds from stream `i` of the base seed, so rows do
/// not depend on scheduling.
fn run_sweep<T, Mt, Md>(
    target: &Mt,
    draft: &Md,
    spec: &SweepSpec<'_>,
    configs: &[SsdConfig],
) -> Result<Vec<SweepRow>, BenchError>
where
    T: Probability,
    Mt: SequenceModel<T> + Sync + ?Sized,
    Md: SequenceModel<T> + Sync + ?Sized,
{
    spec.cost.validate()?;
    if spec.trials == 0 {
        return Err(BenchError::InvalidSweep("trials must be at least 1".into()));
    }
    for c in configs {
        c.validate()?;
    }
    configs
        .par_iter()
        .enumerate()
        .map(|(index, config)| run_point(target, draft, spec, config, index as u64))
        .collect()
}

fn run_point<T, Mt, Md>(
    target: &Mt,
    draft: &Md,
    spec: &SweepSpec<'_>,
    config: &SsdConfig,
    index: u64,
) -> Result<SweepRow, BenchError>
where
    T: Probability,
    Mt: SequenceModel<T> + ?Sized,
    Md: SequenceModel<T> + ?Sized,
{
    let mut seeds = RandomStream::with_stream(spec.base.seed, index);
    let beta = T::lit(config.beta);
    let mut per_trial = Vec::with_capacity(spec.trials);
    let (mut accepted, mut tested) = (0usize, 0usize);
    let (mut analytic_sum, mut tv_sum) = (0.0f64, 0.0f64);

    for _ in 0..spec.trials {
        let mut rng = RandomStream::from_seed(seeds.next_seed());
        let result = ssd_decode(target, draft, spec.prefix, config, &mut rng)?;
        per_trial.push(simulate_cost(&result, &spec.cost));

        let mut context = spec.prefix.to_vec();
        for cycle in &result.cycles {
            let mut ext = context.clone();
            for (i, &ok) in cycle.accept_flags.iter().enumerate() {
                let q = target.next_distribution(&ext).map_err(SsdError::from)?;
                let p = draft.next_distribution(&ext).map_err(SsdError::from)?;
                analytic_sum += analytic_acceptance_prob(&q, &p, beta).as_f64();
                let emitted = step_emission_distribution(&q, &p, beta)?;
                tv_sum += emitted.tv_distance(&q)?.as_f64();
                tested += 1;
                accepted += usize::from(ok);
                ext.push(cycle.drafted[i].token);
            }
            context.extend(cycle.emitted());
        }
    }

    let n = per_trial.len() as f64;
    let mean_of = |f: fn(&Metrics) -> f64| per_trial.iter().map(f).sum::<f64>() / n;
    let stderr_of = |f: fn(&Metrics) -> f64| {
        if per_trial.len() < 2 {
            return 0.0;
        }
        let m = mean_of(f);
        let var = per_trial.iter().map(|x| (f(x) - m).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    };
    let mean = Metrics {
        acceptance_rate: accepted as f64 / tested as f64,
        mean_emitted_per_cycle: mean_of(|m| m.mean_emitted_per_cycle),
        target_calls: mean_of(|m| m.target_calls),
        draft_tokens: mean_of(|m| m.draft_tokens),
        sim_cost: mean_of(|m| m.sim_cost),
        rtf_analog: mean_of(|m| m.rtf_analog),
        speedup_vs_ar: mean_of(|m| m.speedup_vs_ar),
    };
    Ok(SweepRow {
        beta: config.beta,
        draft_len: config.draft_len,
        trials: spec.trials,
        mean,
        rtf_stderr: stderr_of(|m| m.rtf_analog),
        speedup_stderr: stderr_of(|m| m.speedup_vs_ar),
        acceptance_tests: tested,
        analytic_acceptance_mean: analytic_sum / tested as f64,
        step_tv_mean: tv_sum / tested as f64,
    })
}

pub const CSV_HEADER: &str = "beta,draft_len,trials,acceptance_rate,mean_emitted_per_cycle,target_calls,draft_tokens,sim_cost,rtf_analog,speedup_vs_ar,step_tv_mean";

/// `%g`-style formatting with six significant digits.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa.to_string()), exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub fn render_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let fields = [
            r.beta,
            r.draft_len as f64,
            r.trials as f64,
            r.mean.acceptance_rate,
            r.mean.mean_emitted_per_cycle,
            r.mean.target_calls,
            r.mean.draft_tokens,
            r.mean.sim_cost,
            r.mean.rtf_analog,
            r.mean.speedup_vs_ar,
            r.step_tv_mean,
        ];
        let line: Vec<String> = fields.iter().map(|&v| format_sig6(v)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Fixed-width table for terminals.
pub fn render_table(rows: &[SweepRow]) -> String {
    let mut out = format!(
        "{:>6} {:>4} {:>7} {:>9} {:>9} {:>9} {:>9} {:>8}\n",
        "beta", "L_d", "trials", "accept", "emit/cyc", "rtf", "speedup", "step_tv"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:>6.3} {:>4} {:>7} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>8.4}",
            r.beta,
            r.draft_len,
            r.trials,
            r.mean.acceptance_rate,
            r.mean.mean_emitted_per_cycle,
            r.mean.rtf_analog,
            r.mean.speedup_vs_ar,
            r.step_tv_mean
        );
    }
    out
}
