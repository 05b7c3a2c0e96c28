//! Self-check suite comparing the decoder against the exact oracles.
//!
//! Each property yields a [`PropertyResult`] with the measured margin. The
//! suite takes the residual rule as a parameter so a deliberately broken rule
//! can be shown to fail the losslessness check.

use std::collections::BTreeMap;
use std::fmt;

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::models::{sample_with_uniform, Distribution, SequenceModel, TabularMarkovModel, TokenId, BEGIN_MARKER};
use crate::oracle::{
    analytic_acceptance_prob, exact_ar_distribution, exact_ssd_distribution_with, step_emission_distribution_with,
    OracleError, TotalVariation,
};
use crate::rng::{RandomStream, UniformSource};
use crate::ssd::{
    accept_token, residual_distribution, ssd_cycle_with, ssd_decode_with, ResidualRule, SsdConfig, SsdError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifyLevel {
    Quick,
    Full,
}

impl VerifyLevel {
    pub fn model_pairs(self) -> usize {
        match self {
            VerifyLevel::Quick => 12,
            VerifyLevel::Full => 60,
        }
    }

    pub fn distribution_pairs(self) -> usize {
        match self {
            VerifyLevel::Quick => 200,
            VerifyLevel::Full => 2000,
        }
    }

    pub fn monte_carlo_samples(self) -> usize {
        match self {
            VerifyLevel::Quick => 20_000,
            VerifyLevel::Full => 100_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub level: VerifyLevel,
    pub seed: u64,
    pub residual: ResidualRule<f64>,
}

impl VerifyOptions {
    pub fn new(level: VerifyLevel, seed: u64) -> Self {
        Self {
            level,
            seed,
            residual: residual_distribution,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for PropertyResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} {}: {}", self.name, self.detail)
    }
}

#[derive(Debug, Clone, Default)]
pub struct VerifyReport {
    pub results: Vec<PropertyResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn get(&self, name: &str) -> Option<&PropertyResult> {
        self.results.iter().find(|r| r.name == name)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.results {
            writeln!(f, "{r}")?;
        }
        Ok(())
    }
}

pub const LOSSLESS_TV_LIMIT: f64 = 1e-10;
pub const ENDPOINT_LIMIT: f64 = 1e-12;
pub const INTEGRATION_LIMIT: f64 = 1e-9;
pub const SIGMA_LIMIT: f64 = 3.0;
pub const CHI_SQUARE_SIGNIFICANCE: f64 = 0.001;
const BETA_GRID: [f64; 11] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];
const MONOTONE_SLACK: f64 = 1e-12;

/// Random weights normalized to a distribution; each entry is zero with
/// probability `zero_rate`, keeping at least one positive entry.
pub fn random_distribution(vocab: usize, zero_rate: f64, rng: &mut impl UniformSource) -> Distribution<f64> {
    loop {
        let weights: Vec<f64> = (0..vocab)
            .map(|_| {
                let keep = rng.next_uniform() >= zero_rate;
                let w = -(1.0 - rng.next_uniform()).ln();
                if keep {
                    w
                } else {
                    0.0
                }
            })
            .collect();
        if let Ok(d) = Distribution::normalize(weights) {
            return d;
        }
    }
}

/// Order-`order` model with an independent random row for every context,
/// including padded ones.
pub fn random_tabular(
    vocab: usize,
    order: usize,
    zero_rate: f64,
    rng: &mut impl UniformSource,
) -> TabularMarkovModel<f64> {
    let symbols: Vec<u32> = std::iter::once(BEGIN_MARKER).chain(0..vocab as u32).collect();
    let mut contexts: Vec<Vec<u32>> = vec![Vec::new()];
    for _ in 0..order {
        contexts = contexts
            .into_iter()
            .flat_map(|c| {
                symbols.iter().map(move |&s| {
                    let mut next = c.clone();
                    next.push(s);
                    next
                })
            })
            .collect();
    }
    let table: BTreeMap<_, _> = contexts
        .into_iter()
        .map(|c| (c, random_distribution(vocab, zero_rate, rng)))
        .collect();
    TabularMarkovModel::from_table(vocab, order, 0.0, table).expect("random table is consistent")
}

/// A randomized target/draft pair with its decoding shape.
#[derive(Debug, Clone)]
pub struct RandomCase {
    pub target: TabularMarkovModel<f64>,
    pub draft: TabularMarkovModel<f64>,
    pub prefix: Vec<TokenId>,
    pub draft_len: usize,
    pub horizon: usize,
}

pub fn random_case(rng: &mut impl UniformSource) -> RandomCase {
    let pick = |rng: &mut dyn FnMut() -> f64, n: usize| ((rng() * n as f64) as usize).min(n - 1);
    let mut u = || rng.next_uniform();
    let vocab = 2 + pick(&mut u, 2);
    let draft_len = 1 + pick(&mut u, 3);
    let horizon = 1 + pick(&mut u, 3);
    let target_order = pick(&mut u, 3);
    let draft_order = pick(&mut u, 2);
    let prefix_len = pick(&mut u, 3);
    let prefix: Vec<TokenId> = (0..prefix_len).map(|_| TokenId(pick(&mut u, vocab) as u32)).collect();
    let target = random_tabular(vocab, target_order, 0.2, rng);
    let draft = random_tabular(vocab, draft_order, 0.2, rng);
    RandomCase {
        target,
        draft,
        prefix,
        draft_len,
        horizon,
    }
}

fn err_result(name: &'static str, e: impl fmt::Display) -> PropertyResult {
    PropertyResult {
        name,
        passed: false,
        detail: format!("error: {e}"),
    }
}

/// Exact SSD law at β = 0 equals the target's AR law for random pairs.
pub fn check_losslessness(opts: &VerifyOptions) -> PropertyResult {
    const NAME: &str = "lossless_beta0";
    let mut rng = RandomStream::with_stream(opts.seed, 1);
    let pairs = opts.level.model_pairs();
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let case = random_case(&mut rng);
        let config = SsdConfig {
            draft_len: case.draft_len,
            target_len: case.horizon,
            beta: 0.0,
            seed: 0,
        };
        let run = || -> Result<f64, OracleError> {
            let ssd = exact_ssd_distribution_with(
                &case.target,
                &case.draft,
                &case.prefix,
                &config,
                case.horizon,
                opts.residual,
            )?;
            let ar = exact_ar_distribution(&case.target, &case.prefix, case.horizon)?;
            ssd.tv_distance(&ar)
        };
        match run() {
            Ok(tv) => worst = worst.max(tv),
            Err(e) => return err_result(NAME, e),
        }
    }
    PropertyResult {
        name: NAME,
        passed: worst < LOSSLESS_TV_LIMIT,
        detail: format!("{pairs} pairs, max TV {worst:.3e} (limit {LOSSLESS_TV_LIMIT:.0e})"),
    }
}

fn random_pair(rng: &mut RandomStream) -> (Distribution<f64>, Distribution<f64>) {
    let vocab = 2 + ((rng.next_uniform() * 4.0) as usize).min(3);
    let q = random_distribution(vocab, 0.2, rng);
    let p = random_distribution(vocab, 0.2, rng);
    (q, p)
}

/// Single-step emission law is `q` at β = 0 and `p` at β = 1.
pub fn check_beta_endpoints(opts: &VerifyOptions) -> PropertyResult {
    const NAME: &str = "beta_endpoints";
    let mut rng = RandomStream::with_stream(opts.seed, 2);
    let n = opts.level.distribution_pairs();
    let (mut worst_q, mut worst_p) = (0.0f64, 0.0f64);
    for _ in 0..n {
        let (q, p) = random_pair(&mut rng);
        let at = |beta| step_emission_distribution_with(&q, &p, beta, opts.residual);
        let (e0, e1) = match (at(0.0), at(1.0)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => return err_result(NAME, e),
        };
        for i in 0..q.len() {
            worst_q = worst_q.max((e0.probs()[i] - q.probs()[i]).abs());
            worst_p = worst_p.max((e1.probs()[i] - p.probs()[i]).abs());
        }
    }
    PropertyResult {
        name: NAME,
        passed: worst_q <= ENDPOINT_LIMIT && worst_p <= ENDPOINT_LIMIT,
        detail: format!(
            "{n} pairs, max |e(0)-q| {worst_q:.3e}, max |e(1)-p| {worst_p:.3e} (limit {ENDPOINT_LIMIT:.0e})"
        ),
    }
}

/// Measure of `{r in [0, 1) : accept(r)}` by bisection down to `width`. The
/// predicate is treated as a black box.
fn integrate_indicator(accept: &dyn Fn(f64) -> bool, lo: f64, hi: f64, width: f64) -> f64 {
    let (a, b) = (accept(lo), accept(hi));
    let mid = 0.5 * (lo + hi);
    if hi - lo <= width {
        return (hi - lo) * (u8::from(a) + u8::from(b)) as f64 / 2.0;
    }
    if a == b && a == accept(mid) && hi - lo <= 1.0 / 64.0 {
        return if a { hi - lo } else { 0.0 };
    }
    integrate_indicator(accept, lo, mid, width) + integrate_indicator(accept, mid, hi, width)
}

/// Closed-form acceptance probability agrees with integrating the acceptance
/// predicate over `r`.
pub fn check_acceptance_integration(opts: &VerifyOptions) -> PropertyResult {
    const NAME: &str = "acceptance_formula";
    let mut rng = RandomStream::with_stream(opts.seed, 3);
    let n = opts.level.distribution_pairs() / 4;
    let mut worst = 0.0f64;
    for _ in 0..n {
        let (q, p) = random_pair(&mut rng);
        for beta in [0.0, 0.2, 0.4, 1.0] {
            let mut numeric = 0.0;
            for (x, px) in p.support() {
                let qx = q.prob(x);
                let accept = |r: f64| r < 1.0 && accept_token(qx, px, beta, r).unwrap_or(false);
                numeric += px * integrate_indicator(&accept, 0.0, 1.0, 1e-13);
            }
            worst = worst.max((numeric - analytic_acceptance_prob(&q, &p, beta)).abs());
        }
    }
    PropertyResult {
        name: NAME,
        passed: worst <= INTEGRATION_LIMIT,
        detail: format!(
            "{n} pairs x 4 betas, max |closed form - integral| {worst:.3e} (limit {INTEGRATION_LIMIT:.0e})"
        ),
    }
}

/// Acceptance probability, TV to the target, and the pointwise emission law
/// all move monotonically in β; at β = 1 the emission law is `p`.
pub fn check_beta_monotonicity(opts: &VerifyOptions) -> PropertyResult {
    const NAME: &str = "beta_monotonicity";
    let mut rng = RandomStream::with_stream(opts.seed, 4);
    let n = opts.level.distribution_pairs();
    let mut violations = 0usize;
    let mut worst_step = 0.0f64;
    for _ in 0..n {
        let (q, p) = random_pair(&mut rng);
        let mut prev: Option<(f64, f64, Distribution<f64>)> = None;
        for beta in BETA_GRID {
            let e = match step_emission_distribution_with(&q, &p, beta, opts.residual) {
                Ok(e) => e,
                Err(err) => return err_result(NAME, err),
            };
            let acc = analytic_acceptance_prob(&q, &p, beta);
            let tv = match e.tv_distance(&q) {
                Ok(tv) => tv,
                Err(err) => return err_result(NAME, err),
            };
            if let Some((pa, ptv, pe)) = &prev {
                let mut bad = acc + MONOTONE_SLACK < *pa || tv + MONOTONE_SLACK < *ptv;
                for x in 0..q.len() {
                    let delta = e.probs()[x] - pe.probs()[x];
                    let (qx, px) = (q.probs()[x], p.probs()[x]);
                    if (qx < px && delta < -MONOTONE_SLACK) || (qx > px && delta > MONOTONE_SLACK) {
                        bad = true;
                    }
                }
                violations += usize::from(bad);
            }
            if beta == 1.0 {
                for (a, b) in e.probs().iter().zip(p.probs()) {
                    worst_step = worst_step.max((a - b).abs());
                }
            }
            prev = Some((acc, tv, e));
        }
    }
    PropertyResult {
        name: NAME,
        passed: violations == 0 && worst_step <= ENDPOINT_LIMIT,
        detail: format!("{n} pairs over an 11-point beta grid, {violations} violations, max |e(1)-p| {worst_step:.3e}"),
    }
}

/// Empirical acceptance over many cycles agrees with the exact per-position
/// probabilities, pooled as a sum of Bernoulli trials.
pub fn check_acceptance_monte_carlo(opts: &VerifyOptions) -> PropertyResult {
    const NAME: &str = "acceptance_monte_carlo";
    let mut setup = RandomStream::with_stream(opts.seed, 5);
    let target = random_tabular(3, 2, 0.1, &mut setup);
    let draft = random_tabular(3, 0, 0.0, &mut setup);
    let cycles = opts.level.monte_carlo_samples();
    let mut worst = 0.0f64;
    let mut details = Vec::new();
    for (k, beta) in [0.0, 0.2, 0.4, 1.0].into_iter().enumerate() {
        let config = SsdConfig {
            draft_len: 3,
            target_len: 1,
            beta,
            seed: 0,
        };
        match acceptance_z(&target, &draft, &config, cycles, opts, 100 + k as u64) {
            Ok((z, rate, expected)) => {
                worst = worst.max(z.abs());
                details.push(format!("beta {beta}: rate {rate:.4} vs {expected:.4} (z {z:+.2})"));
            }
            Err(e) => return err_result(NAME, e),
        }
    }
    PropertyResult {
        name: NAME,
        passed: worst <= SIGMA_LIMIT,
        detail: format!("{cycles} cycles each; {}", details.join("; ")),
    }
}

/// Runs `cycles` independent cycles from random short contexts and returns
/// `(z, empirical rate, expected rate)` for the pooled acceptance tests.
pub fn acceptance_z(
    target: &TabularMarkovModel<f64>,
    draft: &TabularMarkovModel<f64>,
    config: &SsdConfig,
    cycles: usize,
    opts: &VerifyOptions,
    stream: u64,
) -> Result<(f64, f64, f64), SsdError> {
    let mut rng = RandomStream::with_stream(opts.seed, stream);
    let vocab = target.vocab_size();
    let beta = config.beta;
    let (mut accepted, mut tests) = (0usize, 0usize);
    let (mut expected, mut variance) = (0.0f64, 0.0f64);
    for _ in 0..cycles {
        let len = sample_with_uniform(&Distribution::<f64>::uniform(3), rng.next_uniform()).index();
        let context: Vec<TokenId> = (0..len)
            .map(|_| TokenId(((rng.next_uniform() * vocab as f64) as u32).min(vocab as u32 - 1)))
            .collect();
        let trace = ssd_cycle_with(target, draft, &context, config, &mut rng, opts.residual)?;
        let mut ext = context.clone();
        for (i, &ok) in trace.accept_flags.iter().enumerate() {
            let q = target.next_distribution(&ext)?;
            let p = draft.next_distribution(&ext)?;
            let a = analytic_acceptance_prob(&q, &p, beta);
            expected += a;
            variance += a * (1.0 - a);
            accepted += usize::from(ok);
            tests += 1;
            ext.push(trace.drafted[i].token);
        }
    }
    let diff = accepted as f64 - expected;
    let z = if variance > 0.0 {
        diff / variance.sqrt()
    } else if diff.abs() < 1e-9 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok((z, accepted as f64 / tests as f64, expected / tests as f64))
}

/// Pearson chi-square of observed sequence counts against an exact law.
/// Cells with expected count below 5 are pooled. Returns `(statistic, df, p-value)`.
pub fn chi_square(
    counts: &BTreeMap<Vec<TokenId>, usize>,
    law: &crate::oracle::SequenceDistribution<f64>,
    samples: usize,
) -> (f64, usize, f64) {
    let n = samples as f64;
    let mut stat = 0.0;
    let mut cells = 0usize;
    let (mut pooled_obs, mut pooled_exp) = (0.0f64, 0.0f64);
    let mut seen = 0usize;
    for (seq, p) in law.iter() {
        let observed = counts.get(seq).copied().unwrap_or(0) as f64;
        seen += observed as usize;
        let expected = p * n;
        if expected >= 5.0 {
            stat += (observed - expected).powi(2) / expected;
            cells += 1;
        } else {
            pooled_obs += observed;
            pooled_exp += expected;
        }
    }
    // samples outside the law's support
    pooled_obs += (samples - seen) as f64;
    if pooled_exp > 0.0 {
        stat += (pooled_obs - pooled_exp).powi(2) / pooled_exp;
        cells += 1;
    } else if pooled_obs > 0.0 {
        return (f64::INFINITY, cells.max(1), 0.0);
    }
    let df = cells.saturating_sub(1).max(1);
    let p_value = 1.0 - ChiSquared::new(df as f64).expect("positive df").cdf(stat);
    (stat, df, p_value)
}

/// Sampled decoder outputs are consistent with the exact law, at β = 0 and β > 0.
pub fn check_decode_distribution(opts: &VerifyOptions) -> PropertyResult {
    const NAME: &str = "decode_chi_square";
    let mut setup = RandomStream::with_stream(opts.seed, 6);
    let target = random_tabular(3, 1, 0.1, &mut setup);
    let draft = random_tabular(3, 0, 0.0, &mut setup);
    let prefix = vec![TokenId(1)];
    let samples = opts.level.monte_carlo_samples();
    let mut min_p = 1.0f64;
    let mut details = Vec::new();
    for (k, beta) in [0.0, 0.3].into_iter().enumerate() {
        let config = SsdConfig {
            draft_len: 2,
            target_len: 3,
            beta,
            seed: 0,
        };
        let law = match exact_ssd_distribution_with(&target, &draft, &prefix, &config, 3, opts.residual) {
            Ok(l) => l,
            Err(e) => return err_result(NAME, e),
        };
        let mut rng = RandomStream::with_stream(opts.seed, 200 + k as u64);
        let mut counts: BTreeMap<Vec<TokenId>, usize> = BTreeMap::new();
        for _ in 0..samples {
            match ssd_decode_with(&target, &draft, &prefix, &config, &mut rng, opts.residual) {
                Ok(r) => *counts.entry(r.tokens).or_default() += 1,
                Err(e) => return err_result(NAME, e),
            }
        }
        let (stat, df, p) = chi_square(&counts, &law, samples);
        min_p = min_p.min(p);
        details.push(format!("beta {beta}: chi2 {stat:.2} on {df} df, p {p:.4}"));
    }
    PropertyResult {
        name: NAME,
        passed: min_p >= CHI_SQUARE_SIGNIFICANCE,
        detail: format!("{samples} decodes each; {}", details.join("; ")),
    }
}

/// Same seed, same models: identical results.
pub fn check_determinism(opts: &VerifyOptions) -> PropertyResult {
    const NAME: &str = "determinism";
    let mut setup = RandomStream::with_stream(opts.seed, 7);
    let case = random_case(&mut setup);
    let config = SsdConfig {
        draft_len: case.draft_len,
        target_len: 32,
        beta: 0.25,
        seed: opts.seed,
    };
    let run = || {
        let mut rng = RandomStream::from_seed(config.seed);
        ssd_decode_with(
            &case.target,
            &case.draft,
            &case.prefix,
            &config,
            &mut rng,
            opts.residual,
        )
    };
    match (run(), run()) {
        (Ok(a), Ok(b)) => PropertyResult {
            name: NAME,
            passed: a == b,
            detail: format!("{} cycles replayed", a.cycles.len()),
        },
        (Err(e), _) | (_, Err(e)) => err_result(NAME, e),
    }
}

pub fn run_suite(opts: &VerifyOptions) -> VerifyReport {
    let checks: [fn(&VerifyOptions) -> PropertyResult; 7] = [
        check_losslessness,
        check_beta_endpoints,
        check_acceptance_integration,
        check_beta_monotonicity,
        check_acceptance_monte_carlo,
        check_decode_distribution,
        check_determinism,
    ];
    VerifyReport {
        results: checks.iter().map(|c| c(opts)).collect(),
    }
}
