//! Sampled behaviour against exact laws. Every comparison allows three
//! binomial standard deviations per cell and uses a fixed seed.

use std::collections::BTreeMap;

use ssd_core::models::{tokens, Distribution, FnModel, SequenceModel, TokenId};
use ssd_core::oracle::{exact_ar_distribution, exact_ssd_distribution, step_emission_distribution, tv_distance};
use ssd_core::ssd::{draft_generate, ssd_cycle, ssd_decode, SsdConfig};
use ssd_core::verify::{chi_square, random_tabular, CHI_SQUARE_SIGNIFICANCE};
use ssd_core::{ar_decode, sample_token, RandomStream, TabularModel};

const SAMPLES: usize = 100_000;

fn within_3_sigma(count: usize, n: usize, p: f64) -> bool {
    let sd = (n as f64 * p * (1.0 - p)).sqrt();
    (count as f64 - n as f64 * p).abs() <= 3.0 * sd + 1e-9
}

fn models(seed: u64) -> (TabularModel, TabularModel) {
    let mut rng = RandomStream::from_seed(seed);
    let target = random_tabular(3, 2, 0.2, &mut rng);
    let draft = random_tabular(3, 1, 0.2, &mut rng);
    (target, draft)
}

#[test]
fn sampled_tokens_follow_the_distribution() {
    let d = Distribution::<f64>::new(vec![0.2, 0.3, 0.5]).unwrap();
    let mut rng = RandomStream::from_seed(11);
    let mut counts = [0usize; 3];
    for _ in 0..SAMPLES {
        counts[sample_token(&d, &mut rng).index()] += 1;
    }
    for (i, &c) in counts.iter().enumerate() {
        assert!(within_3_sigma(c, SAMPLES, d.probs()[i]), "token {i}: {c}");
    }
}

#[test]
fn autoregressive_sequences_follow_the_exact_law() {
    let (target, _) = models(3);
    let prefix = tokens(&[1]);
    let law = exact_ar_distribution(&target, &prefix, 2).unwrap();
    let mut rng = RandomStream::from_seed(12);
    let mut counts: BTreeMap<Vec<TokenId>, usize> = BTreeMap::new();
    for _ in 0..SAMPLES {
        *counts
            .entry(ar_decode(&target, &prefix, 2, &mut rng).unwrap())
            .or_default() += 1;
    }
    for (seq, p) in law.iter() {
        let c = counts.get(seq).copied().unwrap_or(0);
        assert!(within_3_sigma(c, SAMPLES, p), "{seq:?}: {c} vs {p}");
    }
    assert_eq!(counts.values().sum::<usize>(), SAMPLES);
    assert!(counts.keys().all(|s| law.prob(s) > 0.0));
}

#[test]
fn drafted_tokens_follow_the_draft_law() {
    let (_, draft) = models(4);
    let prefix = tokens(&[0, 2]);
    let law = exact_ar_distribution(&draft, &prefix, 2).unwrap();
    let mut rng = RandomStream::from_seed(13);
    let mut counts: BTreeMap<Vec<TokenId>, usize> = BTreeMap::new();
    for _ in 0..SAMPLES {
        let d = draft_generate(&draft, &prefix, 2, &mut rng).unwrap();
        *counts.entry(d.tokens).or_default() += 1;
    }
    for (seq, p) in law.iter() {
        let c = counts.get(seq).copied().unwrap_or(0);
        assert!(within_3_sigma(c, SAMPLES, p), "{seq:?}: {c} vs {p}");
    }
}

/// Law of the number of accepted drafts in one cycle, by brute force over
/// every possible draft sequence.
fn accepted_count_law(
    target: &TabularModel,
    draft: &TabularModel,
    context: &[TokenId],
    draft_len: usize,
    beta: f64,
) -> Vec<f64> {
    let vocab = target.vocab_size();
    let mut law = vec![0.0; draft_len + 1];
    for code in 0..vocab.pow(draft_len as u32) {
        let seq: Vec<u32> = (0..draft_len)
            .map(|i| (code / vocab.pow(i as u32) % vocab) as u32)
            .collect();
        let mut ctx = context.to_vec();
        let mut path = 1.0;
        let mut alive = 1.0;
        let mut weights = vec![0.0; draft_len + 1];
        for (i, &t) in seq.iter().enumerate() {
            let p = draft.next_distribution(&ctx).unwrap().probs()[t as usize];
            let q = target.next_distribution(&ctx).unwrap().probs()[t as usize];
            path *= p;
            if p == 0.0 {
                break;
            }
            let a = ((q / p).min(1.0) + beta).min(1.0);
            weights[i] += alive * (1.0 - a);
            alive *= a;
            ctx.push(TokenId(t));
        }
        weights[draft_len] += alive;
        if path > 0.0 {
            for (slot, w) in law.iter_mut().zip(weights) {
                *slot += path * w;
            }
        }
    }
    law
}

#[test]
fn accepted_count_per_cycle_matches_brute_force() {
    let (target, draft) = models(5);
    let context = tokens(&[2, 0]);
    for beta in [0.0, 0.3] {
        let config = SsdConfig::new(3, 4, beta, 0).unwrap();
        let law = accepted_count_law(&target, &draft, &context, 3, beta);
        assert!((law.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mut rng = RandomStream::from_seed(14);
        let mut counts = [0usize; 4];
        for _ in 0..SAMPLES {
            counts[ssd_cycle(&target, &draft, &context, &config, &mut rng)
                .unwrap()
                .accepted()] += 1;
        }
        for k in 0..=3 {
            assert!(
                within_3_sigma(counts[k], SAMPLES, law[k]),
                "beta {beta} k {k}: {} vs {}",
                counts[k],
                law[k]
            );
        }
    }
}

#[test]
fn first_emitted_token_matches_single_step_law() {
    let (target, draft) = models(6);
    let context = tokens(&[1, 1]);
    let q = target.next_distribution(&context).unwrap();
    let p = draft.next_distribution(&context).unwrap();
    for beta in [0.0, 0.25, 1.0] {
        let step = step_emission_distribution(&q, &p, beta).unwrap();
        let config = SsdConfig::new(2, 1, beta, 0).unwrap();
        let mut rng = RandomStream::from_seed(15);
        let mut counts = [0usize; 3];
        for _ in 0..SAMPLES {
            let r = ssd_decode(&target, &draft, &context, &config, &mut rng).unwrap();
            counts[r.tokens[0].index()] += 1;
        }
        for (i, (&c, &p)) in counts.iter().zip(step.probs()).enumerate() {
            assert!(within_3_sigma(c, SAMPLES, p), "beta {beta} token {i}");
        }
    }
}

#[test]
fn decoded_sequences_pass_chi_square_against_oracle() {
    let (target, draft) = models(7);
    let prefix = tokens(&[0]);
    for beta in [0.0, 0.2] {
        let config = SsdConfig::new(2, 3, beta, 0).unwrap();
        let law = exact_ssd_distribution(&target, &draft, &prefix, &config, 3).unwrap();
        let mut rng = RandomStream::from_seed(16);
        let mut counts: BTreeMap<Vec<TokenId>, usize> = BTreeMap::new();
        for _ in 0..SAMPLES {
            *counts
                .entry(ssd_decode(&target, &draft, &prefix, &config, &mut rng).unwrap().tokens)
                .or_default() += 1;
        }
        let (stat, df, p) = chi_square(&counts, &law, SAMPLES);
        assert!(p > CHI_SQUARE_SIGNIFICANCE, "beta {beta}: chi2 {stat} df {df} p {p}");
    }
}

#[test]
fn lossless_at_beta_zero_across_random_pairs() {
    let mut rng = RandomStream::from_seed(17);
    for case in 0..60 {
        let vocab = 2 + case % 3;
        let target = random_tabular(vocab, case % 3, 0.25, &mut rng);
        let draft = random_tabular(vocab, (case / 3) % 2, 0.25, &mut rng);
        let prefix = tokens(&[(case % vocab) as u32]);
        let draft_len = 1 + case % 4;
        let config = SsdConfig::new(draft_len, 4, 0.0, 0).unwrap();
        let ssd = exact_ssd_distribution(&target, &draft, &prefix, &config, 4).unwrap();
        let ar = exact_ar_distribution(&target, &prefix, 4).unwrap();
        let tv = tv_distance(&ssd, &ar).unwrap();
        assert!(tv < 1e-10, "case {case}: tv {tv}");
    }
}

#[test]
fn worked_single_step_example() {
    let q = Distribution::<f64>::new(vec![0.5, 0.3, 0.2]).unwrap();
    let p = Distribution::<f64>::new(vec![0.2, 0.3, 0.5]).unwrap();
    let a0 = ssd_core::analytic_acceptance_prob(&q, &p, 0.0);
    let a2 = ssd_core::analytic_acceptance_prob(&q, &p, 0.2);
    assert!((a0 - 0.7).abs() < 1e-15);
    assert!((a2 - 0.8).abs() < 1e-15);
    let e = step_emission_distribution(&q, &p, 0.2).unwrap();
    for (got, want) in e.probs().iter().zip([0.4, 0.3, 0.3]) {
        assert!((got - want).abs() < 1e-15, "{got} vs {want}");
    }
}

#[test]
fn relaxed_decoder_drifts_towards_the_draft() {
    // Deterministic draft that always proposes token 1 against a uniform target.
    let target = FnModel::new(2, |_: &[TokenId]| Distribution::<f64>::uniform(2));
    let draft = FnModel::new(2, |_: &[TokenId]| {
        Distribution::<f64>::point_mass(2, TokenId(1)).unwrap()
    });
    let config = SsdConfig::new(1, 1, 0.5, 0).unwrap();
    let law = exact_ssd_distribution(&target, &draft, &[], &config, 1).unwrap();
    // accept with probability 1: min(1, 0.5) + 0.5
    assert!((law.prob(&tokens(&[1])) - 1.0).abs() < 1e-15);
    let config = SsdConfig::new(1, 1, 0.25, 0).unwrap();
    let law = exact_ssd_distribution(&target, &draft, &[], &config, 1).unwrap();
    assert!((law.prob(&tokens(&[1])) - 0.75).abs() < 1e-15);
}
