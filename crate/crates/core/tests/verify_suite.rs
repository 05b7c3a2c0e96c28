use std::time::Instant;

use ssd_core::models::Distribution;
use ssd_core::ssd::Residual;
use ssd_core::verify::{check_decode_distribution, check_losslessness, run_suite, VerifyLevel, VerifyOptions};

/// Residual with its mass rotated by one token: an off-by-one bug.
fn shifted_residual(q: &Distribution<f64>, p: &Distribution<f64>) -> Residual<f64> {
    let good = ssd_core::ssd::residual_distribution(q, p);
    let mut probs = good.dist.probs().to_vec();
    probs.rotate_right(1);
    Residual {
        dist: Distribution::new(probs).unwrap(),
        fell_back: good.fell_back,
    }
}

/// Draws from the target instead of the residual.
fn target_as_residual(q: &Distribution<f64>, _: &Distribution<f64>) -> Residual<f64> {
    Residual {
        dist: q.clone(),
        fell_back: false,
    }
}

#[test]
fn quick_suite_passes_fast() {
    let start = Instant::now();
    let report = run_suite(&VerifyOptions::new(VerifyLevel::Quick, 0));
    assert!(report.passed(), "{report}");
    assert!(start.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn full_level_checks_at_least_fifty_pairs() {
    assert!(VerifyLevel::Full.model_pairs() >= 50);
    let r = check_losslessness(&VerifyOptions::new(VerifyLevel::Full, 1));
    assert!(r.passed, "{r}");
    assert!(r
        .detail
        .starts_with(&format!("{} pairs", VerifyLevel::Full.model_pairs())));
}

#[test]
fn broken_residual_rules_are_caught() {
    for rule in [shifted_residual as ssd_core::ssd::ResidualRule<f64>, target_as_residual] {
        let opts = VerifyOptions {
            residual: rule,
            ..VerifyOptions::new(VerifyLevel::Quick, 0)
        };
        let lossless = check_losslessness(&opts);
        assert!(!lossless.passed, "{lossless}");
        // sampler and oracle share the rule, so they still agree with each other
        let sampled = check_decode_distribution(&opts);
        assert!(sampled.passed, "{sampled}");
        assert!(!run_suite(&opts).passed());
    }
}

#[test]
fn suite_output_is_reproducible() {
    let a = run_suite(&VerifyOptions::new(VerifyLevel::Quick, 7)).to_string();
    let b = run_suite(&VerifyOptions::new(VerifyLevel::Quick, 7)).to_string();
    assert_eq!(a, b);
}
