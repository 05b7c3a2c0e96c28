use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use ssd_cli::config::{Overrides, RunConfig};
use ssd_core::{ssd_decode_seeded, TabularModel};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("ssd-cli-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn ssd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssd")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn fitted_model_reloads_bit_identical() {
    let dir = scratch("fit");
    let corpus = scenario("degraded-draft").join("corpus.txt");
    let out = dir.join("target.txt");
    let o = ssd(&[
        "fit",
        "--corpus",
        s(&corpus),
        "--order",
        "2",
        "--smoothing",
        "0.1",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("cross-entropy"));

    let loaded = TabularModel::load(&out).unwrap();
    let refit = ssd_core::fit_tabular(&ssd_core::Corpus::load(&corpus).unwrap(), 2, 0.1).unwrap();
    assert_eq!(loaded, refit);
    for (ctx, row) in refit.table() {
        let other = &loaded.table()[ctx];
        assert!(row
            .probs()
            .iter()
            .zip(other.probs())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    let draft = dir.join("draft.txt");
    let o = ssd(&[
        "derive-draft",
        "--target",
        s(&out),
        "--corpus",
        s(&corpus),
        "--order",
        "0",
        "--out",
        s(&draft),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(TabularModel::load(&draft).unwrap().order(), 0);
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn malformed_inputs_exit_with_usage_status() {
    let dir = scratch("bad");
    let corpus = dir.join("bad.txt");
    std::fs::write(&corpus, "vocab=3\n0 1 2\n0 7 1\n").unwrap();
    let o = ssd(&["fit", "--corpus", s(&corpus), "--out", s(&dir.join("m.txt"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));

    let o = ssd(&[
        "fit",
        "--corpus",
        s(&dir.join("missing.txt")),
        "--out",
        s(&dir.join("m.txt")),
    ]);
    assert_eq!(o.status.code(), Some(2));

    let conf = dir.join("run.conf");
    std::fs::write(
        &conf,
        format!(
            "target_corpus = {}\ndraft_same_as_target = true\nbetas =\n",
            s(&scenario("identical").join("corpus.txt"))
        ),
    )
    .unwrap();
    let o = ssd(&[
        "sweep",
        "--config",
        s(&conf),
        "--kind",
        "beta",
        "--out",
        s(&dir.join("x.csv")),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("empty beta list"));

    std::fs::write(&conf, "target_corpus = corpus.txt\nbogus_key = 1\n").unwrap();
    let o = ssd(&["decode", "--config", s(&conf)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown key `bogus_key`"));

    let o = ssd(&[
        "decode",
        "--config",
        s(&scenario("identical").join("run.conf")),
        "--beta",
        "1.5",
    ]);
    assert_eq!(o.status.code(), Some(2));

    let o = ssd(&[
        "sweep",
        "--config",
        s(&scenario("identical").join("run.conf")),
        "--kind",
        "beta",
    ]);
    assert_eq!(o.status.code(), Some(2), "sweep without an output path");
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn relaxed_decoding_needs_fewer_target_calls() {
    let mut config = RunConfig::load(&scenario("degraded-draft").join("run.conf")).unwrap();
    config.apply(&Overrides {
        target_len: Some(100),
        ..Overrides::default()
    });
    let (target, draft) = config.build_models().unwrap();
    let calls = |beta: f64| -> usize {
        (0..100)
            .map(|seed| {
                let c = ssd_core::SsdConfig {
                    beta,
                    seed,
                    ..config.ssd
                };
                ssd_decode_seeded(&target, &draft, &config.prefix, &c)
                    .unwrap()
                    .counts
                    .target_calls
            })
            .sum()
    };
    let (strict, relaxed) = (calls(0.0), calls(0.4));
    assert!(relaxed < strict, "{relaxed} >= {strict}");
}

#[test]
fn identical_models_accept_every_draft() {
    let o = ssd(&["decode", "--config", s(&scenario("identical").join("run.conf"))]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.lines().any(|l| l == "acceptance_rate = 1"), "{text}");
    assert!(text.lines().any(|l| l == "speedup_vs_ar = 2"));
    assert!(!text.contains(" accept +-") && !text.contains("resampled"));
}

#[test]
fn decode_output_has_trace_and_metrics() {
    let o = ssd(&[
        "decode",
        "--config",
        s(&scenario("adversarial-draft").join("run.conf")),
        "--target-len",
        "30",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let tokens = text.lines().find_map(|l| l.strip_prefix("tokens: ")).unwrap();
    assert_eq!(tokens.split(' ').count(), 30);
    let cycles = text.lines().filter(|l| l.starts_with("cycle ")).count();
    let calls: usize = text
        .lines()
        .find_map(|l| l.strip_prefix("target_calls = "))
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(cycles, calls);
    for key in ["acceptance_rate", "sim_cost", "rtf_analog", "speedup_vs_ar"] {
        assert!(text.contains(&format!("{key} = ")), "missing {key}");
    }
}

#[test]
fn sweep_writes_csv() {
    let dir = scratch("sweep");
    let csv = dir.join("lens.csv");
    let o = ssd(&[
        "sweep",
        "--config",
        s(&scenario("degraded-draft").join("run.conf")),
        "--kind",
        "draft-len",
        "--trials",
        "5",
        "--out",
        s(&csv),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(ssd_core::bench::CSV_HEADER));
    assert_eq!(lines.count(), 8);
    assert!(stdout(&o).contains("wrote 8 rows"));
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn verify_quick_is_fast_and_green() {
    let start = Instant::now();
    let o = ssd(&["verify", "--level", "quick"]);
    let elapsed = start.elapsed();
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    let text = stdout(&o);
    assert!(text.lines().filter(|l| l.starts_with("PASS ")).count() >= 6);
    assert!(!text.contains("FAIL"));
}
