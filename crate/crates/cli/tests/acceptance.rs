//! Acceptance gate, binary side: end-to-end reproducibility and the
//! command-line contract (exit codes, configuration overrides).

use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

const BIN: &str = env!("CARGO_BIN_EXE_neurotext");

/// A deliberately small but complete configuration: every stage runs, both
/// feature modes are exercised, and the whole pipeline finishes in seconds.
const QUICK: &[&str] = &[
    "--set",
    "corpus.sentence_count=40",
    "--set",
    "rvq.epochs=2",
    "--set",
    "mdlm.pretrain_epochs=1",
    "--set",
    "mdlm.sft_epochs=2",
    "--set",
    "baseline.epochs=2",
    "--set",
    "eval.steps=4",
];

fn neurotext(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .output()
        .expect("failed to launch the pipeline binary")
}

fn run_full(out: &Path, seed: u64) {
    let seed = seed.to_string();
    let mut args = vec!["run", "--seed", &seed, "--out", out.to_str().unwrap()];
    args.extend_from_slice(QUICK);
    let output = neurotext(&args);
    assert!(
        output.status.success(),
        "pipeline run failed:\n{}",
        String::from_utf8_lossy(&output.stderr)
    );
}

#[test]
fn criterion_10_same_seed_runs_are_byte_identical() {
    let started = Instant::now();
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    run_full(dir_a.path(), 17);
    run_full(dir_b.path(), 17);

    for name in ["report.json", "report.txt"] {
        let a = std::fs::read(dir_a.path().join(name)).unwrap();
        let b = std::fs::read(dir_b.path().join(name)).unwrap();
        assert!(!a.is_empty(), "{name} is empty");
        assert_eq!(a, b, "{name} differs between identical-seed runs");
    }

    // The reports must carry results for both models in both feature modes.
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir_a.path().join("report.json")).unwrap())
            .unwrap();
    for mode in ["word", "sentence"] {
        for model in ["diffusion", "baseline"] {
            assert!(
                report["modes"][mode][model]["metrics"]["bleu1"].is_number(),
                "report.json lacks {mode}/{model} BLEU"
            );
        }
    }

    let secs = started.elapsed().as_secs_f64();
    println!("ACCEPTANCE 10 seeded-reproducibility PASS ({secs:.0}s, two full runs)");
}

#[test]
fn cli_contract_rejects_unknown_config_key() {
    let dir = tempfile::tempdir().unwrap();
    let out = neurotext(&[
        "synth",
        "--out",
        dir.path().to_str().unwrap(),
        "--set",
        "corpus.bogus_knob=3",
    ]);
    assert_eq!(out.status.code(), Some(2), "unknown key must exit 2");
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("bogus_knob"),
        "error should name the offending key"
    );
}

#[test]
fn cli_contract_reports_missing_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = neurotext(&["generate", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "missing upstream artifact must exit 3");
}

#[test]
fn cli_contract_refuses_stale_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().to_str().unwrap();
    let synth = neurotext(&["synth", "--out", path, "--seed", "5"]);
    assert!(synth.status.success());
    let split = neurotext(&["clean-split", "--out", path, "--seed", "6"]);
    assert_eq!(
        split.status.code(),
        Some(2),
        "an artifact written under a different configuration must be refused"
    );
}
