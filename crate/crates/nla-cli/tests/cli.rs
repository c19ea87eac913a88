//! End-to-end tests driving the compiled binary.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use nla_core::bank::AspectId;
use nla_core::corpus::{self, CorpusProfile, ReferenceScore, Split};
use nla_core::jsonl::write_jsonl;
use nla_core::pipeline::{
    AnalyticRecord, DistributionRecord, HolisticRecord, RunManifest, ANALYTIC_SCHEMA,
    DISTRIBUTIONS_SCHEMA, HOLISTIC_SCHEMA, MANIFEST_SCHEMA,
};

fn nla(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nla"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn assert_success(output: &Output) -> String {
    assert!(
        output.status.success(),
        "exit {:?}, stderr: {}",
        output.status.code(),
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn synth_and_score(dir: &Path, n_candidates: &str) {
    assert_success(&nla(
        dir,
        &[
            "synth",
            "--corpus",
            "corpus.jsonl",
            "--refs",
            "refs.jsonl",
            "--planted",
            "planted.jsonl",
            "--n-candidates",
            n_candidates,
            "--seed",
            "7",
        ],
    ));
    assert_success(&nla(
        dir,
        &[
            "score",
            "--corpus",
            "corpus.jsonl",
            "--out",
            "run",
            "--backend",
            "mock",
            "--planted",
            "planted.jsonl",
            "--seed",
            "7",
            "--n-orderings",
            "3",
        ],
    ));
}

/// Verifies the full subcommand chain succeeds and emits every artifact.
#[test]
fn full_pipeline_happy_path() {
    let dir = tempfile::tempdir().unwrap();
    synth_and_score(dir.path(), "8");

    let stdout = assert_success(&nla(
        dir.path(),
        &["evaluate", "--run", "run", "--refs", "refs.jsonl"],
    ));
    assert!(stdout.contains("Q+NLA"), "got: {stdout}");

    let stdout = assert_success(&nla(dir.path(), &["bias", "--run", "run"]));
    assert!(
        stdout.contains("0.0000"),
        "mock bias must be zero: {stdout}"
    );

    assert_success(&nla(
        dir.path(),
        &[
            "fit",
            "--run",
            "run",
            "--refs",
            "refs.jsonl",
            "--alpha",
            "1.0",
        ],
    ));
    assert_success(&nla(
        dir.path(),
        &["stats", "--run", "run", "--refs", "refs.jsonl"],
    ));
    let report = assert_success(&nla(
        dir.path(),
        &["report", "--run", "run", "--refs", "refs.jsonl"],
    ));
    for section in [
        "Run report",
        "Average JSD",
        "Ridge coefficients",
        "Friedman",
    ] {
        assert!(report.contains(section), "missing {section}: {report}");
    }

    for artifact in [
        "run/manifest.json",
        "run/distributions.jsonl",
        "run/analytic.jsonl",
        "run/holistic.jsonl",
        "run/models.jsonl",
        "run/evaluation.json",
        "run/evaluation.csv",
        "run/bias.json",
        "run/bias.csv",
        "run/fit.json",
        "run/beta.csv",
        "run/stats.json",
        "run/nemenyi.csv",
        "run/report.txt",
    ] {
        assert!(dir.path().join(artifact).exists(), "missing {artifact}");
    }
    let beta_csv = std::fs::read_to_string(dir.path().join("run/beta.csv")).unwrap();
    assert_eq!(
        beta_csv.lines().count(),
        11,
        "header plus one row per aspect"
    );
}

/// Verifies a warm-cache rerun makes zero backend calls and reproduces the
/// run byte for byte.
#[test]
fn warm_rerun_hits_cache_only() {
    let dir = tempfile::tempdir().unwrap();
    synth_and_score(dir.path(), "2");
    let first = std::fs::read(dir.path().join("run/distributions.jsonl")).unwrap();

    let stdout = assert_success(&nla(
        dir.path(),
        &[
            "score",
            "--corpus",
            "corpus.jsonl",
            "--out",
            "run",
            "--backend",
            "mock",
            "--planted",
            "planted.jsonl",
            "--seed",
            "7",
            "--n-orderings",
            "3",
        ],
    ));
    assert!(
        stdout.contains("240 hits, 0 backend calls"),
        "got: {stdout}"
    );
    let second = std::fs::read(dir.path().join("run/distributions.jsonl")).unwrap();
    assert_eq!(first, second);
}

/// Verifies a config file supplies defaults and explicit flags override it.
#[test]
fn config_file_defaults_are_flag_overridable() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("nla.json"),
        "{\"seed\": 9, \"n_orderings\": 2}\n",
    )
    .unwrap();
    assert_success(&nla(
        dir.path(),
        &[
            "synth",
            "--corpus",
            "corpus.jsonl",
            "--refs",
            "refs.jsonl",
            "--planted",
            "planted.jsonl",
            "--n-candidates",
            "1",
            "--seed",
            "7",
        ],
    ));
    assert_success(&nla(
        dir.path(),
        &[
            "score",
            "--config",
            "nla.json",
            "--corpus",
            "corpus.jsonl",
            "--out",
            "run-a",
            "--backend",
            "mock",
            "--planted",
            "planted.jsonl",
        ],
    ));
    let manifest = std::fs::read_to_string(dir.path().join("run-a/manifest.json")).unwrap();
    assert!(manifest.contains("\"seed\": 9"), "got: {manifest}");
    assert!(manifest.contains("\"n_orderings\": 2"), "got: {manifest}");

    assert_success(&nla(
        dir.path(),
        &[
            "score",
            "--config",
            "nla.json",
            "--corpus",
            "corpus.jsonl",
            "--out",
            "run-b",
            "--backend",
            "mock",
            "--planted",
            "planted.jsonl",
            "--seed",
            "11",
        ],
    ));
    let manifest = std::fs::read_to_string(dir.path().join("run-b/manifest.json")).unwrap();
    assert!(manifest.contains("\"seed\": 11"), "got: {manifest}");
}

/// Verifies configuration failures exit with code 2.
#[test]
fn missing_corpus_exits_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let output = nla(
        dir.path(),
        &[
            "score",
            "--corpus",
            "absent.jsonl",
            "--out",
            "run",
            "--backend",
            "mock",
            "--planted",
            "also-absent.jsonl",
        ],
    );
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("does not exist"), "got: {stderr}");
}

/// Verifies validation failures exit with code 3.
#[test]
fn mismatched_refs_exit_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    synth_and_score(dir.path(), "2");
    let refs = vec![ReferenceScore {
        candidate_id: "someone-else".into(),
        parts: BTreeMap::from([(1u8, 3.0)]),
        overall: 3.0,
    }];
    corpus::save_references(&dir.path().join("other-refs.jsonl"), &refs).unwrap();
    let output = nla(
        dir.path(),
        &["evaluate", "--run", "run", "--refs", "other-refs.jsonl"],
    );
    assert_eq!(
        output.status.code(),
        Some(3),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
}

/// Verifies transport failures exit with code 4.
#[test]
fn unreachable_endpoint_exits_transport_code() {
    let dir = tempfile::tempdir().unwrap();
    assert_success(&nla(
        dir.path(),
        &[
            "synth",
            "--corpus",
            "corpus.jsonl",
            "--refs",
            "refs.jsonl",
            "--planted",
            "planted.jsonl",
            "--n-candidates",
            "1",
            "--seed",
            "7",
        ],
    ));
    let output = nla(
        dir.path(),
        &[
            "score",
            "--corpus",
            "corpus.jsonl",
            "--out",
            "run",
            "--backend",
            "http",
            "--endpoint",
            "http://127.0.0.1:1/v1/completions",
            "--model",
            "m",
            "--max-attempts",
            "1",
            "--timeout-secs",
            "2",
        ],
    );
    assert_eq!(
        output.status.code(),
        Some(4),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
}

/// Verifies an all-tied rank matrix exits with the degenerate-statistics
/// code 5: a crafted run where every aspect mean equals the reference.
#[test]
fn all_tied_stats_exit_degenerate_code() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    std::fs::create_dir_all(&run).unwrap();

    #[derive(serde::Serialize)]
    struct Header {
        schema: String,
    }
    let manifest = RunManifest {
        schema: MANIFEST_SCHEMA.to_string(),
        seed: 0,
        n_orderings: 1,
        bank_version: "crafted".into(),
        template_hash: "0".into(),
        model_id: "crafted".into(),
        top_n: 0,
        profile: CorpusProfile::si(),
    };
    std::fs::write(
        run.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).unwrap() + "\n",
    )
    .unwrap();
    write_jsonl(
        &run.join("distributions.jsonl"),
        &Header {
            schema: DISTRIBUTIONS_SCHEMA.into(),
        },
        &Vec::<DistributionRecord>::new(),
    )
    .unwrap();

    let mut analytic = Vec::new();
    let mut holistic = Vec::new();
    let mut refs = Vec::new();
    for cand in ["cand-a", "cand-b", "cand-c"] {
        let aspects: BTreeMap<AspectId, f64> = AspectId::ALL.iter().map(|&a| (a, 3.0)).collect();
        analytic.push(AnalyticRecord {
            response_id: format!("{cand}-p1"),
            candidate_id: cand.to_string(),
            part: 1,
            split: Split::Dev,
            aspects,
            holistic: 3.0,
        });
        holistic.push(HolisticRecord {
            candidate_id: cand.to_string(),
            split: Split::Dev,
            part_scores: BTreeMap::from([(1u8, 3.0)]),
            overall: 3.0,
            missing_parts: vec![3, 4, 5],
        });
        refs.push(ReferenceScore {
            candidate_id: cand.to_string(),
            parts: BTreeMap::from([(1u8, 3.0)]),
            overall: 3.0,
        });
    }
    write_jsonl(
        &run.join("analytic.jsonl"),
        &Header {
            schema: ANALYTIC_SCHEMA.into(),
        },
        &analytic,
    )
    .unwrap();
    write_jsonl(
        &run.join("holistic.jsonl"),
        &Header {
            schema: HOLISTIC_SCHEMA.into(),
        },
        &holistic,
    )
    .unwrap();
    corpus::save_references(&dir.path().join("refs.jsonl"), &refs).unwrap();

    let output = nla(
        dir.path(),
        &["stats", "--run", "run", "--refs", "refs.jsonl"],
    );
    assert_eq!(
        output.status.code(),
        Some(5),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("tied"), "got: {stderr}");
}

/// Verifies --help documents every subcommand.
#[test]
fn help_lists_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let output = nla(dir.path(), &["--help"]);
    let stdout = String::from_utf8_lossy(&output.stdout);
    for sub in [
        "synth", "score", "evaluate", "bias", "fit", "stats", "report",
    ] {
        assert!(stdout.contains(sub), "missing {sub}: {stdout}");
    }
}
