//! Integration tests driving the `p2nia` binary end to end.

use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use p2nia_core::metrics::{Estimator, FairnessReport};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_p2nia"));
    for (key, _) in std::env::vars_os() {
        if key.to_string_lossy().starts_with("P2NIA_") {
            cmd.env_remove(key);
        }
    }
    cmd
}

fn run_ok(args: &[&str]) -> Output {
    let output = bin().args(args).output().unwrap();
    assert!(
        output.status.success(),
        "p2nia {args:?} failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

fn exit_code(args: &[&str]) -> i32 {
    bin().args(args).output().unwrap().status.code().unwrap()
}

/// Standard fixture: benchmark data, a trained model, and a held-out
/// audit file, all inside the given directory.
struct Fixture {
    desk: String,
    schema: String,
    model: String,
    test: String,
}

fn fixture(dir: &Path) -> Fixture {
    let path = |name: &str| dir.join(name).display().to_string();
    let f = Fixture {
        desk: path("desk.csv"),
        schema: path("desk.schema.json"),
        model: path("model.json"),
        test: path("test.csv"),
    };
    run_ok(&[
        "make-desk-data", "--rows", "2500", "--seed", "7",
        "--out-dir", &dir.display().to_string(),
    ]);
    run_ok(&[
        "train", "--dataset", &f.desk, "--schema", &f.schema,
        "--seed", "1", "--model-out", &f.model, "--test-out", &f.test,
    ]);
    f
}

#[test]
fn offline_pipeline_produces_a_parseable_report() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixture(dir.path());
    let release = dir.path().join("release.txt").display().to_string();
    let report_path = dir.path().join("report.txt");
    run_ok(&[
        "privatize", "--dataset", &f.test, "--schema", &f.schema, "--model", &f.model,
        "--mechanism", "grr", "--epsilon", "8", "--n-prime", "400", "--seed", "5",
        "--out", &release,
    ]);
    run_ok(&[
        "audit", "--release", &release,
        "--out", &report_path.display().to_string(),
    ]);
    let report = FairnessReport::from_text(&std::fs::read_to_string(&report_path).unwrap())
        .unwrap();
    assert_eq!(report.estimator, Estimator::GrrDebiased);
    assert_eq!(report.n_effective, 400);
    assert!(report.demographic_parity.is_some());
    assert!(report.equalized_odds.is_some());
}

#[test]
fn report_on_stdout_matches_report_file() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixture(dir.path());
    let release = dir.path().join("release.txt").display().to_string();
    run_ok(&[
        "privatize", "--dataset", &f.test, "--schema", &f.schema, "--model", &f.model,
        "--mechanism", "synth", "--epsilon", "6", "--n-prime", "300", "--seed", "2",
        "--out", &release,
    ]);
    let to_stdout = run_ok(&["audit", "--release", &release]);
    let report_path = dir.path().join("report.txt");
    run_ok(&["audit", "--release", &release, "--out", &report_path.display().to_string()]);
    assert_eq!(to_stdout.stdout, std::fs::read(&report_path).unwrap());
}

#[test]
fn env_vars_stand_in_for_flags_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixture(dir.path());
    let by_flag = dir.path().join("flag.txt");
    let by_env = dir.path().join("env.txt");
    run_ok(&[
        "privatize", "--dataset", &f.test, "--schema", &f.schema, "--model", &f.model,
        "--mechanism", "grr", "--epsilon", "3", "--n-prime", "200", "--seed", "5",
        "--out", &by_flag.display().to_string(),
    ]);
    let output = bin()
        .arg("privatize")
        .env("P2NIA_DATASET", &f.test)
        .env("P2NIA_SCHEMA", &f.schema)
        .env("P2NIA_MODEL", &f.model)
        .env("P2NIA_MECHANISM", "grr")
        .env("P2NIA_EPSILON", "3")
        .env("P2NIA_N_PRIME", "200")
        .env("P2NIA_SEED", "5")
        .env("P2NIA_OUT", by_env.display().to_string())
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "env-driven privatize failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    assert_eq!(
        std::fs::read(&by_flag).unwrap(),
        std::fs::read(&by_env).unwrap()
    );

    // An explicit flag overrides the environment.
    let by_override = dir.path().join("override.txt");
    let output = bin()
        .args([
            "privatize", "--dataset", &f.test, "--schema", &f.schema, "--model", &f.model,
            "--mechanism", "grr", "--epsilon", "3", "--n-prime", "200", "--seed", "5",
            "--out", &by_override.display().to_string(),
        ])
        .env("P2NIA_SEED", "999")
        .output()
        .unwrap();
    assert!(output.status.success());
    assert_eq!(
        std::fs::read(&by_flag).unwrap(),
        std::fs::read(&by_override).unwrap()
    );
}

#[test]
fn usage_data_and_protocol_failures_use_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixture(dir.path());

    // Usage problems: clap's domain.
    assert_eq!(exit_code(&["no-such-command"]), 1);
    assert_eq!(exit_code(&["privatize"]), 1);
    assert_eq!(
        exit_code(&[
            "privatize", "--dataset", &f.test, "--schema", &f.schema, "--model", &f.model,
            "--mechanism", "telepathy", "--epsilon", "1", "--n-prime", "10", "--out", "x",
        ]),
        1
    );
    // Audit needs exactly one source.
    assert_eq!(exit_code(&["audit"]), 1);

    // Data problems.
    assert_eq!(
        exit_code(&[
            "train", "--dataset", "/nonexistent.csv", "--schema", &f.schema,
            "--model-out", "x",
        ]),
        2
    );
    let junk_schema = dir.path().join("junk.json");
    std::fs::write(&junk_schema, "{").unwrap();
    assert_eq!(
        exit_code(&[
            "train", "--dataset", &f.desk, "--schema", &junk_schema.display().to_string(),
            "--model-out", "x",
        ]),
        2
    );

    // Protocol problems.
    let junk_release = dir.path().join("junk-release.txt");
    std::fs::write(&junk_release, "not a release\n").unwrap();
    assert_eq!(
        exit_code(&["audit", "--release", &junk_release.display().to_string()]),
        3
    );
    assert_eq!(
        exit_code(&[
            "privatize", "--dataset", &f.test, "--schema", &f.schema, "--model", &f.model,
            "--mechanism", "grr", "--epsilon", "0", "--n-prime", "10",
        ]),
        3
    );
    assert_eq!(
        exit_code(&[
            "privatize", "--dataset", &f.test, "--schema", &f.schema, "--model", &f.model,
            "--mechanism", "grr", "--epsilon", "1", "--n-prime", "10",
            "--protected", "shoe_size",
        ]),
        3
    );

    // Help and version are not errors.
    assert_eq!(exit_code(&["--help"]), 0);
    assert_eq!(exit_code(&["--version"]), 0);
}

#[test]
fn bias_demo_emits_well_formed_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("shift.csv");
    run_ok(&[
        "bias-demo", "--alphas", "0,0.2,0.4", "--n", "4000", "--seed", "3",
        "--out", &out.display().to_string(),
    ]);
    let mut reader = csv::Reader::from_path(&out).unwrap();
    assert_eq!(
        reader.headers().unwrap(),
        &csv::StringRecord::from(vec!["alpha", "analytic_gap", "empirical_error", "n"])
    );
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 3);
    for (row, expected_alpha) in rows.iter().zip([0.0, 0.2, 0.4]) {
        let alpha: f64 = row[0].parse().unwrap();
        let gap: f64 = row[1].parse().unwrap();
        assert_eq!(alpha, expected_alpha);
        assert!(
            (gap - expected_alpha).abs() < 1e-12,
            "gap {gap} should equal the shift {expected_alpha}"
        );
        assert_eq!(row[3].parse::<u64>().unwrap(), 4000);
    }
}

#[test]
fn serve_answers_an_online_audit() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixture(dir.path());
    let mut server = bin()
        .args([
            "serve", "--dataset", &f.test, "--schema", &f.schema, "--model", &f.model,
            "--addr", "127.0.0.1:0", "--base-seed", "44", "--platform-id", "cli-test",
        ])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    // The bound address is announced on stderr once the listener is up.
    let stderr = server.stderr.take().unwrap();
    let mut lines = std::io::BufReader::new(stderr).lines();
    let addr = loop {
        let line = lines.next().expect("server exited before listening").unwrap();
        if let Some(rest) = line.split("listening on ").nth(1) {
            break rest.trim().to_string();
        }
    };

    let release_out: PathBuf = dir.path().join("online-release.txt");
    let output = run_ok(&[
        "audit", "--server", &format!("http://{addr}"), "--mechanism", "grr",
        "--epsilon", "9", "--n-prime", "250",
        "--release-out", &release_out.display().to_string(),
    ]);
    server.kill().unwrap();
    server.wait().unwrap();

    let report = FairnessReport::from_text(&String::from_utf8(output.stdout).unwrap()).unwrap();
    assert_eq!(report.estimator, Estimator::GrrDebiased);
    assert_eq!(report.n_effective, 250);
    // The saved release evaluates offline to the same report.
    let offline = run_ok(&["audit", "--release", &release_out.display().to_string()]);
    assert_eq!(
        FairnessReport::from_text(&String::from_utf8(offline.stdout).unwrap()).unwrap(),
        report
    );
}
