//! End-to-end tests of the binary: exit codes, file round trips and the
//! worked-example pipelines.

use std::path::Path;
use std::process::{Command, Output};

fn lumpkit(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lumpkit"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).to_string()
}

#[test]
fn unknown_flag_exits_with_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = lumpkit(&["--definitely-not-a-flag"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_fixture_is_a_domain_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = lumpkit(&["fixture", "CHAIN_Z"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("CHAIN_Z"));
}

#[test]
fn fixture_matrix_round_trips_and_validates() {
    let dir = tempfile::tempdir().unwrap();
    let out = lumpkit(&["fixture", "CHAIN_C", "-o", "fc"], dir.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let out = lumpkit(&["validate", "fc/chain.mtx"], dir.path());
    assert!(out.status.success());
    assert!(stdout(&out).contains("ok"));

    // Rewriting the parsed matrix reproduces identical numbers.
    let text = std::fs::read_to_string(dir.path().join("fc/chain.mtx")).unwrap();
    let parsed = lumpkit::io::read_matrix(text.as_bytes()).unwrap();
    let mut rewritten = Vec::new();
    lumpkit::io::write_matrix(&parsed, &mut rewritten).unwrap();
    assert_eq!(text, String::from_utf8(rewritten).unwrap());
}

#[test]
fn validate_reports_violations_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("bad.mtx"),
        "%%MatrixMarket matrix coordinate real general\n2 2 3\n1 1 0.5\n1 2 0.3\n2 2 1.0\n",
    )
    .unwrap();
    let out = lumpkit(&["validate", "--kind", "dtmc", "bad.mtx"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stdout(&out).contains("row 1"));
}

#[test]
fn lumpability_verdicts_for_chain_c() {
    let dir = tempfile::tempdir().unwrap();
    assert!(lumpkit(&["fixture", "CHAIN_C", "-o", "fc"], dir.path())
        .status
        .success());
    let out = lumpkit(
        &[
            "lumpability",
            "--partition",
            "fc/partition.json",
            "--alpha",
            "fc/alpha.txt",
            "fc/chain.mtx",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = stdout(&out);
    assert!(text.contains("ordinarily lumpable: fails"));
    assert!(text.contains("exactly lumpable: fails"));
    assert!(text.contains("deflatable: fails"));
    assert!(text.contains("dynamic-exact (partition): holds"));
}

#[test]
fn schur_bounds_pipeline_reports_one_eighteenth() {
    let dir = tempfile::tempdir().unwrap();
    assert!(lumpkit(&["fixture", "CHAIN_B", "-o", "fb"], dir.path())
        .status
        .success());
    let out = lumpkit(
        &[
            "schur",
            "--dim",
            "2",
            "--p0",
            "fb/p0.txt",
            "-o",
            "model",
            "fb/chain.mtx",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(dir.path().join("model/manifest.json").exists());
    assert!(dir.path().join("model/run_manifest.json").exists());

    let out = lumpkit(
        &[
            "bounds",
            "--model",
            "model",
            "--p0",
            "fb/p0.txt",
            "--k",
            "1",
            "fb/chain.mtx",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = stdout(&out);
    let row: Vec<&str> = text
        .lines()
        .find(|l| l.starts_with("1,"))
        .expect("k=1 row")
        .split(',')
        .collect();
    let actual: f64 = row[5].parse().unwrap();
    assert!((actual - 1.0 / 18.0).abs() < 1e-10, "actual {actual}");
}

#[test]
fn search_refine_recovers_planted_partition_via_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = lumpkit(
        &[
            "gen",
            "exactly-lumpable",
            "--n",
            "40",
            "--m",
            "5",
            "--seed",
            "7",
            "-o",
            "g",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let out = lumpkit(
        &[
            "search",
            "refine",
            "--eps",
            "0",
            "-o",
            "found.json",
            "g/chain.mtx",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary = stdout(&out);
    assert!(summary.starts_with("m="), "summary line missing: {summary}");
    let found = lumpkit::io::read_partition_file(&dir.path().join("found.json")).unwrap();
    let planted = lumpkit::io::read_partition_file(&dir.path().join("g/partition.json")).unwrap();
    assert!(found.is_coarsening_of(&planted) || found.same_grouping(&planted));
    let err_bound: f64 = summary
        .lines()
        .next()
        .unwrap()
        .split("err_bound=")
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    assert!(err_bound <= 1e-9, "err_bound {err_bound}");
}

#[test]
fn transient_and_stationary_on_stdin() {
    let dir = tempfile::tempdir().unwrap();
    assert!(lumpkit(&["fixture", "CHAIN_B", "-o", "fb"], dir.path())
        .status
        .success());
    let out = lumpkit(
        &["transient", "--p0", "fb/p0.txt", "--k", "1", "fb/chain.mtx"],
        dir.path(),
    );
    assert!(out.status.success());
    let values: Vec<f64> = stdout(&out).lines().map(|l| l.parse().unwrap()).collect();
    assert!((values[0] - 11.0 / 60.0).abs() < 1e-14);
    assert!((values[1] - 49.0 / 120.0).abs() < 1e-14);

    let out = lumpkit(&["stationary", "fb/chain.mtx"], dir.path());
    assert!(out.status.success());
    let pi: Vec<f64> = stdout(&out).lines().map(|l| l.parse().unwrap()).collect();
    assert!((pi[0] - 7.0 / 25.0).abs() < 1e-12);
    assert!((pi[2] - 2.0 / 5.0).abs() < 1e-12);
}

#[test]
fn experiment_emits_csv_schema() {
    let dir = tempfile::tempdir().unwrap();
    let out = lumpkit(
        &[
            "experiment",
            "--n",
            "24",
            "--m",
            "4",
            "--seeds",
            "2",
            "--eps-grid",
            "0.1",
            "--algorithms",
            "svd-dir,refine",
            "--jobs",
            "2",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "algorithm,eps,aggregates,err_bound,wall_ms,seed"
    );
    assert_eq!(lines.count(), 4);
}

#[test]
fn aggregate_builds_model_dir_with_alpha_modes() {
    let dir = tempfile::tempdir().unwrap();
    assert!(lumpkit(&["fixture", "CHAIN_A", "-o", "fa"], dir.path())
        .status
        .success());
    std::fs::write(dir.path().join("p0.txt"), "0.2\n0.3\n0.5\n").unwrap();
    let out = lumpkit(
        &[
            "aggregate",
            "--partition",
            "fa/partition.json",
            "--alpha",
            "fa/alpha.txt",
            "--p0",
            "p0.txt",
            "-o",
            "model",
            "fa/chain.mtx",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let model = lumpkit::io::read_model_dir(&dir.path().join("model")).unwrap();
    assert_eq!(model.m(), 2);
    assert!(model.stochastic_flag);
    // Pinned reduced dynamics of the fixture.
    assert!((model.dynamics[(0, 0)] - 5.0 / 8.0).abs() < 1e-14);
}

#[test]
fn coarsest_partition_of_cycle_is_whole_space() {
    let dir = tempfile::tempdir().unwrap();
    assert!(lumpkit(&["fixture", "CHAIN_CYC", "-o", "fc"], dir.path())
        .status
        .success());
    let out = lumpkit(&["coarsest", "fc/chain.mtx"], dir.path());
    assert!(out.status.success());
    let partition = lumpkit::io::partition_from_json(&stdout(&out)).unwrap();
    assert_eq!(partition.m(), 1);
}
