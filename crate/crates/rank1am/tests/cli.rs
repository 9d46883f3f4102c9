use std::path::Path;
use std::process::{Command, Output};

use rank1am::harness::TRIALS_HEADER;

fn rank1am(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rank1am")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn constants_prints_one_row() {
    let o = rank1am(&["constants", "--lambda", "50"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    let c: f64 = lines[1].split(',').nth(1).unwrap().parse().unwrap();
    assert!((15.0..=50.0).contains(&c));
}

#[test]
fn bad_arguments_exit_2() {
    assert_eq!(code(&rank1am(&["constants", "--lambda", "0.5"])), 2);
    assert_eq!(code(&rank1am(&["run", "--set", "no_such_key=1"])), 2);
    assert_eq!(code(&rank1am(&["run", "--set", "trials"])), 2);
    assert_eq!(code(&rank1am(&["predict", "--model", "cubic", "--lambda", "10", "--alpha0", "1", "--beta0", "1"])), 2);
}

#[test]
fn failed_check_exits_4() {
    // n barely above d: the smallest eigenvalue collapses
    let o = rank1am(&["rmt", "--d", "50", "--lambda-list", "1.1", "--trials", "2", "--check"]);
    assert_eq!(code(&o), 4);
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn run_writes_trials_schema_and_classify_reads_it() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = rank1am(&[
        "--out", out, "--seed", "5", "run", "--svg", "--set", "sweep.model=id,sign", "--set", "d=20", "--set", "lambda=20", "--set", "trials=3",
        "--set", "iters=4",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let rows = csv_rows(&dir.path().join("trials.csv"));
    assert_eq!(rows[0], TRIALS_HEADER);
    // per trial: one init row and a nu and mu row per iteration
    assert_eq!(rows.len() - 1, 2 * 3 * (1 + 2 * 4));
    assert!(rows[1..].iter().all(|r| r.len() == TRIALS_HEADER.len()));
    for name in ["resolved_config.txt", "summary.csv", "deterministic.csv", "errors.csv", "ratio_p0.svg", "ratio_p1.svg"] {
        assert!(dir.path().join(name).exists(), "{name} missing");
    }

    let again = tempfile::tempdir().unwrap();
    let o = rank1am(&["--out", again.path().to_str().unwrap(), "run", "--config", dir.path().join("resolved_config.txt").to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read(dir.path().join("trials.csv")).unwrap(), std::fs::read(again.path().join("trials.csv")).unwrap());

    let o = rank1am(&["classify", "--input", dir.path().join("trials.csv").to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 1 + 6);
}

#[test]
fn classify_rejects_foreign_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.csv");
    std::fs::write(&path, "a,b\n1,2\n").unwrap();
    assert_eq!(code(&rank1am(&["classify", "--input", path.to_str().unwrap()])), 2);
}
