use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use repcost::Dataset;

fn repcost(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_repcost"))
        .args(args)
        .output()
        .expect("spawn repcost")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn dir_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

const QUICK: &[&str] = &["--adam-iters", "200", "--max-iters", "100", "--restarts", "2"];

#[test]
fn help_and_bad_flags() {
    assert_eq!(code(&repcost(&["--help"])), 0);
    assert_eq!(code(&repcost(&["--version"])), 0);
    assert_eq!(code(&repcost(&["train", "--bogus"])), 2);
    assert_eq!(code(&repcost(&["oracle", "--penalty", "huge"])), 2);
    assert_eq!(code(&repcost(&[])), 2);
}

#[test]
fn narrow_networks_need_opt_in() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("narrow");
    let mut args = vec!["train", "--widths", "4", "--out-dir", dir_str(&out)];
    args.extend_from_slice(QUICK);
    let run = repcost(&args);
    assert_eq!(code(&run), 2);
    assert!(String::from_utf8_lossy(&run.stderr).contains("--allow-narrow"));
    assert!(!out.exists());

    args.push("--allow-narrow");
    assert_eq!(code(&repcost(&args)), 0);
    assert!(out.join("net_params.txt").exists());
}

#[test]
fn missing_data_file_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.csv");
    let run = repcost(&["oracle", "--data", dir_str(&missing), "--out-dir", dir_str(tmp.path())]);
    assert_eq!(code(&run), 2);
}

#[test]
fn oracle_rejects_multivariate_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let run = repcost(&["oracle", "--d-in", "2", "--out-dir", dir_str(tmp.path())]);
    assert_eq!(code(&run), 2);
}

#[test]
fn gen_data_writes_the_generated_set() {
    let tmp = tempfile::tempdir().unwrap();
    let run = repcost(&["gen-data", "--seed", "3", "--n", "6", "--d-out", "3", "--out-dir", dir_str(tmp.path())]);
    assert_eq!(code(&run), 0);
    let text = fs::read_to_string(tmp.path().join("data.csv")).unwrap();
    let data = Dataset::from_csv_str(&text).unwrap();
    assert_eq!(data, repcost::tasks::gen_random(6, 1, 3, 3));
}

#[test]
fn oracle_reads_a_data_file() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert_eq!(code(&repcost(&["gen-data", "--seed", "5", "--out-dir", dir_str(&data)])), 0);
    let csv = data.join("data.csv");
    let out = tmp.path().join("oracle");
    let run = repcost(&[
        "oracle", "--data", dir_str(&csv), "--resolution", "64", "--out-dir", dir_str(&out),
    ]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    for name in ["oracle_atoms.csv", "oracle_predictions.csv", "oracle_summary.txt", "oracle_net_params.txt"] {
        assert!(out.join(name).exists(), "{name}");
    }
    let summary = fs::read_to_string(out.join("oracle_summary.txt")).unwrap();
    assert!(summary.contains("converged = true"), "{summary}");
    let net = repcost::net::read_network(&out.join("oracle_net_params.txt")).unwrap();
    assert_eq!(net.1.d_in(), 1);
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "# quick\nn = 5\nd_out = 1\nlambda = 0.5\nresolution = 32\n").unwrap();
    let a = tmp.path().join("a");
    let run = repcost(&["oracle", "--config", dir_str(&cfg), "--lambda", "0.25", "--out-dir", dir_str(&a)]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let data = fs::read_to_string(a.join("oracle_predictions.csv")).unwrap();
    assert!(data.lines().next().unwrap().split(',').count() >= 2);
    let summary = fs::read_to_string(a.join("oracle_summary.txt")).unwrap();
    assert!(summary.contains("lambda = 0.25"), "{summary}");

    fs::write(&cfg, "colour = blue\n").unwrap();
    assert_eq!(code(&repcost(&["oracle", "--config", dir_str(&cfg)])), 2);
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let mut dirs = Vec::new();
    for name in ["one", "two"] {
        let out = tmp.path().join(name);
        let mut args = vec!["train", "--widths", "12", "--seed", "7", "--out-dir", dir_str(&out)];
        args.extend_from_slice(QUICK);
        let run = repcost(&args);
        assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
        dirs.push(out);
    }
    let mut names: Vec<_> = fs::read_dir(&dirs[0]).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(!names.is_empty());
    for name in names {
        let a = fs::read(dirs[0].join(&name)).unwrap();
        let b = fs::read(dirs[1].join(&name)).unwrap();
        assert_eq!(a, b, "{name:?} differs");
    }
}
