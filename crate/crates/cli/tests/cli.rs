use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use clap::CommandFactory;
use paee_cli::config::KEYS;
use paee_cli::Cli;

fn paee(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_paee"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .env_remove("PAEE_SEED")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = paee(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn files(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "resolved_config.txt" {
                out.push((
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

const TINY: &[&str] = &[
    "--gru-hidden",
    "4,4,4",
    "--static-hidden",
    "4",
    "--head-hidden",
    "4,4",
    "--epochs",
    "2",
    "--batch-size",
    "64",
    "--dropout",
    "0.1",
];

#[test]
fn synth_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let stdout = ok(
        &[
            "synth",
            "--subjects",
            "8",
            "--seed",
            "7",
            "--duration-sec",
            "120",
            "--out",
            "a",
        ],
        tmp.path(),
    );
    assert!(stdout.contains("subjects        8"));
    assert!(stdout.contains("sedentary"));
    let dirs = fs::read_dir(tmp.path().join("a"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().is_dir())
        .count();
    assert_eq!(dirs, 8);
    ok(
        &[
            "synth",
            "--subjects",
            "8",
            "--seed",
            "7",
            "--duration-sec",
            "120",
            "--out",
            "b",
        ],
        tmp.path(),
    );
    assert_eq!(files(&tmp.path().join("a")), files(&tmp.path().join("b")));
}

#[test]
fn too_few_subjects() {
    let tmp = tempfile::tempdir().unwrap();
    let out = paee(&["synth", "--subjects", "2", "--out", "x"], tmp.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("insufficient subjects"));
}

#[test]
fn train_eval_predict() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(
        &[
            "synth",
            "--subjects",
            "5",
            "--seed",
            "1",
            "--duration-sec",
            "400",
            "--out",
            "ds",
        ],
        d,
    );
    let mut args = vec![
        "train",
        "--data",
        "ds",
        "--out",
        "m",
        "--seq-size",
        "10",
        "--window-sec",
        "60",
    ];
    args.extend(TINY);
    let stdout = ok(&args, d);
    assert!(stdout.contains("saved"));
    assert!(d.join("m/model.paee").exists());
    let log = fs::read_to_string(d.join("m/training_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);

    ok(
        &[
            "predict",
            "--model",
            "m/model.paee",
            "--recording",
            "ds/S02",
            "--window",
            "60",
            "--out",
            "p",
        ],
        d,
    );
    let pred = fs::read_to_string(d.join("p/predictions.csv")).unwrap();
    // 400 s of input, aligned to the first breath, holds six whole minutes
    assert_eq!(pred.lines().count(), 1 + 6);
    ok(
        &[
            "predict",
            "--model",
            "m/model.paee",
            "--recording",
            "ds/S02",
            "--out",
            "pb",
        ],
        d,
    );
    let per_breath = fs::read_to_string(d.join("pb/predictions.csv")).unwrap();
    assert!(per_breath.starts_with("t,eem_true,eem_pred"));
    assert!(per_breath.lines().count() > 50);

    ok(
        &[
            "eval",
            "--model",
            "m/model.paee",
            "--data",
            "ds",
            "--out",
            "e",
        ],
        d,
    );
    let report = fs::read_to_string(d.join("e/report.csv")).unwrap();
    assert!(report.lines().count() > 5 * 6);

    // a static-branch model cannot score subjects without profiles
    fs::remove_file(d.join("ds/participants.csv")).unwrap();
    let out = paee(
        &[
            "eval",
            "--model",
            "m/model.paee",
            "--data",
            "ds",
            "--out",
            "e2",
        ],
        d,
    );
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("static branch"), "{err}");
}

#[test]
fn sweep_is_deterministic_across_worker_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(
        &[
            "synth",
            "--subjects",
            "4",
            "--seed",
            "3",
            "--duration-sec",
            "300",
            "--out",
            "ds",
        ],
        d,
    );
    let mut base = vec![
        "sweep",
        "--data",
        "ds",
        "--seq-size",
        "4,10",
        "--window-sec",
        "60",
        "--variant",
        "GA,GA_ID",
    ];
    base.extend(TINY);
    let mut one = base.clone();
    one.extend(["--workers", "1", "--out", "w1"]);
    let mut three = base.clone();
    three.extend(["--workers", "3", "--out", "w3"]);
    let summary = ok(&one, d);
    ok(&three, d);
    let a = fs::read(d.join("w1/report.csv")).unwrap();
    let b = fs::read(d.join("w3/report.csv")).unwrap();
    assert_eq!(a, b);
    assert_eq!(summary.lines().filter(|l| l.starts_with("GA")).count(), 4);
}

#[test]
fn paper_grid_sweep_has_28_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(
        &[
            "synth",
            "--subjects",
            "4",
            "--seed",
            "5",
            "--duration-sec",
            "560",
            "--out",
            "ds",
        ],
        d,
    );
    let args = [
        "sweep",
        "--data",
        "ds",
        "--paper-grid",
        "--variant",
        "GA",
        "--gru-hidden",
        "2,2,2",
        "--head-hidden",
        "2,2",
        "--epochs",
        "1",
        "--batch-size",
        "256",
        "--dropout",
        "0",
        "--out",
        "g",
    ];
    let summary = ok(&args, d);
    let rows: Vec<&str> = summary.lines().filter(|l| l.starts_with("GA-")).collect();
    assert_eq!(rows.len(), 28);
    let report = fs::read_to_string(d.join("g/report.csv")).unwrap();
    let configs: BTreeSet<&str> = report
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(configs.len(), 28);
}

#[test]
fn config_file_and_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(
        d.join("run.cfg"),
        "# synthetic\nsubjects = 4\nduration_sec = 60\nseed = 2\n",
    )
    .unwrap();
    ok(&["synth", "--config", "run.cfg", "--out", "a"], d);
    let resolved = fs::read_to_string(d.join("a/resolved_config.txt")).unwrap();
    assert!(resolved.contains("subjects = 4"));
    assert!(resolved.contains("seed = 2"));

    // flags override the file
    ok(
        &["synth", "--config", "run.cfg", "--seed", "9", "--out", "b"],
        d,
    );
    assert!(fs::read_to_string(d.join("b/resolved_config.txt"))
        .unwrap()
        .contains("seed = 9"));

    let out = Command::new(env!("CARGO_BIN_EXE_paee"))
        .args(["synth", "--config", "run.cfg", "--out", "c"])
        .current_dir(d)
        .env("RUST_LOG", "warn")
        .env("PAEE_SEED", "11")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(fs::read_to_string(d.join("c/resolved_config.txt"))
        .unwrap()
        .contains("seed = 11"));

    fs::write(d.join("bad.cfg"), "subjects = 4\ncolour = blue\n").unwrap();
    let out = paee(&["synth", "--config", "bad.cfg", "--out", "x"], d);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("unknown configuration key `colour`"), "{err}");
    assert!(err.contains("bad.cfg:2"), "{err}");
}

#[test]
fn flags_and_keys_are_bijective() {
    let cmd = Cli::command();
    let mut flags = BTreeSet::new();
    let mut collect = |c: &clap::Command| {
        for a in c.get_arguments() {
            if let Some(long) = a.get_long() {
                flags.insert(long.to_string());
            }
        }
    };
    collect(&cmd);
    for sub in cmd.get_subcommands() {
        collect(sub);
    }
    flags.remove("config");
    flags.remove("help");
    flags.remove("version");
    let keys: BTreeSet<String> = KEYS.iter().map(|k| k.replace('_', "-")).collect();
    assert_eq!(flags, keys);
}

#[test]
fn help_lists_every_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let cmd = Cli::command();
    for sub in cmd.get_subcommands() {
        let help = ok(&[sub.get_name(), "--help"], tmp.path());
        for a in sub.get_arguments() {
            if let Some(long) = a.get_long() {
                assert!(
                    help.contains(&format!("--{long}")),
                    "{} --help lacks --{long}",
                    sub.get_name()
                );
            }
        }
        for global in ["--config", "--seed", "--workers", "--out"] {
            assert!(help.contains(global));
        }
    }
}
