use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use resmoco_core::imageio::{list_slices, read_raw_slice};

fn resmoco(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_resmoco"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn resmoco")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = resmoco(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    resmoco(dir, args).status.code().expect("exit code")
}

/// Every file under `dir`, relative path and bytes, excluding timing reports.
fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "timing.json" {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

const TINY_TRAIN: &[&str] = &["--epochs", "2", "--batch-size", "2", "--warmup-steps", "1"];

/// Phantoms, simulation, training and correction into `root/<name>`.
fn pipeline(root: &Path, name: &str) {
    let d = root.join(name);
    fs::create_dir_all(&d).unwrap();
    ok(&d, &["phantoms", "--seed", "5", "--count", "4", "--size", "16", "--out", "ph"]);
    ok(&d, &["simulate", "--seed", "6", "--input", "ph", "--level", "moderate", "--out", "sim", "--events-out", "events.jsonl"]);
    let mut train = vec!["train", "--seed", "7", "--input", "sim", "--out", "model.rsmc"];
    train.extend_from_slice(TINY_TRAIN);
    ok(&d, &train);
    ok(&d, &["correct", "--seed", "8", "--input", "sim", "--checkpoint", "model.rsmc", "--out", "cor"]);
    ok(&d, &["evaluate", "--pred", "cor", "--ref", "sim/clean", "--out", "report.json"]);
}

#[test]
fn stochastic_subcommands_are_reproducible() {
    let root = tempfile::tempdir().unwrap();
    pipeline(root.path(), "a");
    pipeline(root.path(), "b");
    let (a, b) = (snapshot(&root.path().join("a")), snapshot(&root.path().join("b")));
    assert!(a.iter().any(|(p, _)| p == "model.rsmc"));
    assert!(a.iter().any(|(p, _)| p.starts_with("cor/")));
    assert_eq!(a.len(), b.len());
    for ((pa, ba), (pb, bb)) in a.iter().zip(&b) {
        assert_eq!(pa, pb);
        assert!(ba == bb, "{pa} differs between runs");
    }
}

#[test]
fn seed_changes_output() {
    let root = tempfile::tempdir().unwrap();
    let d = root.path();
    ok(d, &["phantoms", "--seed", "1", "--count", "2", "--size", "16", "--out", "a"]);
    ok(d, &["phantoms", "--seed", "2", "--count", "2", "--size", "16", "--out", "b"]);
    assert_ne!(fs::read(d.join("a/phantom_0000.rslc")).unwrap(), fs::read(d.join("b/phantom_0000.rslc")).unwrap());
}

#[test]
fn thread_count_does_not_change_results() {
    let root = tempfile::tempdir().unwrap();
    let d = root.path();
    ok(d, &["phantoms", "--seed", "3", "--count", "6", "--size", "16", "--out", "ph"]);
    ok(d, &["simulate", "--seed", "4", "--input", "ph", "--out", "s1", "--jobs", "1"]);
    ok(d, &["simulate", "--seed", "4", "--input", "ph", "--out", "s3", "--jobs", "3"]);
    assert_eq!(snapshot(&d.join("s1")), snapshot(&d.join("s3")));
}

#[test]
fn oracle_correction_recovers_references() {
    let root = tempfile::tempdir().unwrap();
    let d = root.path();
    ok(d, &["phantoms", "--seed", "9", "--count", "3", "--size", "16", "--out", "ph"]);
    ok(d, &["simulate", "--seed", "9", "--input", "ph", "--level", "heavy", "--out", "sim"]);
    ok(d, &["correct", "--seed", "1", "--input", "sim", "--oracle", "--ref", "sim/clean", "--out", "cor"]);
    for path in list_slices(&d.join("cor")).unwrap() {
        let got = read_raw_slice(&path).unwrap();
        let want = read_raw_slice(&d.join("sim/clean").join(path.file_name().unwrap())).unwrap();
        // The last reverse step has zero variance and returns the oracle estimate.
        assert!(got.max_abs_diff(&want).unwrap() < 1e-12);
    }
    let timing: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("cor/timing.json")).unwrap()).unwrap();
    assert_eq!(timing["images"], 3);
    assert_eq!(timing["steps"], 4);
}

#[test]
fn config_file_mirrors_flags() {
    let root = tempfile::tempdir().unwrap();
    let d = root.path();
    fs::write(d.join("cfg.json"), r#"{"seed": 12, "count": 2, "size": 16, "out": "from_cfg"}"#).unwrap();
    ok(d, &["phantoms", "--config", "cfg.json"]);
    ok(d, &["phantoms", "--seed", "12", "--count", "2", "--size", "16", "--out", "from_flags"]);
    assert_eq!(snapshot(&d.join("from_cfg")), snapshot(&d.join("from_flags")));

    // Flags win over the file.
    ok(d, &["phantoms", "--config", "cfg.json", "--count", "3", "--out", "override"]);
    assert_eq!(list_slices(&d.join("override")).unwrap().len(), 3);

    fs::write(d.join("bad.json"), r#"{"seeed": 1}"#).unwrap();
    assert_eq!(code(d, &["phantoms", "--config", "bad.json"]), 1);
}

#[test]
fn exit_codes() {
    let root = tempfile::tempdir().unwrap();
    let d = root.path();
    // Validation failures.
    assert_eq!(code(d, &["phantoms", "--count", "2", "--out", "x"]), 1);
    assert_eq!(code(d, &["phantoms", "--seed", "1", "--level", "extreme", "--out", "x"]), 1);
    assert_eq!(code(d, &["schedule-dump", "--p=-1"]), 1);
    assert_eq!(code(d, &["no-such-command"]), 1);
    // Missing resources.
    assert_eq!(code(d, &["simulate", "--seed", "1", "--input", "missing", "--out", "x"]), 2);
    assert_eq!(code(d, &["correct", "--seed", "1", "--input", ".", "--checkpoint", "missing.rsmc", "--out", "x"]), 2);
    assert_eq!(code(d, &["--config", "missing.json", "phantoms"]), 2);
    // Help is not an error.
    assert_eq!(code(d, &["--help"]), 0);
}

#[test]
fn divergence_exits_numerical_and_keeps_last_good() {
    let root = tempfile::tempdir().unwrap();
    let d = root.path();
    ok(d, &["phantoms", "--seed", "2", "--count", "2", "--size", "16", "--out", "ph"]);
    ok(d, &["simulate", "--seed", "2", "--input", "ph", "--out", "sim"]);
    let mut args = vec!["train", "--seed", "1", "--input", "sim", "--out", "m.rsmc", "--lr-init", "1e300", "--lr-min", "0"];
    args.extend_from_slice(TINY_TRAIN);
    assert_eq!(code(d, &args), 3);
    assert!(d.join("m.rsmc.last_good").exists());
    assert!(d.join("m.rsmc.last_good.meta.json").exists());
}

#[test]
fn correct_rejects_schedule_mismatch() {
    let root = tempfile::tempdir().unwrap();
    let d = root.path();
    ok(d, &["phantoms", "--seed", "2", "--count", "2", "--size", "16", "--out", "ph"]);
    ok(d, &["simulate", "--seed", "2", "--input", "ph", "--out", "sim"]);
    let mut args = vec!["train", "--seed", "1", "--input", "sim", "--out", "m.rsmc"];
    args.extend_from_slice(TINY_TRAIN);
    ok(d, &args);
    let base = ["correct", "--seed", "1", "--input", "sim", "--checkpoint", "m.rsmc", "--out", "c"];
    assert_eq!(code(d, &[&base[..], &["--gamma", "3"]].concat()), 1);
    // Restating the training schedule is fine.
    ok(d, &[&base[..], &["--gamma", "2"]].concat());
}

#[test]
fn evaluate_fails_on_unmatched_pairs() {
    let root = tempfile::tempdir().unwrap();
    let d = root.path();
    ok(d, &["phantoms", "--seed", "2", "--count", "3", "--size", "16", "--out", "a"]);
    ok(d, &["phantoms", "--seed", "2", "--count", "2", "--size", "16", "--out", "b"]);
    assert_eq!(code(d, &["evaluate", "--pred", "a", "--ref", "b", "--out", "r.csv"]), 1);
    ok(d, &["evaluate", "--pred", "b", "--ref", "b", "--out", "r.csv"]);
    let csv = fs::read_to_string(d.join("r.csv")).unwrap();
    assert!(csv.starts_with("id,psnr_db,ssim,nmse_percent,pearson_r\n"));
    assert_eq!(csv.lines().count(), 1 + 2 + 2);
}

#[test]
fn schedule_dump_csv() {
    let root = tempfile::tempdir().unwrap();
    let d = root.path();
    ok(d, &["schedule-dump", "--steps", "4", "--out", "s.csv"]);
    let csv = fs::read_to_string(d.join("s.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "t,beta,alpha,sigma");
    assert_eq!(rows[1], "1,0.0004,0.0004,0.04");
    assert!(rows[4].starts_with("4,0.999,"));
}

#[test]
fn experiment_writes_tables() {
    let root = tempfile::tempdir().unwrap();
    let d = root.path();
    let args = [
        "experiment", "--seed", "3", "--size", "16", "--n-train", "4", "--n-test", "2", "--level", "minor",
        "--epochs", "2", "--batch-size", "2", "--warmup-steps", "1", "--ablation", "--out", "exp",
    ];
    ok(d, &args);
    let t1 = fs::read_to_string(d.join("exp/table1.csv")).unwrap();
    assert_eq!(t1.lines().count(), 1 + 4);
    let t2 = fs::read_to_string(d.join("exp/table2.csv")).unwrap();
    assert_eq!(t2.lines().count(), 1 + 2);
    assert!(d.join("exp/history_l1l2.csv").exists() && d.join("exp/history_l2.csv").exists());
    let first = fs::read(d.join("exp/report.json")).unwrap();
    ok(d, &[&args[..args.len() - 1], &["exp2"]].concat());
    assert_eq!(first, fs::read(d.join("exp2/report.json")).unwrap());
}

#[test]
fn nifti_input_slices() {
    let root = tempfile::tempdir().unwrap();
    let d = root.path();
    ok(d, &["phantoms", "--seed", "4", "--count", "3", "--size", "16", "--out", "ph", "--nifti", "ph.nii"]);
    ok(d, &["simulate", "--seed", "4", "--input", "ph.nii", "--out", "sim"]);
    let slices = list_slices(&d.join("sim/clean")).unwrap();
    assert_eq!(slices.len(), 3);
    // The stacked phantoms come back as axial slices (f32 precision).
    let back = read_raw_slice(&slices[1]).unwrap();
    let orig = read_raw_slice(&d.join("ph/phantom_0001.rslc")).unwrap();
    assert!(back.max_abs_diff(&orig).unwrap() < 1e-6);
}
