//! End-to-end exercises of the command-line binary at miniature scale: every
//! subcommand runs for real (tiny splits, a handful of iterations), and the
//! artifacts each one promises must appear and parse.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_glyphspot"))
}

/// Miniature run configuration, exercised through `--config`.
fn write_tiny_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("tiny.cfg");
    std::fs::write(
        &path,
        "# miniature sizes for CLI tests\n\
         det_train_scenes = 4\n\
         rec_train_crops = 6\n\
         bridge_train_scenes = 4\n\
         test_scenes = 3\n\
         curve_scenes = 2\n\
         det_iters = 3\n\
         rec_iters = 3\n\
         bridge_iters = 4\n\
         e2e_iters = 2\n\
         finetune_iters = 2\n\
         batch_size = 2\n\
         curve_every = 2\n",
    )
    .unwrap();
    path
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary spawns");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn run_err(cmd: &mut Command) -> String {
    let out = cmd.output().expect("binary spawns");
    assert!(!out.status.success(), "command unexpectedly succeeded");
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn every_subcommand_round_trips_through_its_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let cfg_arg = cfg.to_str().unwrap();

    // Dataset export.
    let data_dir = dir.path().join("data");
    run_ok(bin().args([
        "gen-data",
        "--seed",
        "5",
        "--out",
        data_dir.to_str().unwrap(),
        "--config",
        cfg_arg,
    ]));
    assert!(data_dir.join("det_train/scene_000000.pgm").exists());
    assert!(data_dir.join("rec_train.jsonl").exists());
    let jsonl = std::fs::read_to_string(data_dir.join("test.jsonl")).unwrap();
    assert_eq!(jsonl.lines().count(), 3);

    // Stage training.
    let run_dir = dir.path().join("run");
    run_ok(bin().args([
        "train-det",
        "--seed",
        "5",
        "--out",
        run_dir.to_str().unwrap(),
        "--config",
        cfg_arg,
    ]));
    run_ok(bin().args([
        "train-rec",
        "--seed",
        "5",
        "--out",
        run_dir.to_str().unwrap(),
        "--config",
        cfg_arg,
    ]));
    let det = run_dir.join("det.ckpt");
    let rec = run_dir.join("rec.ckpt");
    assert!(det.exists() && rec.exists());

    run_ok(bin().args([
        "train-bridge",
        "--seed",
        "5",
        "--det",
        det.to_str().unwrap(),
        "--rec",
        rec.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
        "--curve",
        "--config",
        cfg_arg,
    ]));
    let bridged = run_dir.join("bridged.ckpt");
    assert!(bridged.exists());
    let curves = std::fs::read_to_string(run_dir.join("curves.csv")).unwrap();
    assert!(curves.starts_with("variant,iteration,e2e_F\nzero,0,"));

    // Evaluation of both assembly styles.
    let out = run_ok(bin().args([
        "eval",
        "--seed",
        "5",
        "--paradigm",
        "two_step",
        "--det",
        det.to_str().unwrap(),
        "--rec",
        rec.to_str().unwrap(),
        "--config",
        cfg_arg,
    ]));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("paradigm,det_P"), "missing header: {stdout}");
    assert!(stdout.contains("two_step,"), "missing row: {stdout}");

    let eval_dir = dir.path().join("eval");
    run_ok(bin().args([
        "eval",
        "--seed",
        "5",
        "--paradigm",
        "bridge",
        "--ckpt",
        bridged.to_str().unwrap(),
        "--out",
        eval_dir.to_str().unwrap(),
        "--config",
        cfg_arg,
    ]));
    let csv = std::fs::read_to_string(eval_dir.join("eval.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().starts_with("bridge,"));

    // Ablation with host reuse.
    let depth_dir = dir.path().join("depth");
    run_ok(bin().args([
        "ablate",
        "--seed",
        "5",
        "--axis",
        "encoder_depth",
        "--det",
        det.to_str().unwrap(),
        "--rec",
        rec.to_str().unwrap(),
        "--out",
        depth_dir.to_str().unwrap(),
        "--config",
        cfg_arg,
    ]));
    let csv = std::fs::read_to_string(depth_dir.join("ablation.csv")).unwrap();
    let labels: Vec<&str> =
        csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(labels, ["depth0", "depth1", "depth3", "depth6"]);
}

#[test]
fn comparison_runs_are_reproducible_at_the_byte_level() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let mut artifacts = Vec::new();
    for name in ["a", "b"] {
        let out_dir = dir.path().join(name);
        run_ok(bin().args([
            "compare",
            "--seed",
            "5",
            "--out",
            out_dir.to_str().unwrap(),
            "--config",
            cfg.to_str().unwrap(),
        ]));
        artifacts.push((
            std::fs::read(out_dir.join("compare.csv")).unwrap(),
            std::fs::read(out_dir.join("compare.json")).unwrap(),
            std::fs::read(out_dir.join("bridged.ckpt")).unwrap(),
        ));
    }
    assert_eq!(artifacts[0].0, artifacts[1].0, "compare.csv differs between runs");
    assert_eq!(artifacts[0].1, artifacts[1].1, "compare.json differs between runs");
    assert_eq!(artifacts[0].2, artifacts[1].2, "bridged.ckpt differs between runs");

    let csv = String::from_utf8(artifacts[0].0.clone()).unwrap();
    let labels: Vec<&str> =
        csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(labels, ["two_step", "two_step_finetune", "end_to_end", "bridge"]);
}

#[test]
fn bad_inputs_fail_with_useful_messages() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let cfg_arg = cfg.to_str().unwrap();

    // Unknown config key.
    let stderr = run_err(bin().args([
        "train-det",
        "--seed",
        "5",
        "--out",
        dir.path().join("x").to_str().unwrap(),
        "--set",
        "no_such_knob=1",
    ]));
    assert!(stderr.contains("no_such_knob"), "stderr: {stderr}");

    // Missing checkpoint flags for the chosen paradigm.
    let stderr = run_err(bin().args([
        "eval",
        "--seed",
        "5",
        "--paradigm",
        "bridge",
        "--config",
        cfg_arg,
    ]));
    assert!(stderr.contains("--ckpt"), "stderr: {stderr}");

    // A module checkpoint is not a system checkpoint: fingerprints differ.
    let run_dir = dir.path().join("run");
    run_ok(bin().args([
        "train-det",
        "--seed",
        "5",
        "--out",
        run_dir.to_str().unwrap(),
        "--config",
        cfg_arg,
    ]));
    let stderr = run_err(bin().args([
        "eval",
        "--seed",
        "5",
        "--paradigm",
        "bridge",
        "--ckpt",
        run_dir.join("det.ckpt").to_str().unwrap(),
        "--config",
        cfg_arg,
    ]));
    assert!(stderr.contains("fingerprint"), "stderr: {stderr}");
}
