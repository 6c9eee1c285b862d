//! Binary-level checks: exit codes, stdout contracts, and artifact
//! determinism through the real executable.

mod common;

use std::path::Path;
use std::process::{Command, Output};

fn bass() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bass"))
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("failed to launch bass")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn setup(dir: &Path) -> std::path::PathBuf {
    let cube = common::toy_scene(16, 16, 8, 5);
    let (scene, labels) = common::write_cube(dir, "scene", &cube);
    let value = common::toy_config(&scene, &labels, &dir.join("out"), 21);
    common::write_config(dir, "run.json", &value)
}

#[test]
fn split_reruns_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path());
    let first = run(bass().args(["split", "--config"]).arg(&config));
    assert!(first.status.success(), "{}", stderr(&first));
    assert!(stdout(&first).contains("class,original_code,population,train,val,test"));
    let manifest = dir.path().join("out/manifest.csv");
    let bytes = std::fs::read(&manifest).unwrap();
    assert!(bytes.starts_with(b"x,y,label,split\n"));

    let second = run(bass().args(["split", "--config"]).arg(&config));
    assert!(second.status.success());
    assert_eq!(std::fs::read(&manifest).unwrap(), bytes);

    // a different seed moves the draw
    let moved = run(bass()
        .args(["split", "--config"])
        .arg(&config)
        .args(["--set", "seed=22"])
        .arg("--set")
        .arg(format!("output_dir={}", dir.path().join("out2").display())));
    assert!(moved.status.success(), "{}", stderr(&moved));
    assert_ne!(
        std::fs::read(dir.path().join("out2/manifest.csv")).unwrap(),
        bytes
    );
}

#[test]
fn train_eval_map_pipeline_works_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path());

    let train = run(bass()
        .args(["train", "--config"])
        .arg(&config)
        .args(["--set", "schedule.epochs=3"]));
    assert!(train.status.success(), "{}", stderr(&train));
    let out = stdout(&train);
    assert!(out.contains("parameters: "), "{}", out);
    assert!(out.contains("epoch    1/3"), "{}", out);
    assert!(out.contains("best epoch"), "{}", out);
    assert!(out.contains("overall_accuracy"), "{}", out);
    let best = dir.path().join("out/best.ckpt");
    assert!(best.exists());

    let eval = run(bass()
        .args(["eval", "--config"])
        .arg(&config)
        .arg("--checkpoint")
        .arg(&best)
        .args(["--split", "val"]));
    assert!(eval.status.success(), "{}", stderr(&eval));
    assert!(stdout(&eval).contains("overall_accuracy"));
    assert!(dir.path().join("out/eval_val.json").exists());

    let map = run(bass()
        .args(["map", "--config"])
        .arg(&config)
        .arg("--checkpoint")
        .arg(&best));
    assert!(map.status.success(), "{}", stderr(&map));
    let ppm = std::fs::read(dir.path().join("out/map.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6\n16 16\n255\n"));

    let gt = run(bass()
        .args(["map", "--config"])
        .arg(&config)
        .arg("--ground-truth"));
    assert!(gt.status.success(), "{}", stderr(&gt));
    assert!(dir.path().join("out/ground_truth.ppm").exists());
}

#[test]
fn missing_scene_exits_two_without_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path());
    std::fs::remove_file(dir.path().join("scene.hsc")).unwrap();
    let output = run(bass().args(["train", "--config"]).arg(&config));
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr(&output).contains("scene.hsc"), "{}", stderr(&output));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn bad_config_and_usage_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let broken = dir.path().join("broken.json");
    std::fs::write(&broken, b"{ not json").unwrap();
    let output = run(bass().args(["split", "--config"]).arg(&broken));
    assert_eq!(output.status.code(), Some(1));

    let config = setup(dir.path());
    let bad_set = run(bass()
        .args(["split", "--config"])
        .arg(&config)
        .args(["--set", "no_equals_here"]));
    assert_eq!(bad_set.status.code(), Some(1));
    assert!(stderr(&bad_set).contains("KEY=VALUE"));

    let unknown_flag = run(bass().args(["train", "--frobnicate"]));
    assert_eq!(unknown_flag.status.code(), Some(1));

    let unknown_cmd = run(bass().arg("explode"));
    assert_eq!(unknown_cmd.status.code(), Some(1));

    let help = run(bass().arg("--help"));
    assert_eq!(help.status.code(), Some(0));
    assert!(stdout(&help).contains("gradcheck"));
}

#[test]
fn undersized_class_error_names_the_class() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path());
    let output = run(bass()
        .args(["split", "--config"])
        .arg(&config)
        .args(["--set", "split.per_class_train=1000"]));
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr(&output).contains("class 0"), "{}", stderr(&output));
}

#[test]
fn gradcheck_prints_layers_and_exits_zero() {
    let output = run(bass().args([
        "gradcheck",
        "--configuration",
        "2",
        "--parameter-sharing",
        "on",
    ]));
    assert!(output.status.success(), "{}", stderr(&output));
    let out = stdout(&output);
    assert!(out.contains("PASS"), "{}", out);
    assert!(out.contains("block2/shared/layer00"), "{}", out);
    assert!(out.contains("input"), "{}", out);

    let bad = run(bass().args(["gradcheck", "--configuration", "7"]));
    assert_eq!(bad.status.code(), Some(1));
}
