mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::{copy_3_to_4, small_config};
use insitu_cli::run::{SNAPSHOT_DIR, SUMMARY_FILE};
use insitu_cli::{RunConfig, RunSummary};
use insitu_core::Snapshotf;

fn insitu(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_insitu")).args(args).output().unwrap()
}

fn write_config(dir: &Path, c: &RunConfig) -> String {
    let path = dir.join("run.toml");
    std::fs::write(&path, toml::to_string(c).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small_config(&dir.path().join("ignored"));
    c.init_copies = copy_3_to_4();
    let config = write_config(dir.path(), &c);
    let out = dir.path().join("out");
    let o = insitu(&[
        "run", "--config", &config, "--out", out.to_str().unwrap(), "--max-steps", "7",
        "--prune-mode", "auto", "--prune-interval", "3", "--traj-dims", "5,6,7", "--quiet",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("steps 7 "));
    assert!(!dir.path().join("ignored").exists());

    let s = RunSummary::load(&out.join(SUMMARY_FILE)).unwrap();
    assert_eq!(s.steps, 7);
    assert_eq!(s.evaluations.iter().map(|e| e.step).collect::<Vec<_>>(), [3, 6]);
    assert!(s.prunes_applied >= 1);
    let snap = Snapshotf::load(&out.join("network_final.ckpt")).unwrap();
    assert_eq!(snap.layer(0).unwrap().trajectory.as_ref().unwrap().dims(), [5, 6, 7]);
}

#[test]
fn missing_dataset_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = insitu(&["run", "--dataset", dir.path().join("none").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("dataset not found"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn bad_arguments_are_usage_errors() {
    let o = insitu(&["convert", ".", "--view", "heatmap", "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("heatmap"));
    let o = insitu(&["run", "--traj-dims", "1,2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("three indices"));
    let o = insitu(&["run", "--prune-mode", "sometimes"]);
    assert_eq!(o.status.code(), Some(2));
}

fn recorded_run(dir: &Path) -> std::path::PathBuf {
    let mut c = small_config(&dir.join("run"));
    c.max_steps = Some(10);
    insitu_cli::run(c).unwrap();
    dir.join("run").join(SNAPSHOT_DIR)
}

#[test]
fn replay_without_viewer_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let snaps = recorded_run(dir.path());
    let o = insitu(&["replay", snaps.to_str().unwrap(), "--listen", "127.0.0.1:0", "--wait", "0.2"]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert!(err.contains("listening on 127.0.0.1:"), "{err}");
    assert!(err.contains("no viewer connected"), "{err}");
}

#[test]
fn convert_writes_requested_formats() {
    let dir = tempfile::tempdir().unwrap();
    let snaps = recorded_run(dir.path());
    let out = dir.path().join("conv");
    let o = insitu(&[
        "convert", snaps.to_str().unwrap(), "--view", "trajectory", "--format", "csv", "--format", "vtp-ascii",
        "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut names: Vec<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "trajectory_0_00000005.ascii.vtp",
            "trajectory_0_00000005.csv",
            "trajectory_0_00000010.ascii.vtp",
            "trajectory_0_00000010.csv",
        ]
    );
}

#[test]
fn prune_exports_a_smaller_network() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small_config(&dir.path().join("run"));
    c.max_steps = Some(5);
    c.init_copies = copy_3_to_4();
    insitu_cli::run(c).unwrap();
    let snap = dir.path().join("run").join(SNAPSHOT_DIR).join("snapshot_00000005.snap");
    let out = dir.path().join("pruned.ckpt");
    let heat = dir.path().join("heat.csv");
    let o = insitu(&[
        "prune", snap.to_str().unwrap(), "--out", out.to_str().unwrap(), "--heatmap", heat.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let export: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let before = export["filters_before"].as_u64().unwrap();
    let after = export["filters_after"].as_u64().unwrap();
    assert_eq!(before, 8);
    assert!(after < before);
    assert!(export["parameters_after"].as_u64() < export["parameters_before"].as_u64());

    let pruned = Snapshotf::load(&out).unwrap();
    assert_eq!(pruned.network.conv(0).unwrap().filters() as u64, after);
    let rows = std::fs::read_to_string(&heat).unwrap().lines().count();
    assert!(rows >= 8);
}
