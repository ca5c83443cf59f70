use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use wscloc::io::trajectory_string;
use wscloc::liegroup::Rotation;
use wscloc::scene::fixtures::orbit_spec;
use wscloc::Sim3Pose;
use nalgebra::Vector3;

fn wscloc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wscloc"))
        .args(args)
        .env("WSCLOC_LOG", "error")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout_json(o: &Output) -> Value {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_config(dir: &Path, extra: Value) -> PathBuf {
    let mut cfg = json!({
        "scene": orbit_spec(1),
        "stride": 2,
        "stage1": { "iters": 10, "pixels_per_frame": 32 },
        "stage2": { "iters": 20, "rvs": { "multiplier": 1 } },
    });
    if let (Some(base), Some(more)) = (cfg.as_object_mut(), extra.as_object()) {
        for (k, v) in more {
            base.insert(k.clone(), v.clone());
        }
    }
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_vec(&cfg).unwrap()).unwrap();
    path
}

fn write_traj(path: &Path, stamps: &[f64], offset: f64) {
    let poses: Vec<(f64, Sim3Pose)> = stamps
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let angle = i as f64 * 0.7;
            let p = Vector3::new(angle.cos(), angle.sin(), 0.1 * i as f64) * 3.0 + Vector3::new(offset, 0.0, 0.0);
            (*t, Sim3Pose::rigid(Rotation::exp(&Vector3::new(0.0, 0.0, angle)), p))
        })
        .collect();
    fs::write(path, trajectory_string(&poses)).unwrap();
}

#[test]
fn bad_config_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, "{ \"stride\": 2,").unwrap();
    let o = wscloc(&["gen-scene", "--config", s(&cfg), "--out", s(tmp.path())]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));

    fs::write(&cfg, "{ \"no_such_key\": 1 }").unwrap();
    assert_eq!(code(&wscloc(&["gen-scene", "--config", s(&cfg), "--out", s(tmp.path())])), 2);
}

#[test]
fn unwritable_output_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "not a directory").unwrap();
    let cfg = small_config(tmp.path(), json!({}));
    let o = wscloc(&["gen-scene", "--config", s(&cfg), "--out", s(&blocker.join("runs"))]);
    assert_eq!(code(&o), 3);
}

#[test]
fn missing_inputs_exit_4() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), json!({}));
    let out = tmp.path().join("runs");
    let nowhere = tmp.path().join("nowhere");
    assert_eq!(code(&wscloc(&["stage1", s(&nowhere), "--config", s(&cfg), "--out", s(&out)])), 4);
    assert_eq!(code(&wscloc(&["stage2", s(&nowhere), "--config", s(&cfg), "--out", s(&out)])), 4);
    // a directory that is not a stage-1 run
    fs::create_dir_all(&nowhere).unwrap();
    assert_eq!(code(&wscloc(&["stage2", s(&nowhere), "--config", s(&cfg), "--out", s(&out)])), 4);
    assert_eq!(code(&wscloc(&["eval", s(&nowhere.join("a.txt")), s(&nowhere.join("b.txt"))])), 4);
}

#[test]
fn divergence_exits_5() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), json!({}));
    let out = tmp.path().join("runs");
    let data = stdout_json(&wscloc(&["gen-scene", "--config", s(&cfg), "--out", s(&out)]));
    let cfg = small_config(
        tmp.path(),
        json!({ "stage1": { "iters": 10, "pixels_per_frame": 32, "divergence_factor": 0.0, "divergence_patience": 1 } }),
    );
    let o = wscloc(&["stage1", data["run_dir"].as_str().unwrap(), "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 5);
}

#[test]
fn eval_reports_and_checks_timestamps() {
    let tmp = tempfile::tempdir().unwrap();
    let gt = tmp.path().join("gt.txt");
    let est = tmp.path().join("est.txt");
    let stamps = [0.0, 0.25, 0.5, 0.75, 1.0];
    write_traj(&gt, &stamps, 0.0);
    write_traj(&est, &stamps, 0.3);
    let v = stdout_json(&wscloc(&["eval", s(&est), s(&gt)]));
    assert!((v["median_t_m"].as_f64().unwrap() - 0.3).abs() < 1e-9);
    assert_eq!(v["n_frames"], 5);
    let v = stdout_json(&wscloc(&["eval", s(&est), s(&gt), "--align"]));
    assert!(v["median_t_m"].as_f64().unwrap() < 1e-9);

    let shifted = tmp.path().join("shifted.txt");
    write_traj(&shifted, &[0.0, 0.25, 0.5, 0.75, 0.9], 0.0);
    assert_eq!(code(&wscloc(&["eval", s(&shifted), s(&gt)])), 6);
    let short = tmp.path().join("short.txt");
    write_traj(&short, &stamps[..4], 0.0);
    assert_eq!(code(&wscloc(&["eval", s(&short), s(&gt)])), 6);

    let garbage = tmp.path().join("garbage.txt");
    fs::write(&garbage, "0 1 2 three\n").unwrap();
    assert_eq!(code(&wscloc(&["eval", s(&garbage), s(&gt)])), 2);
}

#[test]
fn held_lock_exits_7() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), json!({}));
    let out = tmp.path().join("runs");
    let first = stdout_json(&wscloc(&["gen-scene", "--config", s(&cfg), "--out", s(&out)]));
    let dir = PathBuf::from(first["run_dir"].as_str().unwrap());
    let lock = dir.with_file_name(format!("{}.lock", dir.file_name().unwrap().to_str().unwrap()));
    fs::write(&lock, "").unwrap();
    assert_eq!(code(&wscloc(&["gen-scene", "--config", s(&cfg), "--out", s(&out)])), 7);
    fs::remove_file(&lock).unwrap();
    assert!(wscloc(&["gen-scene", "--config", s(&cfg), "--out", s(&out)]).status.success());
    assert!(!lock.exists());
}

#[test]
fn full_pipeline_and_manifests() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), json!({}));
    let out = tmp.path().join("runs");
    let gen = stdout_json(&wscloc(&["gen-scene", "--config", s(&cfg), "--out", s(&out), "--seed", "4"]));
    assert_eq!(gen["n_frames"], 8);
    assert_eq!(gen["n_train"], 4);
    let data = gen["run_dir"].as_str().unwrap();
    assert!(data.ends_with("-4"));

    let s1 = stdout_json(&wscloc(&["stage1", data, "--config", s(&cfg), "--out", s(&out), "--seed", "4"]));
    let s1_dir = PathBuf::from(s1["run_dir"].as_str().unwrap());
    let manifest: Value = serde_json::from_slice(&fs::read(s1_dir.join("run.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "stage1");
    assert_eq!(manifest["seed"], 4);
    for f in manifest["outputs"].as_array().unwrap() {
        assert!(s1_dir.join(f.as_str().unwrap()).exists(), "{f} listed but missing");
    }
    let poses = fs::read_to_string(s1_dir.join("stage1_poses.txt")).unwrap();
    assert_eq!(poses.lines().filter(|l| !l.starts_with('#')).count(), 4);

    let s2 = stdout_json(&wscloc(&["stage2", s(&s1_dir), "--config", s(&cfg), "--out", s(&out), "--rvs", "0"]));
    assert_eq!(s2["n_synthetic"], 0);
    assert_eq!(s2["n_frames"], 4);
    let s2_dir = PathBuf::from(s2["run_dir"].as_str().unwrap());
    assert!(s2_dir.join("regressor.ckpt").exists());
    let metrics: Value = serde_json::from_slice(&fs::read(s2_dir.join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["test_eval"]["median_translation_error"].as_f64().unwrap().is_finite());

    // an ablation changes the config and so the run directory
    let ablated = stdout_json(&wscloc(&["stage1", data, "--config", s(&cfg), "--out", s(&out), "--seed", "4", "--ablate", "sc"]));
    assert_ne!(ablated["run_dir"], s1["run_dir"]);
}
