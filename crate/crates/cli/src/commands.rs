use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::Context;
use log::info;
use serde_json::{json, Value};

use wscloc::field::FieldRegistry;
use wscloc::image::psnr;
use wscloc::io::{load_dataset, read_trajectory, save_dataset, trajectory_string, DatasetManifest};
use wscloc::pipeline::{
    evaluate, evaluate_with, stage1_train, stage2_train, Stage2Inputs, TrainingFrame,
};
use wscloc::render::render_image;
use wscloc::scene::FrameDataset;
use wscloc::Sim3Pose;

use crate::config::ExperimentConfig;
use crate::exit::{CliError, ExitCode, WithCode};
use crate::run::{read_manifest, read_run_config, RunDir};

pub const STAGE1_POSES: &str = "stage1_poses.txt";
pub const FIELD_CKPT: &str = "field.ckpt";
pub const REGRESSOR_POSES: &str = "regressor_poses.txt";
pub const REGRESSOR_CKPT: &str = "regressor.ckpt";
pub const METRICS: &str = "metrics.json";

fn run_config(command: &str, cfg: &ExperimentConfig, inputs: Value) -> Result<Value, CliError> {
    let config = serde_json::to_value(cfg).code(ExitCode::Failure)?;
    Ok(json!({ "command": command, "config": config, "inputs": inputs }))
}

fn absolute(path: &Path) -> Result<PathBuf, CliError> {
    path.canonicalize()
        .with_context(|| format!("{} does not exist", path.display()))
        .code(ExitCode::MissingInput)
}

fn path_string(path: &Path) -> String {
    path.to_string_lossy().into_owned()
}

fn open_dataset(dir: &Path) -> Result<(FrameDataset, DatasetManifest), CliError> {
    load_dataset(dir)
        .with_context(|| format!("cannot load dataset from {}", dir.display()))
        .code(ExitCode::MissingInput)
}

pub fn gen_scene(cfg: &ExperimentConfig, out: &Path) -> Result<Value, CliError> {
    let mut spec = cfg.scene.clone();
    spec.seed = cfg.seed;
    let dataset = spec.generate(&cfg.render)?;
    let mut run = RunDir::create(out, "gen-scene", &run_config("gen-scene", cfg, json!({}))?, cfg.seed)?;
    let manifest = save_dataset(&run.path, &dataset, cfg.stride, Some(&spec))
        .with_context(|| format!("cannot write dataset into {}", run.path.display()))
        .code(ExitCode::Unwritable)?;
    for rec in &manifest.frames {
        for f in [&rec.image, &rec.image_ppm, &rec.depth] {
            run.record(f);
        }
    }
    for f in ["gt_poses.txt", "init_poses.txt", wscloc::io::DATASET_MANIFEST] {
        run.record(f);
    }
    let dir = run.finish()?;
    Ok(json!({
        "command": "gen-scene",
        "run_dir": path_string(&dir),
        "n_frames": dataset.len(),
        "n_train": manifest.train_indices.len(),
        "n_test": manifest.test_indices.len(),
    }))
}

fn mean_psnr(result_field: &dyn wscloc::field::RadianceField, train: &FrameDataset, poses: &[Sim3Pose], cfg: &ExperimentConfig) -> f64 {
    let total: f64 = train
        .frames
        .iter()
        .zip(poses)
        .map(|(f, p)| {
            let t = if cfg.ablations.te { 0.0 } else { f.time_code };
            let (rgb, _) = render_image(result_field, &train.camera, p, t, &cfg.stage1.render, cfg.seed);
            let data: Vec<f64> = rgb.iter().flat_map(|c| [c.x, c.y, c.z]).collect();
            psnr(&data, &f.image.data)
        })
        .sum();
    total / train.len().max(1) as f64
}

pub fn stage1(cfg: &ExperimentConfig, dataset_dir: &Path, out: &Path) -> Result<Value, CliError> {
    let dataset_dir = absolute(dataset_dir)?;
    let (dataset, manifest) = open_dataset(&dataset_dir)?;
    let train = dataset.subset(&manifest.train_indices)?;
    let reference = manifest.scene.as_ref().map(|s| &s.blobs);
    let registry = FieldRegistry::with_builtins();
    let inputs = json!({ "dataset": path_string(&dataset_dir) });
    let mut run = RunDir::create(out, "stage1", &run_config("stage1", cfg, inputs)?, cfg.seed)?;

    let result = stage1_train(&train, reference, &registry, &cfg.stage1, &cfg.ablations, cfg.seed)?;
    let gt: Vec<Sim3Pose> = train.frames.iter().map(|f| f.gt_pose).collect();
    let init: Vec<Sim3Pose> = train.frames.iter().map(|f| f.init_pose).collect();
    let before = evaluate(&init, &gt, true)?;
    let after = evaluate(&result.refined_poses, &gt, true)?;
    let psnr = mean_psnr(result.field.as_ref(), &train, &result.refined_poses, cfg);
    info!(
        "stage1: aligned median {:.4} m / {:.3} deg (from {:.4} m / {:.3} deg), psnr {psnr:.2} dB",
        after.median_translation_error,
        after.median_rotation_error,
        before.median_translation_error,
        before.median_rotation_error
    );

    let traj: Vec<(f64, Sim3Pose)> = train
        .frames
        .iter()
        .zip(&result.refined_poses)
        .map(|(f, p)| (f.time_code, *p))
        .collect();
    run.write(STAGE1_POSES, trajectory_string(&traj).as_bytes())?;
    let mut ckpt = Vec::new();
    result.field.write_checkpoint(&mut ckpt)?;
    run.write(FIELD_CKPT, &ckpt)?;
    let history = &result.loss_history;
    run.write_json(
        METRICS,
        &json!({
            "ablations": cfg.ablations,
            "field_backend": result.field.backend(),
            "loss_history": history,
            "loss_initial": history.first(),
            "loss_final": history.last(),
            "init_eval": before.to_json(),
            "eval": after.to_json(),
            "psnr": psnr,
        }),
    )?;
    let dir = run.finish()?;
    Ok(json!({
        "command": "stage1",
        "run_dir": path_string(&dir),
        "median_t_m": after.median_translation_error,
        "median_r_deg": after.median_rotation_error,
        "n_frames": train.len(),
    }))
}

fn read_poses(path: &Path) -> Result<Vec<(f64, Sim3Pose)>, CliError> {
    let file = File::open(path)
        .with_context(|| format!("cannot open {}", path.display()))
        .code(ExitCode::MissingInput)?;
    Ok(read_trajectory(BufReader::new(file))?)
}

pub fn stage2(cfg: &ExperimentConfig, stage1_dir: &Path, out: &Path) -> Result<Value, CliError> {
    let stage1_dir = absolute(stage1_dir)?;
    let missing = |e: anyhow::Error| CliError::new(ExitCode::MissingInput, e.context("stage-1 outputs missing"));
    let s1_manifest = read_manifest(&stage1_dir).map_err(missing)?;
    if s1_manifest.command != "stage1" {
        return Err(CliError::msg(
            ExitCode::MissingInput,
            format!("{} is a {} run, not a stage1 run", stage1_dir.display(), s1_manifest.command),
        ));
    }
    let s1_config = read_run_config(&stage1_dir).map_err(missing)?;
    let dataset_dir = s1_config["inputs"]["dataset"]
        .as_str()
        .map(PathBuf::from)
        .ok_or_else(|| CliError::msg(ExitCode::MissingInput, "stage-1 config names no dataset"))?;
    let field_spec = &s1_config["config"]["stage1"]["field"];
    let backend = field_spec["backend"]
        .as_str()
        .ok_or_else(|| CliError::msg(ExitCode::MissingInput, "stage-1 config names no field backend"))?;
    let registry = FieldRegistry::with_builtins();
    let ckpt_path = stage1_dir.join(FIELD_CKPT);
    let mut ckpt = BufReader::new(
        File::open(&ckpt_path)
            .with_context(|| format!("cannot open {}", ckpt_path.display()))
            .code(ExitCode::MissingInput)?,
    );
    let field = registry.load(backend, &mut ckpt, &field_spec["options"])?;
    let labels = read_poses(&stage1_dir.join(STAGE1_POSES))?;

    let (dataset, manifest) = open_dataset(&dataset_dir)?;
    let train = dataset.subset(&manifest.train_indices)?;
    if labels.len() != train.len() {
        return Err(CliError::msg(
            ExitCode::MissingInput,
            format!("{} labels for {} training frames", labels.len(), train.len()),
        ));
    }
    let frames: Vec<TrainingFrame> = train
        .frames
        .iter()
        .zip(&labels)
        .map(|(f, (_, p))| TrainingFrame {
            image: f.image.clone(),
            label: *p,
            time_code: f.time_code,
        })
        .collect();

    let inputs = json!({ "stage1": path_string(&stage1_dir) });
    let mut run = RunDir::create(out, "stage2", &run_config("stage2", cfg, inputs)?, cfg.seed)?;
    let result = stage2_train(
        &Stage2Inputs {
            frames: &frames,
            camera: dataset.camera,
            field: field.as_ref(),
        },
        &cfg.stage2,
        &cfg.ablations,
        cfg.seed,
    )?;

    // labels live in the stage-1 gauge; map it onto ground truth once
    let label_poses: Vec<Sim3Pose> = labels.iter().map(|(_, p)| *p).collect();
    let gt_train: Vec<Sim3Pose> = train.frames.iter().map(|f| f.gt_pose).collect();
    let gauge = evaluate(&label_poses, &gt_train, true)?.alignment;
    let predict = |frames: &[wscloc::scene::Frame]| -> Result<Vec<Sim3Pose>, CliError> {
        frames
            .iter()
            .map(|f| result.model.predict(&f.image).map_err(CliError::from))
            .collect()
    };
    let train_pred = predict(&train.frames)?;
    let train_eval = evaluate(&train_pred, &label_poses, false)?;
    let test = dataset.subset(&manifest.test_indices)?;
    let (test_eval, test_traj) = if test.is_empty() {
        (None, Vec::new())
    } else {
        let pred = predict(&test.frames)?;
        let gt: Vec<Sim3Pose> = test.frames.iter().map(|f| f.gt_pose).collect();
        let report = evaluate_with(&pred, &gt, &gauge)?;
        let traj: Vec<(f64, Sim3Pose)> = test.frames.iter().zip(&pred).map(|(f, p)| (f.time_code, *p)).collect();
        (Some(report), traj)
    };

    run.write(REGRESSOR_POSES, trajectory_string(&test_traj).as_bytes())?;
    let mut ckpt = Vec::new();
    result.model.write_checkpoint(&mut ckpt)?;
    run.write(REGRESSOR_CKPT, &ckpt)?;
    run.write_json(
        METRICS,
        &json!({
            "ablations": cfg.ablations,
            "loss_history": result.loss_history,
            "n_real": frames.len(),
            "n_synthetic": result.n_synthetic,
            "n_pairs": result.n_pairs,
            "train_eval": train_eval.to_json(),
            "test_eval": test_eval.as_ref().map(|r| r.to_json()),
        }),
    )?;
    let dir = run.finish()?;
    let (t, r) = test_eval
        .as_ref()
        .map(|e| (e.median_translation_error, e.median_rotation_error))
        .unwrap_or((train_eval.median_translation_error, train_eval.median_rotation_error));
    Ok(json!({
        "command": "stage2",
        "run_dir": path_string(&dir),
        "median_t_m": t,
        "median_r_deg": r,
        "n_frames": if test_traj.is_empty() { frames.len() } else { test_traj.len() },
        "n_synthetic": result.n_synthetic,
    }))
}

pub fn eval(est_path: &Path, gt_path: &Path, align: bool) -> Result<Value, CliError> {
    let est = read_poses(est_path)?;
    let gt = read_poses(gt_path)?;
    let n = est.len().max(gt.len());
    for k in 0..n {
        match (est.get(k), gt.get(k)) {
            (Some((a, _)), Some((b, _))) if a.to_bits() == b.to_bits() => {}
            (Some((a, _)), Some((b, _))) => {
                return Err(CliError::msg(
                    ExitCode::TimestampMismatch,
                    format!("timestamp mismatch at entry {}: {a:e} vs {b:e}", k + 1),
                ))
            }
            (Some((a, _)), None) => {
                return Err(CliError::msg(
                    ExitCode::TimestampMismatch,
                    format!("timestamp {a:e} has no ground-truth entry"),
                ))
            }
            (None, Some((b, _))) => {
                return Err(CliError::msg(
                    ExitCode::TimestampMismatch,
                    format!("timestamp {b:e} has no estimated entry"),
                ))
            }
            (None, None) => unreachable!(),
        }
    }
    let est: Vec<Sim3Pose> = est.into_iter().map(|(_, p)| p).collect();
    let gt: Vec<Sim3Pose> = gt.into_iter().map(|(_, p)| p).collect();
    let report = evaluate(&est, &gt, align)?;
    Ok(json!({
        "median_t_m": report.median_translation_error,
        "median_r_deg": report.median_rotation_error,
        "n_frames": est.len(),
    }))
}
