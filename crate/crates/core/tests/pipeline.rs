use nalgebra::Vector3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wscloc::field::FieldRegistry;
use wscloc::image::psnr;
use wscloc::liegroup::{Rotation, Sim3Pose, Sim3Tangent};
use wscloc::pipeline::*;
use wscloc::render::{render_image, RenderConfig};
use wscloc::scene::fixtures::{arc_spec, orbit_spec};
use wscloc::scene::{sparse_split, PoseNoise};

fn random_pose(rng: &mut ChaCha8Rng, max_log_scale: f64) -> Sim3Pose {
    let v: Vec<f64> = (0..7)
        .map(|i| match i {
            0..=2 => rng.random_range(-3.0..3.0),
            3..=5 => rng.random_range(-1.5..1.5),
            _ => rng.random_range(-max_log_scale..=max_log_scale),
        })
        .collect();
    Sim3Pose::exp(&Sim3Tangent::from_slice(&v))
}

fn trajectory(rng: &mut ChaCha8Rng, n: usize) -> Vec<Sim3Pose> {
    (0..n).map(|_| random_pose(rng, 0.0)).collect()
}

#[test]
fn evaluate_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let gt = trajectory(&mut rng, 9);
    let r = evaluate(&gt, &gt, false).unwrap();
    assert_eq!(r.median_translation_error, 0.0);
    assert_eq!(r.median_rotation_error, 0.0);

    let shifted: Vec<Sim3Pose> = gt
        .iter()
        .map(|p| Sim3Pose::new(*p.rotation(), p.translation() + Vector3::new(0.3, 0.0, 0.0), 1.0).unwrap())
        .collect();
    let r = evaluate(&shifted, &gt, false).unwrap();
    assert!((r.median_translation_error - 0.3).abs() < 1e-12);
    // a rigid offset is absorbed by alignment
    let r = evaluate(&shifted, &gt, true).unwrap();
    assert!(r.median_translation_error < 1e-9);

    let turned: Vec<Sim3Pose> = gt
        .iter()
        .map(|p| Sim3Pose::new(p.rotation().compose(&Rotation::exp(&Vector3::new(0.0, 0.0, 0.1))), *p.translation(), 1.0).unwrap())
        .collect();
    let r = evaluate(&turned, &gt, false).unwrap();
    assert!((r.median_rotation_error - 0.1f64.to_degrees()).abs() < 1e-9);

    assert_eq!(lower_median(&[1.0, 2.0, 3.0, 4.0]), 2.0);
    assert_eq!(lower_median(&[5.0, 1.0, 3.0]), 3.0);
    assert!(lower_median(&[]).is_nan());
    assert!(evaluate(&gt[..3], &gt, false).is_err());
    assert!(evaluate(&[], &[], false).is_err());
}

#[test]
fn umeyama_recovers_similarity() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let g = random_pose(&mut rng, 0.7);
        let est: Vec<Vector3<f64>> = (0..12)
            .map(|_| Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)))
            .collect();
        let gt: Vec<Vector3<f64>> = est.iter().map(|p| g.apply(p)).collect();
        let a = umeyama_align(&est, &gt).unwrap();
        let diff = (a.as_matrix() - g.as_matrix()).abs().max();
        assert!(diff < 1e-9, "alignment off by {diff:e}");
    }
}

#[test]
fn umeyama_is_optimal() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let est: Vec<Vector3<f64>> = (0..15)
        .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let g = random_pose(&mut rng, 0.3);
    let gt: Vec<Vector3<f64>> = est
        .iter()
        .map(|p| g.apply(p) + Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)))
        .collect();
    let cost = |a: &Sim3Pose| est.iter().zip(&gt).map(|(e, t)| (t - a.apply(e)).norm_squared()).sum::<f64>();
    let a = umeyama_align(&est, &gt).unwrap();
    let best = cost(&a);
    for _ in 0..200 {
        let v: Vec<f64> = (0..7).map(|_| rng.random_range(-1e-3..1e-3)).collect();
        let nearby = a.retract(&Sim3Tangent::from_slice(&v));
        assert!(cost(&nearby) >= best - 1e-12);
    }
}

#[test]
fn umeyama_rejects_degenerate_input() {
    let line: Vec<Vector3<f64>> = (0..6).map(|i| Vector3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
    assert!(umeyama_align(&line, &line).is_err());
    let same = vec![Vector3::new(1.0, 1.0, 1.0); 4];
    assert!(umeyama_align(&same, &same).is_err());
    let two = vec![Vector3::zeros(), Vector3::x()];
    assert!(umeyama_align(&two, &two).is_err());
    assert!(umeyama_align(&line[..4], &line[..3]).is_err());
}

#[test]
fn perturbation_magnitudes() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let base = random_pose(&mut rng, 0.2);
    let mut max_t: f64 = 0.0;
    let mut max_r: f64 = 0.0;
    let mut mean_t = 0.0;
    let n = 10_000;
    for _ in 0..n {
        let p = perturb_pose(&base, 0.2, 10f64.to_radians(), &mut rng);
        let t = (p.translation() - base.translation()).norm();
        let r = rotation_error_deg(p.rotation(), base.rotation());
        assert_eq!(p.scale(), base.scale());
        max_t = max_t.max(t);
        max_r = max_r.max(r);
        mean_t += t / n as f64;
    }
    assert!(max_t <= 0.2 + 1e-12 && max_r <= 10.0 + 1e-9);
    // uniform in the ball: E|t| = 3/4 of the radius
    assert!((mean_t - 0.15).abs() < 3e-3, "mean radius {mean_t}");
    assert!(max_r > 9.9 && max_t > 0.199);
}

#[test]
fn rvs_without_perturbation_reproduces_the_source_view() {
    let spec = orbit_spec(0);
    let render = RenderConfig::default();
    let ds = spec.generate(&render).unwrap();
    let poses: Vec<Sim3Pose> = ds.frames[..2].iter().map(|f| f.gt_pose).collect();
    let times: Vec<f64> = ds.frames[..2].iter().map(|f| f.time_code).collect();
    let cfg = RvsConfig { multiplier: 3, trans: 0.0, rot_deg: 0.0 };
    let views = rvs_generate(&spec.blobs, &poses, &times, &cfg, &ds.camera, &render, 7).unwrap();
    assert_eq!(views.len(), 6);
    for v in &views {
        assert_eq!(v.pose, poses[v.source]);
        assert_eq!(v.time_code, times[v.source]);
        let (rgb, _) = render_image(&spec.blobs, &ds.camera, &v.pose, v.time_code, &render, 99);
        let again: Vec<f64> = rgb.iter().flat_map(|c| [c.x, c.y, c.z]).collect();
        let db = psnr(&v.image.data, &again);
        assert!(db > 35.0, "psnr {db}");
    }
    assert_eq!(views, rvs_generate(&spec.blobs, &poses, &times, &cfg, &ds.camera, &render, 7).unwrap());
    let bad = RvsConfig { trans: -1.0, ..cfg };
    assert!(rvs_generate(&spec.blobs, &poses, &times, &bad, &ds.camera, &render, 7).is_err());
    assert!(rvs_generate(&spec.blobs, &poses, &times[..1], &cfg, &ds.camera, &render, 7).is_err());
}

fn small_stage1() -> Stage1Config {
    Stage1Config {
        iters: 40,
        pixels_per_frame: 64,
        ..Stage1Config::default()
    }
}

#[test]
fn stage1_true_poses_are_nearly_fixed() {
    let mut spec = orbit_spec(1);
    spec.noise = PoseNoise::zero();
    let ds = spec.generate(&RenderConfig::default()).unwrap();
    let mut cfg = small_stage1();
    cfg.iters = 200;
    cfg.field = FieldSpec { backend: "blob".into(), options: serde_json::json!({}) };
    let res = stage1_train(&ds, Some(&spec.blobs), &FieldRegistry::with_builtins(), &cfg, &Ablations::default(), 1).unwrap();
    let gt: Vec<Sim3Pose> = ds.frames.iter().map(|f| f.gt_pose).collect();
    let r = evaluate(&res.refined_poses, &gt, false).unwrap();
    println!("fixed point drift {:.2e} m {:.2e} deg", r.median_translation_error, r.median_rotation_error);
    assert!(r.median_translation_error < 2e-3 && r.median_rotation_error < 0.05);
}

#[test]
fn stage1_is_deterministic_and_descends() {
    let spec = orbit_spec(2);
    let ds = spec.generate(&RenderConfig::default()).unwrap();
    let run = || {
        stage1_train(&ds, Some(&spec.blobs), &FieldRegistry::with_builtins(), &small_stage1(), &Ablations::default(), 5).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.refined_poses, b.refined_poses);
    assert_eq!(a.loss_history, b.loss_history);
    assert_eq!(a.loss_history.len(), 40);
    let head: f64 = a.loss_history[..5].iter().sum();
    let tail: f64 = a.loss_history[35..].iter().sum();
    assert!(tail < head, "loss went from {head} to {tail}");
    assert!(stage1_train(&ds, None, &FieldRegistry::with_builtins(), &small_stage1(), &Ablations::default(), 5).is_err());
}

#[test]
fn stage2_is_deterministic() {
    let spec = arc_spec(3);
    let ds = spec.generate(&RenderConfig::default()).unwrap();
    let (train, _) = sparse_split(ds.len(), 20);
    let tr = ds.subset(&train).unwrap();
    let frames: Vec<TrainingFrame> = tr
        .frames
        .iter()
        .map(|f| TrainingFrame { image: f.image.clone(), label: f.gt_pose, time_code: f.time_code })
        .collect();
    let inputs = Stage2Inputs { frames: &frames, camera: ds.camera, field: &spec.blobs };
    let cfg = Stage2Config {
        iters: 30,
        rvs: RvsConfig { multiplier: 2, ..RvsConfig::default() },
        ..Stage2Config::default()
    };
    let a = stage2_train(&inputs, &cfg, &Ablations::default(), 9).unwrap();
    let b = stage2_train(&inputs, &cfg, &Ablations::default(), 9).unwrap();
    assert_eq!(a.loss_history, b.loss_history);
    assert_eq!(a.model.net, b.model.net);
    assert_eq!(a.n_synthetic, 8);
    let p = a.model.predict(&tr.frames[0].image).unwrap();
    assert_eq!(p, b.model.predict(&tr.frames[0].image).unwrap());
    let no_rvs = stage2_train(&inputs, &cfg, &Ablations { rvs: true, ..Ablations::default() }, 9).unwrap();
    assert_eq!(no_rvs.n_synthetic, 0);
    let no_if = stage2_train(&inputs, &cfg, &Ablations { if_loss: true, ..Ablations::default() }, 9).unwrap();
    assert_eq!(no_if.n_pairs, 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn aligned_errors_ignore_the_gauge(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gt = trajectory(&mut rng, 8);
        let est: Vec<Sim3Pose> = gt
            .iter()
            .map(|p| {
                let v: Vec<f64> = (0..6).map(|_| rng.random_range(-0.05..0.05)).chain([0.0]).collect();
                p.retract(&Sim3Tangent::from_slice(&v))
            })
            .collect();
        let g = random_pose(&mut rng, 0.5);
        let moved: Vec<Sim3Pose> = est.iter().map(|p| g.compose(p)).collect();
        let a = evaluate(&est, &gt, true).unwrap();
        let b = evaluate(&moved, &gt, true).unwrap();
        for (x, y) in a.per_frame_errors.iter().zip(&b.per_frame_errors) {
            prop_assert!((x.translation - y.translation).abs() < 1e-8);
            prop_assert!((x.rotation - y.rotation).abs() < 1e-6);
        }
    }
}
