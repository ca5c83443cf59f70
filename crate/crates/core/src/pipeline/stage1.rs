use log::{debug, info};
use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Ablations, FieldSpec};
use crate::error::{invalid, Error, Result};
use crate::features::{detect_keypoints, FeatureConfig};
use crate::field::{BlobField, FieldInit, FieldRegistry, RadianceField};
use crate::liegroup::{Sim3Pose, Sim3Tangent};
use crate::optim::{AdamState, BlockLearningRates};
use crate::render::{batch_gradient, keypoint_weighted_pixels, plan_batch, BatchGradient, GradRequest, RenderConfig};
use crate::scene::FrameDataset;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stage1Config {
    pub iters: usize,
    pub pixels_per_frame: usize,
    /// Share of pixels drawn around detected corners.
    pub keypoint_mix: f64,
    pub lr: BlockLearningRates,
    pub render: RenderConfig,
    pub field: FieldSpec,
    pub features: FeatureConfig,
    /// Abort when the loss stays above this multiple of its first value...
    pub divergence_factor: f64,
    /// ...for this many consecutive iterations.
    pub divergence_patience: usize,
    /// Learning rates decay exponentially to this fraction by the last
    /// iteration.
    pub lr_final_ratio: f64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Stage1Config {
            iters: 300,
            pixels_per_frame: 128,
            keypoint_mix: 0.5,
            lr: BlockLearningRates::default(),
            render: RenderConfig::default(),
            field: FieldSpec::default(),
            features: FeatureConfig::default(),
            divergence_factor: 10.0,
            divergence_patience: 100,
            lr_final_ratio: 0.1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Stage1Result {
    pub field: Box<dyn RadianceField>,
    pub refined_poses: Vec<Sim3Pose>,
    pub loss_history: Vec<f64>,
}

/// Photometric loss below which a run counts as converged, not diverging.
const LOSS_FLOOR: f64 = 1e-6;

/// SplitMix64-style mixing for independent per-(iteration, frame) streams.
pub(crate) fn stream_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Jointly refines the field and every frame's pose against the frame
/// images, starting from the noisy initial poses.
pub fn stage1_train(
    dataset: &FrameDataset,
    reference: Option<&BlobField>,
    registry: &FieldRegistry,
    cfg: &Stage1Config,
    ablate: &Ablations,
    seed: u64,
) -> Result<Stage1Result> {
    if dataset.is_empty() {
        return invalid("stage 1 needs at least one frame");
    }
    cfg.lr.validate()?;
    if cfg.pixels_per_frame == 0 {
        return invalid("pixels_per_frame must be positive");
    }
    let camera = dataset.camera;
    let mut field = registry.build(
        &cfg.field.backend,
        &FieldInit {
            options: &cfg.field.options,
            reference,
            seed,
        },
    )?;
    let keypoints: Vec<Vec<(f64, f64)>> = dataset
        .frames
        .par_iter()
        .map(|f| {
            detect_keypoints(&f.image, cfg.features.max_keypoints, cfg.features.nms_radius)
                .into_iter()
                .map(|k| (k.u, k.v))
                .collect()
        })
        .collect();

    let mut poses: Vec<Sim3Pose> = dataset.frames.iter().map(|f| f.init_pose).collect();
    let mut pose_adam: Vec<AdamState> = poses.iter().map(|_| AdamState::new(Sim3Tangent::DIM)).collect();
    let mut field_adam = AdamState::new(field.num_params());
    let mut base_pose_rates = cfg.lr.pose_rates();
    if ablate.sc {
        base_pose_rates[6] = 0.0;
    }
    if !(cfg.lr_final_ratio > 0.0) {
        return invalid("lr_final_ratio must be positive");
    }
    let background = cfg.render.background();
    let n_frames = dataset.len();

    let mut history = Vec::with_capacity(cfg.iters);
    let mut over = 0usize;
    for iter in 0..cfg.iters {
        field.set_encoding_progress(cfg.render.alpha_at(iter, cfg.iters));
        let field_ref: &dyn RadianceField = field.as_ref();
        let grads: Vec<BatchGradient> = dataset
            .frames
            .par_iter()
            .enumerate()
            .map(|(f, frame)| {
                let stream = stream_seed(seed, iter as u64, f as u64);
                let mut rng = ChaCha8Rng::seed_from_u64(stream);
                let pixels = keypoint_weighted_pixels(
                    &keypoints[f],
                    camera.width,
                    camera.height,
                    cfg.pixels_per_frame,
                    cfg.keypoint_mix,
                    &mut rng,
                )?;
                let time = if ablate.te { 0.0 } else { frame.time_code };
                let reference: Vec<Vector3<f64>> = pixels
                    .iter()
                    .map(|&(u, v)| Vector3::from_column_slice(frame.image.pixel(u, v)))
                    .collect();
                let depths = plan_batch(field_ref, &camera, &poses[f], time, &pixels, &cfg.render, stream)?;
                batch_gradient(
                    field_ref,
                    &camera,
                    &poses[f],
                    time,
                    &pixels,
                    &depths,
                    &reference,
                    &background,
                    GradRequest {
                        pose: true,
                        field: true,
                    },
                )
            })
            .collect::<Result<_>>()?;

        let mut loss = 0.0;
        let mut field_grad = vec![0.0; field.num_params()];
        for g in &grads {
            loss += g.loss;
            for (acc, x) in field_grad.iter_mut().zip(&g.field) {
                *acc += x;
            }
        }
        loss /= n_frames as f64;
        field_grad.iter_mut().for_each(|x| *x /= n_frames as f64);
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("non-finite loss at iteration {iter}")));
        }
        history.push(loss);
        // an exact start has no scale to diverge from
        if loss > cfg.divergence_factor * history[0].max(LOSS_FLOOR) {
            over += 1;
            if over >= cfg.divergence_patience {
                return Err(Error::Diverged(format!(
                    "loss {loss:.6e} stayed above {}x the initial {:.6e} for {over} iterations (iteration {iter})",
                    cfg.divergence_factor, history[0]
                )));
            }
        } else {
            over = 0;
        }

        let decay = cfg.lr_final_ratio.powf(iter as f64 / (cfg.iters.max(2) - 1) as f64);
        let pose_rates = base_pose_rates.map(|r| r * decay);
        let field_rates = vec![cfg.lr.lr_field * decay; field.num_params()];
        for (f, g) in grads.iter().enumerate() {
            let delta = pose_adam[f].update(&g.pose.to_array(), &pose_rates)?;
            poses[f] = poses[f].retract(&Sim3Tangent::from_slice(&delta));
        }
        let delta = field_adam.update(&field_grad, &field_rates)?;
        let mut params = field.params();
        for (p, d) in params.iter_mut().zip(delta) {
            *p += d;
        }
        field.set_params(&params)?;

        if iter % 50 == 0 || iter + 1 == cfg.iters {
            debug!("stage1 iter {iter}: loss {loss:.6e}");
        }
    }
    field.set_encoding_progress(cfg.render.n_freqs_xyz as f64);
    if let (Some(first), Some(last)) = (history.first(), history.last()) {
        info!("stage1 finished: loss {first:.4e} -> {last:.4e}");
    }
    Ok(Stage1Result {
        field,
        refined_poses: poses,
        loss_history: history,
    })
}
