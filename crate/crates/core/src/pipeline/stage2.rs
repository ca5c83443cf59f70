use std::io::{Read, Write};

use log::{debug, info};
use nalgebra::{Matrix3, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rvs::{rvs_generate, RvsConfig};
use super::stage1::stream_seed;
use super::Ablations;
use crate::error::{invalid, Result};
use crate::features::{extract, match_frames, normalize_coords, FeatureConfig, Keypoint};
use crate::field::RadianceField;
use crate::ifloss::{grad_if_loss, if_loss, ray_distance_to_z, FramePair, PairSide};
use crate::image::Image;
use crate::liegroup::{so3_log, Rotation, Sim3Pose, Sim3Tangent};
use crate::optim::{AdamState, Activation, BlockLearningRates, DenseNet};
use crate::render::{render_subpixel, RenderConfig};
use crate::scene::PinholeCamera;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stage2Config {
    pub iters: usize,
    pub hidden: Vec<usize>,
    pub hidden_activation: Activation,
    /// Side of the square grayscale input.
    pub input_size: usize,
    pub lr: BlockLearningRates,
    /// Weight of the squared geodesic rotation error.
    pub beta: f64,
    /// Weight of the squared log-scale error.
    pub gamma: f64,
    /// Weight of the inter-frame term.
    pub lambda: f64,
    pub rvs: RvsConfig,
    pub features: FeatureConfig,
    pub render: RenderConfig,
    /// Matches whose rendered opacity falls below this are dropped.
    pub min_opacity: f64,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Stage2Config {
            iters: 3000,
            hidden: vec![64, 64],
            hidden_activation: Activation::Relu,
            input_size: 16,
            lr: BlockLearningRates::default(),
            beta: 1.0,
            gamma: 1.0,
            lambda: 0.1,
            rvs: RvsConfig::default(),
            features: FeatureConfig::default(),
            render: RenderConfig::default(),
            min_opacity: 0.5,
        }
    }
}

/// A real training view with its stage-1 label.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingFrame {
    pub image: Image,
    pub label: Sim3Pose,
    pub time_code: f64,
}

pub struct Stage2Inputs<'a> {
    /// Consecutive training views in time order.
    pub frames: &'a [TrainingFrame],
    pub camera: PinholeCamera,
    /// Frozen stage-1 field.
    pub field: &'a dyn RadianceField,
}

/// Dense regressor from a downsampled grayscale image to a tangent applied
/// on the left of a fixed reference pose.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressorModel {
    pub net: DenseNet,
    pub reference: Sim3Pose,
    pub input_size: usize,
}

pub const REGRESSOR_MAGIC: &[u8; 4] = b"WSCR";

impl RegressorModel {
    pub fn decode(&self, out: &[f64]) -> Sim3Pose {
        Sim3Pose::exp(&Sim3Tangent::from_slice(out)).compose(&self.reference)
    }

    pub fn predict(&self, image: &Image) -> Result<Sim3Pose> {
        let x = regressor_input(image, self.input_size)?;
        Ok(self.decode(&self.net.predict(&x)?))
    }

    /// Reference pose as 8 f64 values, then the network checkpoint.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(REGRESSOR_MAGIC)?;
        w.write_all(&(self.input_size as u32).to_le_bytes())?;
        let q = nalgebra::UnitQuaternion::from_matrix(self.reference.rotation().matrix());
        let c = q.into_inner().coords;
        let t = self.reference.translation();
        for v in [t.x, t.y, t.z, c.x, c.y, c.z, c.w, self.reference.scale()] {
            w.write_all(&v.to_le_bytes())?;
        }
        self.net.write_checkpoint(w)
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != REGRESSOR_MAGIC {
            return invalid("not a regressor checkpoint");
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let input_size = u32::from_le_bytes(b4) as usize;
        let mut v = [0.0; 8];
        for x in v.iter_mut() {
            let mut b8 = [0u8; 8];
            r.read_exact(&mut b8)?;
            *x = f64::from_le_bytes(b8);
        }
        let q = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(v[6], v[3], v[4], v[5]));
        let reference = Sim3Pose::new(
            Rotation::from_matrix(q.to_rotation_matrix().into_inner())?,
            Vector3::new(v[0], v[1], v[2]),
            v[7],
        )?;
        let net = DenseNet::read_checkpoint(r)?;
        if net.input_dim() != input_size * input_size || net.output_dim() != Sim3Tangent::DIM {
            return invalid("regressor network has the wrong shape");
        }
        Ok(RegressorModel {
            net,
            reference,
            input_size,
        })
    }
}

/// Grayscale image area-averaged to `size × size`, flattened row-major.
pub fn regressor_input(image: &Image, size: usize) -> Result<Vec<f64>> {
    Ok(image.to_gray().downsample(size, size)?.data)
}

/// Mean translation, projected mean rotation and geometric-mean scale.
pub fn centroid_pose(poses: &[Sim3Pose]) -> Result<Sim3Pose> {
    if poses.is_empty() {
        return invalid("centroid of an empty pose set");
    }
    let n = poses.len() as f64;
    let t = poses.iter().map(|p| *p.translation()).sum::<Vector3<f64>>() / n;
    let m = poses.iter().map(|p| *p.rotation().matrix()).sum::<Matrix3<f64>>() / n;
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.expect("U"), svd.v_t.expect("Vᵀ"));
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let log_s = poses.iter().map(|p| p.scale().ln()).sum::<f64>() / n;
    Sim3Pose::new(Rotation::from_matrix(u * d * v_t)?, t, log_s.exp())
}

fn pose_loss(est: &Sim3Pose, label: &Sim3Pose, beta: f64, gamma: f64) -> f64 {
    let dt = (est.translation() - label.translation()).norm_squared();
    let rel = est.rotation().inverse().compose(label.rotation());
    let dr = so3_log(rel.matrix()).map(|v| v.norm_squared()).unwrap_or(f64::INFINITY);
    let ds = (est.scale().ln() - label.scale().ln()).powi(2);
    dt + beta * dr + gamma * ds
}

const OUTPUT_FD_STEP: f64 = 1e-6;

/// Gradient of `pose_loss(decode(o))` with respect to the outputs `o`.
fn pose_loss_output_grad(model: &RegressorModel, out: &[f64], label: &Sim3Pose, cfg: &Stage2Config) -> Vec<f64> {
    let mut probe = out.to_vec();
    (0..out.len())
        .map(|k| {
            probe[k] = out[k] + OUTPUT_FD_STEP;
            let plus = pose_loss(&model.decode(&probe), label, cfg.beta, cfg.gamma);
            probe[k] = out[k] - OUTPUT_FD_STEP;
            let minus = pose_loss(&model.decode(&probe), label, cfg.beta, cfg.gamma);
            probe[k] = out[k];
            (plus - minus) / (2.0 * OUTPUT_FD_STEP)
        })
        .collect()
}

/// Maps a left-retraction gradient at `decode(o)` to a gradient on `o`
/// through the numerically differentiated left Jacobian of `exp`.
fn pullback_left(out: &[f64], g: &Sim3Tangent) -> Vec<f64> {
    let base_inv = Sim3Pose::exp(&Sim3Tangent::from_slice(out)).inverse();
    let g = g.to_array();
    let mut probe = out.to_vec();
    (0..out.len())
        .map(|k| {
            probe[k] = out[k] + OUTPUT_FD_STEP;
            let plus = Sim3Pose::exp(&Sim3Tangent::from_slice(&probe)).compose(&base_inv).log().to_array();
            probe[k] = out[k] - OUTPUT_FD_STEP;
            let minus = Sim3Pose::exp(&Sim3Tangent::from_slice(&probe)).compose(&base_inv).log().to_array();
            probe[k] = out[k];
            (0..7).map(|j| g[j] * (plus[j] - minus[j]) / (2.0 * OUTPUT_FD_STEP)).sum()
        })
        .collect()
}

struct Sample {
    input: Vec<f64>,
    label: Sim3Pose,
}

fn nearest_pixel(k: &Keypoint, camera: &PinholeCamera) -> (usize, usize) {
    (
        (k.u.round().max(0.0) as usize).min(camera.width - 1),
        (k.v.round().max(0.0) as usize).min(camera.height - 1),
    )
}

/// Matched features of two consecutive views lifted with depths rendered
/// from the frozen field at the label poses.
fn build_pair(inputs: &Stage2Inputs<'_>, a: usize, cfg: &Stage2Config, seed: u64) -> Result<Option<FramePair>> {
    let (fa, fb) = (&inputs.frames[a], &inputs.frames[a + 1]);
    let (kps_a, desc_a) = extract(&fa.image, &cfg.features);
    let (kps_b, desc_b) = extract(&fb.image, &cfg.features);
    let matches = match_frames(&desc_a, &desc_b, cfg.features.ratio)?;
    let cam = &inputs.camera;
    let lift = |frame: &TrainingFrame, kp: &Keypoint| -> Result<Option<(Vector2<f64>, f64)>> {
        let x = normalize_coords(&[*kp], cam)[0];
        let px = nearest_pixel(kp, cam);
        let out = render_subpixel(inputs.field, cam, &frame.label, frame.time_code, (kp.u, kp.v), px, &cfg.render, seed);
        if out.opacity < cfg.min_opacity {
            return Ok(None);
        }
        // camera-frame points of a scaled pose shrink by its scale
        Ok(Some((x, ray_distance_to_z(out.depth, &x) / frame.label.scale())))
    };
    let (mut ca, mut da, mut cb, mut db) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for p in &matches.pairs {
        if let (Some((xa, za)), Some((xb, zb))) = (lift(fa, &kps_a[p.index_a])?, lift(fb, &kps_b[p.index_b])?) {
            ca.push(xa);
            da.push(za);
            cb.push(xb);
            db.push(zb);
        }
    }
    if ca.is_empty() {
        debug!("pair {a}: {} matches, none with depth", matches.len());
        return Ok(None);
    }
    let pair = FramePair::new(&ca, &da, &cb, &db)?;
    let at_labels = if_loss(&pair, &fa.label, &fb.label)?;
    debug!(
        "pair {a}: {} matches, {} with depth, loss at labels pc {:.3e} kl {:.3e}",
        matches.len(),
        ca.len(),
        at_labels.pc,
        at_labels.kl
    );
    Ok(Some(pair))
}

#[derive(Clone, Debug)]
pub struct Stage2Result {
    pub model: RegressorModel,
    pub loss_history: Vec<f64>,
    pub n_synthetic: usize,
    pub n_pairs: usize,
}

/// Trains the regressor on the labelled views, optional synthesized views
/// around them, and the inter-frame constraint between consecutive views.
pub fn stage2_train(
    inputs: &Stage2Inputs<'_>,
    cfg: &Stage2Config,
    ablate: &Ablations,
    seed: u64,
) -> Result<Stage2Result> {
    let frames = inputs.frames;
    if frames.is_empty() {
        return invalid("stage 2 needs labelled frames");
    }
    cfg.lr.validate()?;
    let size = cfg.input_size;
    let labels: Vec<Sim3Pose> = frames.iter().map(|f| f.label).collect();
    let mut samples: Vec<Sample> = frames
        .iter()
        .map(|f| {
            Ok(Sample {
                input: regressor_input(&f.image, size)?,
                label: f.label,
            })
        })
        .collect::<Result<_>>()?;
    let n_real = samples.len();

    let mut n_synthetic = 0;
    if !ablate.rvs && cfg.rvs.multiplier > 0 {
        let times: Vec<f64> = frames.iter().map(|f| f.time_code).collect();
        let views = rvs_generate(
            inputs.field,
            &labels,
            &times,
            &cfg.rvs,
            &inputs.camera,
            &cfg.render,
            stream_seed(seed, 0x5256_5300, 0),
        )?;
        n_synthetic = views.len();
        for v in views {
            samples.push(Sample {
                input: regressor_input(&v.image, size)?,
                label: v.pose,
            });
        }
    }

    let pairs: Vec<(usize, FramePair)> = if !ablate.if_loss && cfg.lambda > 0.0 && n_real > 1 {
        (0..n_real - 1)
            .into_par_iter()
            .map(|a| Ok(build_pair(inputs, a, cfg, seed)?.map(|p| (a, p))))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect()
    } else {
        Vec::new()
    };

    let mut dims = vec![size * size];
    dims.extend(&cfg.hidden);
    dims.push(Sim3Tangent::DIM);
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, 0x5245_4752, 0));
    let mut net = DenseNet::random(&dims, cfg.hidden_activation, Activation::Identity, &mut rng)?;
    // start near the reference pose
    let mut params = net.params();
    let n_params = params.len();
    let last = net.layers().last().expect("non-empty").weights.len() + Sim3Tangent::DIM;
    params[n_params - last..].iter_mut().for_each(|p| *p *= 0.01);
    net.set_params(&params)?;
    let mut model = RegressorModel {
        net,
        reference: centroid_pose(&labels)?,
        input_size: size,
    };

    let mut adam = AdamState::new(model.net.num_params());
    let rates = vec![cfg.lr.lr_regressor; model.net.num_params()];
    let mut history = Vec::with_capacity(cfg.iters);
    let n_samples = samples.len() as f64;
    for iter in 0..cfg.iters {
        let passes: Vec<_> = samples
            .iter()
            .map(|s| model.net.forward(&s.input))
            .collect::<Result<_>>()?;
        let mut out_grads: Vec<Vec<f64>> = Vec::with_capacity(samples.len());
        let mut loss = 0.0;
        for (s, (out, _)) in samples.iter().zip(&passes) {
            loss += pose_loss(&model.decode(out), &s.label, cfg.beta, cfg.gamma) / n_samples;
            let g = pose_loss_output_grad(&model, out, &s.label, cfg);
            out_grads.push(g.into_iter().map(|x| x / n_samples).collect());
        }
        if !pairs.is_empty() {
            // each pair rides along with its first real view, so synthetic
            // views dilute both terms alike
            let w = cfg.lambda / n_samples;
            for (a, pair) in &pairs {
                let (pa, pb) = (model.decode(&passes[*a].0), model.decode(&passes[a + 1].0));
                loss += w * if_loss(pair, &pa, &pb)?.total();
                let ga = grad_if_loss(pair, &pa, &pb, PairSide::First)?;
                let gb = grad_if_loss(pair, &pa, &pb, PairSide::Second)?;
                for (k, g) in pullback_left(&passes[*a].0, &ga).into_iter().enumerate() {
                    out_grads[*a][k] += w * g;
                }
                for (k, g) in pullback_left(&passes[a + 1].0, &gb).into_iter().enumerate() {
                    out_grads[a + 1][k] += w * g;
                }
            }
        }
        let mut grads = vec![0.0; model.net.num_params()];
        for ((_, tape), og) in passes.iter().zip(&out_grads) {
            model.net.backward_accumulate(tape, og, &mut grads)?;
        }
        let delta = adam.update(&grads, &rates)?;
        let mut params = model.net.params();
        for (p, d) in params.iter_mut().zip(delta) {
            *p += d;
        }
        model.net.set_params(&params)?;
        history.push(loss);
        if iter % 100 == 0 {
            debug!("stage2 iter {iter}: loss {loss:.6e}");
        }
    }
    if let (Some(first), Some(last)) = (history.first(), history.last()) {
        info!(
            "stage2 finished: loss {first:.4e} -> {last:.4e} ({n_real} real, {n_synthetic} synthetic, {} pairs)",
            pairs.len()
        );
    }
    Ok(Stage2Result {
        model,
        loss_history: history,
        n_synthetic,
        n_pairs: pairs.len(),
    })
}
