//! Emission-absorption volume rendering with hierarchical sampling and
//! analytic gradients of the photometric loss.
//!
//! Gradients treat the per-ray sample depths as constants: they flow
//! through the world positions `x = o + z·d` of the samples and through
//! the field, never through sample placement.

pub mod encoding;
mod sampling;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::field::{FieldSample, RadianceField};
use crate::liegroup::{Sim3Pose, Sim3Tangent};
use crate::scene::PinholeCamera;

pub use encoding::{positional_encoding, positional_encoding_vjp, EncodingConfig};
pub use sampling::{sample_coarse, sample_fine};

/// Integer pixel `(u, v)`: column, row.
pub type Pixel = (usize, usize);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.origin + self.direction * t
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub rgb: Vector3<f64>,
    pub depth: f64,
    pub weights: Vec<f64>,
    pub opacity: f64,
}

/// Per-ray sampling and compositing settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub n_coarse: usize,
    pub n_fine: usize,
    pub n_freqs_xyz: usize,
    pub n_freqs_time: usize,
    /// Fraction of stage-1 iterations over which the encoding window opens.
    pub alpha_schedule: f64,
    pub background_color: [f64; 3],
    /// Jitter samples within strata; off gives deterministic midpoints.
    pub stratified: bool,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            n_coarse: 32,
            n_fine: 32,
            n_freqs_xyz: 6,
            n_freqs_time: 4,
            alpha_schedule: 0.3,
            background_color: [0.0; 3],
            stratified: false,
        }
    }
}

impl RenderConfig {
    pub fn background(&self) -> Vector3<f64> {
        Vector3::from(self.background_color)
    }

    /// Linear opening of the encoding window over the first
    /// `alpha_schedule` fraction of `total` iterations.
    pub fn alpha_at(&self, iter: usize, total: usize) -> f64 {
        let n = self.n_freqs_xyz as f64;
        let ramp = self.alpha_schedule * total as f64;
        if ramp <= 0.0 {
            return n;
        }
        (iter as f64 / ramp).min(1.0) * n
    }
}

/// Camera-frame unit direction through the center of pixel `(u, v)`.
pub fn camera_direction(camera: &PinholeCamera, u: f64, v: f64) -> Vector3<f64> {
    Vector3::new(
        (u + 0.5 - camera.cx) / camera.fx,
        (v + 0.5 - camera.cy) / camera.fy,
        1.0,
    )
    .normalize()
}

/// One ray per pixel from a camera-to-world pose. The pose scale does not
/// rescale directions.
pub fn gen_rays(camera: &PinholeCamera, pose: &Sim3Pose, pixels: &[Pixel]) -> Result<Vec<Ray>> {
    pixels
        .iter()
        .map(|&(u, v)| {
            if u >= camera.width || v >= camera.height {
                return invalid(format!(
                    "pixel ({u}, {v}) outside {}x{} image",
                    camera.width, camera.height
                ));
            }
            Ok(ray_for(camera, pose, u as f64, v as f64))
        })
        .collect()
}

pub(crate) fn ray_for(camera: &PinholeCamera, pose: &Sim3Pose, u: f64, v: f64) -> Ray {
    let d = pose.rotation().rotate(&camera_direction(camera, u, v)).normalize();
    Ray {
        origin: *pose.translation(),
        direction: d,
        t_near: camera.near,
        t_far: camera.far,
    }
}

/// Discrete emission-absorption compositing. The last interval extends to
/// `t_far`.
pub fn composite(
    depths: &[f64],
    densities: &[f64],
    colors: &[Vector3<f64>],
    t_far: f64,
) -> Result<RenderOutput> {
    if depths.len() != densities.len() || depths.len() != colors.len() {
        return invalid("composite: depths, densities and colors differ in length");
    }
    if let Some(d) = densities.iter().find(|d| !(**d >= 0.0)) {
        return invalid(format!("composite: negative or NaN density {d}"));
    }
    let n = depths.len();
    let mut weights = Vec::with_capacity(n);
    let mut transmittance = 1.0;
    let mut rgb = Vector3::zeros();
    let mut depth_acc = 0.0;
    for i in 0..n {
        let delta = interval(depths, i, t_far);
        let alpha = -(-densities[i] * delta).exp_m1();
        let w = transmittance * alpha;
        weights.push(w);
        rgb += colors[i] * w;
        depth_acc += w * depths[i];
        transmittance *= 1.0 - alpha;
    }
    let opacity: f64 = weights.iter().sum();
    debug_assert!(weights.iter().all(|w| *w >= 0.0) && opacity <= 1.0 + 1e-9);
    Ok(RenderOutput {
        rgb,
        depth: depth_acc / opacity.max(1e-9),
        weights,
        opacity,
    })
}

#[inline]
fn interval(depths: &[f64], i: usize, t_far: f64) -> f64 {
    if i + 1 < depths.len() {
        depths[i + 1] - depths[i]
    } else {
        (t_far - depths[i]).max(0.0)
    }
}

/// Gradients of `g·rgb_final` with respect to each sample's density and
/// color, where `rgb_final = Σ wᵢcᵢ + T_final·background`.
fn composite_backward(
    depths: &[f64],
    samples: &[FieldSample],
    t_far: f64,
    background: &Vector3<f64>,
    g: &Vector3<f64>,
) -> (Vec<f64>, Vec<Vector3<f64>>) {
    let n = depths.len();
    let mut trans = Vec::with_capacity(n + 1);
    let mut wc = Vec::with_capacity(n);
    let mut t = 1.0;
    trans.push(t);
    for i in 0..n {
        let delta = interval(depths, i, t_far);
        let a = -(-samples[i].density * delta).exp_m1();
        wc.push(samples[i].color * (t * a));
        t *= 1.0 - a;
        trans.push(t);
    }
    let t_final = trans[n];
    let mut d_density = vec![0.0; n];
    let mut d_color = Vec::with_capacity(n);
    // suffix = Σ_{k>i} w_k c_k
    let mut suffix = Vector3::zeros();
    for i in (0..n).rev() {
        let delta = interval(depths, i, t_far);
        let own = samples[i].color * trans[i + 1];
        d_density[i] = delta * g.dot(&(own - suffix - background * t_final));
        suffix += wc[i];
    }
    for i in 0..n {
        let w = trans[i] - trans[i + 1];
        d_color.push(g * w);
    }
    (d_density, d_color)
}

/// A ray rendered at fixed sample depths, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct RayTrace {
    pub ray: Ray,
    pub depths: Vec<f64>,
    pub samples: Vec<FieldSample>,
    /// Composited color including background.
    pub rgb: Vector3<f64>,
    pub output: RenderOutput,
}

/// Coarse pass, then fine depths drawn from the coarse weights; returns
/// the merged sorted depths used by the final pass.
pub fn plan_depths<R: Rng + ?Sized>(
    field: &dyn RadianceField,
    ray: &Ray,
    time: f64,
    cfg: &RenderConfig,
    rng: &mut R,
) -> Vec<f64> {
    let coarse = sample_coarse(ray, cfg.n_coarse.max(2), cfg.stratified, rng);
    if cfg.n_fine == 0 {
        return coarse;
    }
    let (densities, colors) = query_along(field, ray, &coarse, time);
    let out = composite(&coarse, &densities, &colors, ray.t_far)
        .expect("field densities are non-negative");
    sample_fine(ray, &coarse, &out.weights, cfg.n_fine, cfg.stratified, rng)
}

fn query_along(
    field: &dyn RadianceField,
    ray: &Ray,
    depths: &[f64],
    time: f64,
) -> (Vec<f64>, Vec<Vector3<f64>>) {
    depths
        .iter()
        .map(|z| {
            let s = field.query(&ray.at(*z), time);
            (s.density, s.color)
        })
        .unzip()
}

pub fn trace_with_depths(
    field: &dyn RadianceField,
    ray: &Ray,
    time: f64,
    depths: Vec<f64>,
    background: &Vector3<f64>,
) -> RayTrace {
    let samples: Vec<FieldSample> = depths.iter().map(|z| field.query(&ray.at(*z), time)).collect();
    let densities: Vec<f64> = samples.iter().map(|s| s.density).collect();
    let colors: Vec<Vector3<f64>> = samples.iter().map(|s| s.color).collect();
    let output = composite(&depths, &densities, &colors, ray.t_far)
        .expect("field densities are non-negative");
    let rgb = output.rgb + background * (1.0 - output.opacity);
    RayTrace {
        ray: *ray,
        depths,
        samples,
        rgb,
        output,
    }
}

/// Deterministic per-pixel RNG stream.
pub(crate) fn pixel_rng(seed: u64, pixel: Pixel) -> ChaCha8Rng {
    let key = seed ^ ((pixel.1 as u64) << 32 | pixel.0 as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    ChaCha8Rng::seed_from_u64(key)
}

/// Full render of one pixel: coarse pass, fine sampling, final pass.
#[allow(clippy::too_many_arguments)]
pub fn render_pixel(
    field: &dyn RadianceField,
    camera: &PinholeCamera,
    pose: &Sim3Pose,
    time: f64,
    pixel: Pixel,
    cfg: &RenderConfig,
    seed: u64,
) -> Result<RenderOutput> {
    let ray = gen_rays(camera, pose, &[pixel])?[0];
    let mut rng = pixel_rng(seed, pixel);
    let depths = plan_depths(field, &ray, time, cfg, &mut rng);
    let mut trace = trace_with_depths(field, &ray, time, depths, &cfg.background());
    trace.output.rgb = trace.rgb;
    Ok(trace.output)
}

/// Renders the ray through continuous pixel coordinates `(u, v)`, drawing
/// stratification noise from `pixel`.
pub(crate) fn render_subpixel(
    field: &dyn RadianceField,
    camera: &PinholeCamera,
    pose: &Sim3Pose,
    time: f64,
    (u, v): (f64, f64),
    pixel: Pixel,
    cfg: &RenderConfig,
    seed: u64,
) -> RenderOutput {
    let ray = ray_for(camera, pose, u, v);
    let mut rng = pixel_rng(seed, pixel);
    let depths = plan_depths(field, &ray, time, cfg, &mut rng);
    let mut trace = trace_with_depths(field, &ray, time, depths, &cfg.background());
    trace.output.rgb = trace.rgb;
    trace.output
}

/// Sample depths for a batch of pixels.
pub fn plan_batch(
    field: &dyn RadianceField,
    camera: &PinholeCamera,
    pose: &Sim3Pose,
    time: f64,
    pixels: &[Pixel],
    cfg: &RenderConfig,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let rays = gen_rays(camera, pose, pixels)?;
    Ok(rays
        .iter()
        .zip(pixels)
        .map(|(ray, px)| plan_depths(field, ray, time, cfg, &mut pixel_rng(seed, *px)))
        .collect())
}

/// Renders a batch at given depths.
pub fn trace_batch(
    field: &dyn RadianceField,
    camera: &PinholeCamera,
    pose: &Sim3Pose,
    time: f64,
    pixels: &[Pixel],
    depths: &[Vec<f64>],
    background: &Vector3<f64>,
) -> Result<Vec<RayTrace>> {
    if depths.len() != pixels.len() {
        return invalid("one depth list per pixel required");
    }
    let rays = gen_rays(camera, pose, pixels)?;
    Ok(rays
        .iter()
        .zip(depths)
        .map(|(ray, d)| trace_with_depths(field, ray, time, d.clone(), background))
        .collect())
}

/// Renders every pixel of a frame, in parallel, returning color and depth
/// images.
pub fn render_image(
    field: &dyn RadianceField,
    camera: &PinholeCamera,
    pose: &Sim3Pose,
    time: f64,
    cfg: &RenderConfig,
    seed: u64,
) -> (Vec<Vector3<f64>>, Vec<f64>) {
    let pixels: Vec<Pixel> = (0..camera.height)
        .flat_map(|v| (0..camera.width).map(move |u| (u, v)))
        .collect();
    let out: Vec<(Vector3<f64>, f64)> = pixels
        .par_iter()
        .map(|px| {
            let o = render_pixel(field, camera, pose, time, *px, cfg, seed).expect("pixel in bounds");
            (o.rgb, o.depth)
        })
        .collect();
    out.into_iter().unzip()
}

/// Mean squared error over all channels.
pub fn photometric_loss(rendered: &[Vector3<f64>], reference: &[Vector3<f64>]) -> Result<f64> {
    if rendered.len() != reference.len() {
        return invalid(format!(
            "photometric loss: {} rendered vs {} reference pixels",
            rendered.len(),
            reference.len()
        ));
    }
    if rendered.is_empty() {
        return invalid("photometric loss of an empty batch");
    }
    let sum: f64 = rendered
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b).norm_squared())
        .sum();
    Ok(sum / (3 * rendered.len()) as f64)
}

/// Loss and gradients of one frame's pixel batch.
#[derive(Clone, Debug)]
pub struct BatchGradient {
    pub loss: f64,
    /// Gradient with respect to the left-retraction tangent of the pose.
    pub pose: Sim3Tangent,
    /// Gradient with respect to the field parameters (empty if not requested).
    pub field: Vec<f64>,
}

/// Which gradients to compute.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GradRequest {
    pub pose: bool,
    pub field: bool,
}

/// Renders the batch at `depths` and backpropagates the photometric loss.
/// Reductions run sequentially in pixel order.
#[allow(clippy::too_many_arguments)]
pub fn batch_gradient(
    field: &dyn RadianceField,
    camera: &PinholeCamera,
    pose: &Sim3Pose,
    time: f64,
    pixels: &[Pixel],
    depths: &[Vec<f64>],
    reference: &[Vector3<f64>],
    background: &Vector3<f64>,
    want: GradRequest,
) -> Result<BatchGradient> {
    let traces = trace_batch(field, camera, pose, time, pixels, depths, background)?;
    let rendered: Vec<Vector3<f64>> = traces.iter().map(|t| t.rgb).collect();
    let loss = photometric_loss(&rendered, reference)?;
    let scale = 2.0 / (3 * pixels.len()) as f64;

    let origin = *pose.translation();
    let mut g_rho = Vector3::zeros();
    let mut g_phi = Vector3::zeros();
    let mut g_sigma = 0.0;
    let mut g_field = if want.field {
        vec![0.0; field.num_params()]
    } else {
        Vec::new()
    };
    for (trace, target) in traces.iter().zip(reference) {
        let g_rgb = (trace.rgb - target) * scale;
        let (d_density, d_color) =
            composite_backward(&trace.depths, &trace.samples, trace.ray.t_far, background, &g_rgb);
        for (i, z) in trace.depths.iter().enumerate() {
            let x = trace.ray.at(*z);
            if want.pose {
                let gx = field.vjp_position(&x, time, d_density[i], &d_color[i]);
                g_rho += gx;
                g_phi += x.cross(&gx);
                g_sigma += gx.dot(&origin);
            }
            if want.field {
                field.vjp_params(&x, time, d_density[i], &d_color[i], &mut g_field);
            }
        }
    }
    Ok(BatchGradient {
        loss,
        pose: Sim3Tangent::new(g_rho, g_phi, g_sigma),
        field: g_field,
    })
}

/// Photometric loss of a batch and its gradient with respect to the
/// left-retraction tangent of `pose`. Sample depths are planned at `pose`.
#[allow(clippy::too_many_arguments)]
pub fn grad_pose(
    field: &dyn RadianceField,
    camera: &PinholeCamera,
    pose: &Sim3Pose,
    time: f64,
    pixels: &[Pixel],
    reference: &[Vector3<f64>],
    cfg: &RenderConfig,
    seed: u64,
) -> Result<(f64, Sim3Tangent)> {
    let depths = plan_batch(field, camera, pose, time, pixels, cfg, seed)?;
    let g = batch_gradient(
        field,
        camera,
        pose,
        time,
        pixels,
        &depths,
        reference,
        &cfg.background(),
        GradRequest {
            pose: true,
            field: false,
        },
    )?;
    Ok((g.loss, g.pose))
}

/// Photometric loss and its gradient with respect to every field parameter.
#[allow(clippy::too_many_arguments)]
pub fn grad_field(
    field: &dyn RadianceField,
    camera: &PinholeCamera,
    pose: &Sim3Pose,
    time: f64,
    pixels: &[Pixel],
    reference: &[Vector3<f64>],
    cfg: &RenderConfig,
    seed: u64,
) -> Result<(f64, Vec<f64>)> {
    let depths = plan_batch(field, camera, pose, time, pixels, cfg, seed)?;
    let g = batch_gradient(
        field,
        camera,
        pose,
        time,
        pixels,
        &depths,
        reference,
        &cfg.background(),
        GradRequest {
            pose: false,
            field: true,
        },
    )?;
    Ok((g.loss, g.field))
}

/// Standard deviation (pixels) of the window drawn around each keypoint.
pub const KEYPOINT_WINDOW_SIGMA: f64 = 2.0;

/// Draws `n` pixels: with probability `mix` from a Gaussian window around
/// a uniformly chosen keypoint, otherwise uniformly over the image.
pub fn keypoint_weighted_pixels<R: Rng + ?Sized>(
    keypoints: &[(f64, f64)],
    width: usize,
    height: usize,
    n: usize,
    mix: f64,
    rng: &mut R,
) -> Result<Vec<Pixel>> {
    if n == 0 {
        return invalid("keypoint sampler needs n >= 1");
    }
    if width == 0 || height == 0 {
        return invalid("keypoint sampler needs a non-empty image");
    }
    let mix = if keypoints.is_empty() && mix > 0.0 {
        log::debug!("no keypoints available; sampling pixels uniformly");
        0.0
    } else {
        mix.clamp(0.0, 1.0)
    };
    let window = Normal::new(0.0, KEYPOINT_WINDOW_SIGMA).expect("positive sigma");
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        if mix > 0.0 && rng.random::<f64>() < mix {
            let (ku, kv) = keypoints[rng.random_range(0..keypoints.len())];
            let u = (ku + window.sample(rng)).round().clamp(0.0, (width - 1) as f64);
            let v = (kv + window.sample(rng)).round().clamp(0.0, (height - 1) as f64);
            out.push((u as usize, v as usize));
        } else {
            out.push((rng.random_range(0..width), rng.random_range(0..height)));
        }
    }
    Ok(out)
}
