use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stage1::stream_seed;
use crate::error::{invalid, Result};
use crate::field::RadianceField;
use crate::image::Image;
use crate::liegroup::{Rotation, Sim3Pose};
use crate::render::{render_image, RenderConfig};
use crate::scene::PinholeCamera;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RvsConfig {
    /// Synthetic views per source view.
    pub multiplier: usize,
    /// Radius of the translation ball (m).
    pub trans: f64,
    /// Largest rotation angle (degrees).
    pub rot_deg: f64,
}

impl Default for RvsConfig {
    fn default() -> Self {
        RvsConfig {
            multiplier: 10,
            trans: 0.2,
            rot_deg: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticView {
    pub source: usize,
    pub pose: Sim3Pose,
    pub time_code: f64,
    pub image: Image,
}

fn unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n: f64 = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// `R·R_δ` with a uniform axis and angle in `[0, rot]`, and `t + t_δ` with
/// `t_δ` uniform in the ball of radius `trans`. Scale is kept.
pub fn perturb_pose<R: Rng + ?Sized>(pose: &Sim3Pose, trans: f64, rot: f64, rng: &mut R) -> Sim3Pose {
    let axis = unit_vector(rng);
    let angle = rng.random::<f64>() * rot;
    let dir = unit_vector(rng);
    let radius = trans * rng.random::<f64>().cbrt();
    let rotation = pose.rotation().compose(&Rotation::exp(&(axis * angle)));
    Sim3Pose::new(rotation, pose.translation() + dir * radius, pose.scale())
        .expect("perturbation keeps a valid pose")
}

/// Renders `multiplier` perturbed copies of every source pose with the
/// trained field, each at its source frame's time code.
pub fn rvs_generate(
    field: &dyn RadianceField,
    poses: &[Sim3Pose],
    time_codes: &[f64],
    cfg: &RvsConfig,
    camera: &PinholeCamera,
    render: &RenderConfig,
    seed: u64,
) -> Result<Vec<SyntheticView>> {
    if poses.len() != time_codes.len() {
        return invalid("one time code per source pose required");
    }
    if cfg.trans < 0.0 || cfg.rot_deg < 0.0 {
        return invalid("perturbation magnitudes must be non-negative");
    }
    let jobs: Vec<(usize, usize)> = (0..poses.len())
        .flat_map(|s| (0..cfg.multiplier).map(move |k| (s, k)))
        .collect();
    Ok(jobs
        .par_iter()
        .map(|&(s, k)| {
            let stream = stream_seed(seed, s as u64, k as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(stream);
            let pose = perturb_pose(&poses[s], cfg.trans, cfg.rot_deg.to_radians(), &mut rng);
            let (rgb, _) = render_image(field, camera, &pose, time_codes[s], render, stream);
            let data = rgb.iter().flat_map(|c| [c.x, c.y, c.z]).collect();
            SyntheticView {
                source: s,
                pose,
                time_code: time_codes[s],
                image: Image::from_data(camera.width, camera.height, 3, data).expect("full frame"),
            }
        })
        .collect())
}
