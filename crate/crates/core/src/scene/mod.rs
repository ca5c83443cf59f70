//! Procedural ground truth: an analytic blob scene, orbit camera rigs and
//! dataset synthesis with motion blur and noisy initial poses.

pub mod fixtures;
mod rig;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::field::{BlobField, RadianceField};
use crate::image::Image;
use crate::liegroup::{interpolate, Sim3Pose, Sim3Tangent};
use crate::render::{render_image, RenderConfig};

pub use rig::{look_at, make_orbit_rig, OrbitRig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PinholeCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

impl Default for PinholeCamera {
    fn default() -> Self {
        PinholeCamera {
            fx: 64.0,
            fy: 64.0,
            cx: 32.0,
            cy: 32.0,
            width: 64,
            height: 64,
            near: 2.0,
            far: 6.5,
        }
    }
}

impl PinholeCamera {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return invalid("focal lengths must be positive");
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return invalid("camera needs 0 < near < far");
        }
        if self.width == 0 || self.height == 0 {
            return invalid("camera image must be non-empty");
        }
        Ok(())
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }
}

/// Density and color of the blob scene at `x`, time code `t`.
pub fn field_eval(field: &BlobField, x: &Vector3<f64>, t: f64) -> (f64, Vector3<f64>) {
    let s = field.query(x, t);
    (s.density, s.color)
}

/// Tangent-space noise applied to ground-truth poses by left retraction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoseNoise {
    pub trans_sigma: f64,
    pub rot_sigma: f64,
    pub logscale_sigma: f64,
}

impl Default for PoseNoise {
    fn default() -> Self {
        PoseNoise {
            trans_sigma: 0.2,
            rot_sigma: 5f64.to_radians(),
            logscale_sigma: 0.05,
        }
    }
}

impl PoseNoise {
    pub fn zero() -> Self {
        PoseNoise {
            trans_sigma: 0.0,
            rot_sigma: 0.0,
            logscale_sigma: 0.0,
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Sim3Tangent {
        let n = Normal::new(0.0, 1.0).expect("unit normal");
        let mut v = [0.0; 7];
        for (i, x) in v.iter_mut().enumerate() {
            let s = match i {
                0..=2 => self.trans_sigma,
                3..=5 => self.rot_sigma,
                _ => self.logscale_sigma,
            };
            *x = s * n.sample(rng);
        }
        Sim3Tangent::from_slice(&v)
    }

    pub fn is_zero(&self) -> bool {
        self.trans_sigma == 0.0 && self.rot_sigma == 0.0 && self.logscale_sigma == 0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub image: Image,
    /// Expected ray-termination distance along each unit pixel ray.
    pub depth: Image,
    pub time_index: usize,
    pub time_code: f64,
    pub gt_pose: Sim3Pose,
    pub init_pose: Sim3Pose,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameDataset {
    pub frames: Vec<Frame>,
    pub camera: PinholeCamera,
}

impl FrameDataset {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Frames at the given indices, preserving their time codes.
    pub fn subset(&self, indices: &[usize]) -> Result<FrameDataset> {
        let mut frames = Vec::with_capacity(indices.len());
        for &i in indices {
            match self.frames.get(i) {
                Some(f) => frames.push(f.clone()),
                None => return invalid(format!("frame index {i} out of range")),
            }
        }
        Ok(FrameDataset {
            frames,
            camera: self.camera,
        })
    }
}

/// `time_index / max(1, n - 1)`.
pub fn time_code(index: usize, n: usize) -> f64 {
    index as f64 / (n.max(2) - 1) as f64
}

/// Training indices every `stride` frames, and the remaining indices.
pub fn sparse_split(n: usize, stride: usize) -> (Vec<usize>, Vec<usize>) {
    let stride = stride.max(1);
    (0..n).partition(|i| i % stride == 0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetOptions {
    pub blur_substeps: usize,
    pub noise: PoseNoise,
    pub seed: u64,
    pub render: RenderConfig,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions {
            blur_substeps: 1,
            noise: PoseNoise::default(),
            seed: 0,
            render: RenderConfig::default(),
        }
    }
}

fn to_image(camera: &PinholeCamera, rgb: &[Vector3<f64>]) -> Image {
    let data = rgb.iter().flat_map(|c| [c.x, c.y, c.z]).collect();
    Image::from_data(camera.width, camera.height, 3, data).expect("one color per pixel")
}

/// Renders one (possibly blurred) frame. The shutter window averages
/// `blur_substeps` sharp renders at fractions `k·0.5/blur_substeps` of the
/// way to the next frame's pose and time; the last frame looks back to its
/// predecessor instead.
fn synthesize_frame(
    field: &dyn RadianceField,
    rig: &[Sim3Pose],
    camera: &PinholeCamera,
    index: usize,
    opts: &DatasetOptions,
) -> (Image, Image) {
    let n = rig.len();
    let t0 = time_code(index, n);
    let neighbour = if index + 1 < n {
        Some(index + 1)
    } else if index > 0 {
        Some(index - 1)
    } else {
        None
    };
    let substeps = opts.blur_substeps.max(1);
    let mut acc = vec![Vector3::zeros(); camera.num_pixels()];
    let mut depth = Vec::new();
    for k in 0..substeps {
        let f = k as f64 * 0.5 / substeps as f64;
        let (pose, t) = match neighbour {
            Some(j) if k > 0 => (
                interpolate(&rig[index], &rig[j], f),
                t0 + f * (time_code(j, n) - t0),
            ),
            _ => (rig[index], t0),
        };
        let (rgb, d) = render_image(field, camera, &pose, t, &opts.render, opts.seed);
        if k == 0 {
            depth = d;
        }
        for (a, c) in acc.iter_mut().zip(rgb) {
            *a += c;
        }
    }
    for a in &mut acc {
        *a /= substeps as f64;
    }
    let depth = Image::from_data(camera.width, camera.height, 1, depth).expect("one depth per pixel");
    (to_image(camera, &acc), depth)
}

/// Synthesizes a dataset from a scene and a camera rig. Pure in its
/// inputs: frames are rendered in parallel, each with its own noise
/// stream seeded by `seed ^ frame_index`.
pub fn gen_dataset(
    field: &BlobField,
    rig: &[Sim3Pose],
    camera: &PinholeCamera,
    opts: &DatasetOptions,
) -> Result<FrameDataset> {
    camera.validate()?;
    if rig.is_empty() {
        return invalid("camera rig is empty");
    }
    if opts.blur_substeps == 0 {
        return invalid("blur_substeps must be at least 1");
    }
    let n = rig.len();
    let frames: Vec<Frame> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (image, depth) = synthesize_frame(field, rig, camera, i, opts);
            let init_pose = if opts.noise.is_zero() {
                rig[i]
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ i as u64);
                rig[i].retract(&opts.noise.sample(&mut rng))
            };
            Frame {
                image,
                depth,
                time_index: i,
                time_code: time_code(i, n),
                gt_pose: rig[i],
                init_pose,
            }
        })
        .collect();
    Ok(FrameDataset {
        frames,
        camera: *camera,
    })
}

/// Everything needed to synthesize a dataset, as read from JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub blobs: BlobField,
    #[serde(default)]
    pub camera: PinholeCamera,
    pub rig: OrbitRig,
    #[serde(default = "one")]
    pub blur_substeps: usize,
    #[serde(default)]
    pub noise: PoseNoise,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

impl SceneSpec {
    pub fn generate(&self, render: &RenderConfig) -> Result<FrameDataset> {
        let field = BlobField::new(self.blobs.blobs.clone())?;
        let rig = self.rig.poses()?;
        gen_dataset(
            &field,
            &rig,
            &self.camera,
            &DatasetOptions {
                blur_substeps: self.blur_substeps,
                noise: self.noise,
                seed: self.seed,
                render: render.clone(),
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Blob;

    fn blob_at(c: Vector3<f64>, v: Vector3<f64>) -> BlobField {
        BlobField::new(vec![Blob {
            center0: c,
            velocity: v,
            sigma_spatial: 0.3,
            amplitude: 5.0,
            color: Vector3::new(0.8, 0.4, 0.1),
        }])
        .unwrap()
    }

    #[test]
    fn field_eval_basic() {
        let f = blob_at(Vector3::new(0.1, 0.2, 0.3), Vector3::zeros());
        let (d, c) = field_eval(&f, &Vector3::new(0.1, 0.2, 0.3), 0.0);
        assert_eq!(d, 5.0);
        assert_eq!(c, Vector3::new(0.8, 0.4, 0.1));
        let (d, _) = field_eval(&f, &Vector3::new(0.1 + 3.0, 0.2, 0.3), 0.0);
        assert!(d < 1e-20);
    }

    #[test]
    fn moving_blob_peak_follows_velocity() {
        let v = Vector3::new(0.6, -0.2, 0.4);
        let f = blob_at(Vector3::zeros(), v);
        // grid argmax over a 0.02 m lattice
        let mut best = (f64::MIN, Vector3::zeros());
        for i in -30..=30 {
            for j in -30..=30 {
                for k in -30..=30 {
                    let x = Vector3::new(i as f64, j as f64, k as f64) * 0.02;
                    let (d, _) = field_eval(&f, &x, 0.5);
                    if d > best.0 {
                        best = (d, x);
                    }
                }
            }
        }
        assert!((best.1 - v * 0.5).norm() < 1e-9);
    }

    #[test]
    fn time_codes_and_split() {
        assert_eq!(time_code(0, 1), 0.0);
        assert_eq!(time_code(3, 4), 1.0);
        let (train, test) = sparse_split(25, 10);
        assert_eq!(train, vec![0, 10, 20]);
        assert_eq!(test.len(), 22);
    }

    #[test]
    fn camera_validation() {
        let mut c = PinholeCamera::default();
        assert!(c.validate().is_ok());
        c.near = 7.0;
        assert!(c.validate().is_err());
    }
}
