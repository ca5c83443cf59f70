//! Reference scenes and rigs shared by the tests, the acceptance suite and
//! the command-line examples.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{OrbitRig, PinholeCamera, PoseNoise, SceneSpec};
use crate::field::{Blob, BlobField};

fn blob(c: [f64; 3], sigma: f64, amplitude: f64, color: [f64; 3]) -> Blob {
    Blob {
        center0: Vector3::from(c),
        velocity: Vector3::zeros(),
        sigma_spatial: sigma,
        amplitude,
        color: Vector3::from(color),
    }
}

/// Five static blobs inside a 1 m ball around the origin.
pub fn five_blob_scene() -> BlobField {
    BlobField::new(vec![
        blob([0.0, 0.0, 0.0], 0.35, 10.0, [0.9, 0.3, 0.2]),
        blob([0.6, 0.3, 0.2], 0.22, 14.0, [0.2, 0.8, 0.3]),
        blob([-0.5, 0.5, -0.2], 0.25, 12.0, [0.2, 0.3, 0.9]),
        blob([0.1, -0.6, 0.4], 0.2, 16.0, [0.9, 0.9, 0.2]),
        blob([-0.3, -0.3, -0.5], 0.28, 11.0, [0.8, 0.3, 0.8]),
    ])
    .expect("valid fixture")
}

/// The five-blob scene plus `n_small` small dense blobs scattered in the
/// same ball, which give the images corners to match.
pub fn textured_blob_scene(n_small: usize) -> BlobField {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7e57);
    let mut field = five_blob_scene();
    for _ in 0..n_small {
        let c = loop {
            let c = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            if c.norm() <= 1.0 {
                break c;
            }
        };
        let color = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
        field.blobs.push(blob(c.into(), rng.random_range(0.08..0.14), 30.0, color));
    }
    field
}

/// The five-blob scene with the first two blobs sweeping across the view.
pub fn moving_blob_scene(speed: f64) -> BlobField {
    let mut field = five_blob_scene();
    field.blobs[0].velocity = Vector3::new(0.0, 1.0, 0.5) * speed;
    field.blobs[1].velocity = Vector3::new(-0.8, 0.0, 0.3) * speed;
    field
}

pub fn fixture_camera() -> PinholeCamera {
    PinholeCamera {
        fx: 64.0,
        fy: 64.0,
        cx: 32.0,
        cy: 32.0,
        width: 64,
        height: 64,
        near: 2.0,
        far: 6.0,
    }
}

/// Eight views on a full orbit of radius 4 with gentle elevation change.
pub fn orbit_spec(seed: u64) -> SceneSpec {
    SceneSpec {
        blobs: five_blob_scene(),
        camera: fixture_camera(),
        rig: OrbitRig {
            n_frames: 8,
            radius: 4.0,
            target: Vector3::zeros(),
            elevation_range: 0.3,
            turns: 1.0,
            start_azimuth: 0.0,
        },
        blur_substeps: 1,
        noise: PoseNoise::default(),
        seed,
    }
}

pub const ARC_SMALL_BLOBS: usize = 40;

/// A dense 80-view quarter arc; sparse training views are taken every
/// tenth frame and the rest are held out.
pub fn arc_spec(seed: u64) -> SceneSpec {
    SceneSpec {
        blobs: textured_blob_scene(ARC_SMALL_BLOBS),
        camera: fixture_camera(),
        rig: OrbitRig {
            n_frames: 80,
            radius: 4.0,
            target: Vector3::zeros(),
            elevation_range: 0.2,
            turns: 0.25,
            start_azimuth: 0.3,
        },
        blur_substeps: 1,
        noise: PoseNoise::default(),
        seed,
    }
}

/// The eight-view orbit over the moving-blob scene, with an eight-step
/// shutter so moving blobs smear.
pub fn moving_orbit_spec(seed: u64) -> SceneSpec {
    SceneSpec {
        blobs: moving_blob_scene(0.5),
        blur_substeps: 8,
        ..orbit_spec(seed)
    }
}
