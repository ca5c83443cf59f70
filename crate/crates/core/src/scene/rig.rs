use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::liegroup::{Rotation, Sim3Pose};

/// Spiral orbit around a target with world z up. Elevation oscillates as
/// `elevation_range · sin(2πk/n)`; azimuth advances by `2π·turns/n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitRig {
    pub n_frames: usize,
    pub radius: f64,
    #[serde(default)]
    pub target: Vector3<f64>,
    #[serde(default)]
    pub elevation_range: f64,
    #[serde(default = "default_turns")]
    pub turns: f64,
    #[serde(default)]
    pub start_azimuth: f64,
}

fn default_turns() -> f64 {
    1.0
}

impl OrbitRig {
    pub fn new(n_frames: usize, radius: f64, target: Vector3<f64>, elevation_range: f64) -> Self {
        OrbitRig {
            n_frames,
            radius,
            target,
            elevation_range,
            turns: 1.0,
            start_azimuth: 0.0,
        }
    }

    pub fn poses(&self) -> Result<Vec<Sim3Pose>> {
        if self.n_frames < 2 {
            return invalid("an orbit rig needs at least 2 frames");
        }
        if !(self.radius > 0.0) {
            return invalid("orbit radius must be positive");
        }
        if self.elevation_range.abs() >= 0.5 * PI - 1e-3 {
            return invalid("orbit elevation must stay below the pole");
        }
        let n = self.n_frames as f64;
        Ok((0..self.n_frames)
            .map(|k| {
                let k = k as f64;
                let azimuth = self.start_azimuth + 2.0 * PI * self.turns * k / n;
                let elevation = self.elevation_range * (2.0 * PI * k / n).sin();
                let offset = Vector3::new(
                    elevation.cos() * azimuth.cos(),
                    elevation.cos() * azimuth.sin(),
                    elevation.sin(),
                ) * self.radius;
                look_at(self.target + offset, self.target)
            })
            .collect())
    }
}

pub fn make_orbit_rig(
    n_frames: usize,
    radius: f64,
    target: Vector3<f64>,
    elevation_range: f64,
) -> Result<Vec<Sim3Pose>> {
    OrbitRig::new(n_frames, radius, target, elevation_range).poses()
}

/// Camera-to-world pose at `position` facing `target`; camera x right,
/// y down, z forward. World +z is up; a camera looking straight up or down
/// uses +y instead.
pub fn look_at(position: Vector3<f64>, target: Vector3<f64>) -> Sim3Pose {
    let z = (target - position).normalize();
    let up = if z.cross(&Vector3::z()).norm() < 1e-9 { Vector3::y() } else { Vector3::z() };
    let x = z.cross(&up).normalize();
    let y = z.cross(&x);
    let r = Matrix3::from_columns(&[x, y, z]);
    Sim3Pose::rigid(Rotation::from_matrix_unchecked(r), position)
}
