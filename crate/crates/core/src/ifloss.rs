//! Inter-frame geometric constraint between consecutive frames: matched
//! features are lifted to 3-D with their depths, and the relative pose must
//! carry one cloud onto the other, both pointwise and in distribution.

use log::debug;
use nalgebra::{Matrix3, Vector2, Vector3};

use crate::error::{invalid, Error, Result};
use crate::liegroup::{Sim3Pose, Sim3Tangent};
use crate::optim::fd_gradient;

pub const COV_FLOOR: f64 = 1e-8;
pub const KL_FD_STEP: f64 = 1e-6;
pub const MIN_FIT_POINTS: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub source_frame: usize,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>, source_frame: usize) -> Self {
        PointCloud {
            points,
            source_frame,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn transformed(&self, pose: &Sim3Pose) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| pose.apply(p)).collect(),
            source_frame: self.source_frame,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianFit {
    pub mean: Vector3<f64>,
    pub cov: Matrix3<f64>,
}

/// Lifts `d·(X, 1)` into the world with `pose`. Pairs with non-positive
/// depth are dropped.
pub fn backproject(depths: &[f64], coords: &[Vector2<f64>], pose: &Sim3Pose) -> Result<PointCloud> {
    if depths.len() != coords.len() {
        return invalid("depths and coordinates differ in length");
    }
    let mut dropped = 0;
    let points = depths
        .iter()
        .zip(coords)
        .filter_map(|(&d, x)| {
            if d > 0.0 && d.is_finite() {
                Some(pose.apply(&(Vector3::new(x.x, x.y, 1.0) * d)))
            } else {
                dropped += 1;
                None
            }
        })
        .collect();
    if dropped > 0 {
        debug!("backproject dropped {dropped} points with non-positive depth");
    }
    Ok(PointCloud::new(points, 0))
}

/// Converts a distance along the unit pixel ray to depth along the optical
/// axis for normalized coordinate `x`.
pub fn ray_distance_to_z(distance: f64, x: &Vector2<f64>) -> f64 {
    distance / (1.0 + x.norm_squared()).sqrt()
}

/// `P_{i+1}⁻¹ · P_i`: maps frame-`i` camera coordinates into frame `i+1`.
pub fn relative_pose(p_i: &Sim3Pose, p_i1: &Sim3Pose) -> Sim3Pose {
    p_i1.inverse().compose(p_i)
}

/// Mean squared distance between `a[k]` and `T·b[k]`.
pub fn pc_loss(a: &PointCloud, b: &PointCloud, t: &Sim3Pose) -> Result<f64> {
    if a.len() != b.len() {
        return invalid("point clouds differ in length");
    }
    if a.is_empty() {
        return invalid("point clouds are empty");
    }
    let sum: f64 = a
        .points
        .iter()
        .zip(&b.points)
        .map(|(pa, pb)| (pa - t.apply(pb)).norm_squared())
        .sum();
    Ok(sum / a.len() as f64)
}

pub fn gaussian_fit(c: &PointCloud) -> Result<GaussianFit> {
    let n = c.len();
    if n < MIN_FIT_POINTS {
        return invalid(format!("a Gaussian fit needs {MIN_FIT_POINTS} points, got {n}"));
    }
    let mean = c.points.iter().sum::<Vector3<f64>>() / n as f64;
    let mut cov = Matrix3::zeros();
    for p in &c.points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov /= (n - 1) as f64;
    cov += Matrix3::identity() * COV_FLOOR;
    // exact symmetry
    cov = (cov + cov.transpose()) * 0.5;
    Ok(GaussianFit { mean, cov })
}

/// Closed-form `KL(a ‖ b)` between two trivariate Gaussians.
pub fn gaussian_kl(a: &GaussianFit, b: &GaussianFit) -> Result<f64> {
    let chol_b = b
        .cov
        .cholesky()
        .ok_or_else(|| Error::Numeric("covariance is not positive definite".into()))?;
    let chol_a = a
        .cov
        .cholesky()
        .ok_or_else(|| Error::Numeric("covariance is not positive definite".into()))?;
    let log_det = |l: &Matrix3<f64>| 2.0 * (0..3).map(|i| l[(i, i)].ln()).sum::<f64>();
    let trace = chol_b.solve(&a.cov).trace();
    let dm = b.mean - a.mean;
    let maha = dm.dot(&chol_b.solve(&dm));
    Ok(0.5 * (trace + maha - 3.0 + log_det(&chol_b.l()) - log_det(&chol_a.l())))
}

/// Index-matched features of two consecutive frames, lifted into their own
/// camera frames.
#[derive(Clone, Debug, PartialEq)]
pub struct FramePair {
    /// Frame `i`, camera coordinates.
    pub cloud_a: PointCloud,
    /// Frame `i + 1`, camera coordinates.
    pub cloud_b: PointCloud,
}

impl FramePair {
    /// Builds the pair from optical-axis depths; matches where either
    /// depth is non-positive are dropped.
    pub fn new(
        coords_a: &[Vector2<f64>],
        depths_a: &[f64],
        coords_b: &[Vector2<f64>],
        depths_b: &[f64],
    ) -> Result<Self> {
        let n = coords_a.len();
        if coords_b.len() != n || depths_a.len() != n || depths_b.len() != n {
            return invalid("matched features differ in length");
        }
        let keep: Vec<usize> = (0..n)
            .filter(|&k| depths_a[k] > 0.0 && depths_b[k] > 0.0 && depths_a[k].is_finite() && depths_b[k].is_finite())
            .collect();
        if keep.len() < n {
            debug!("dropped {} matches with non-positive depth", n - keep.len());
        }
        let lift = |coords: &[Vector2<f64>], depths: &[f64]| {
            keep.iter()
                .map(|&k| Vector3::new(coords[k].x, coords[k].y, 1.0) * depths[k])
                .collect::<Vec<_>>()
        };
        Ok(FramePair {
            cloud_a: PointCloud::new(lift(coords_a, depths_a), 0),
            cloud_b: PointCloud::new(lift(coords_b, depths_b), 1),
        })
    }

    pub fn len(&self) -> usize {
        self.cloud_a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cloud_a.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IfLossValue {
    pub pc: f64,
    /// Zero when fewer than four matches support a fit.
    pub kl: f64,
}

impl IfLossValue {
    pub fn total(&self) -> f64 {
        self.pc + self.kl
    }
}

/// Which pose of the pair a gradient is taken with respect to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairSide {
    First,
    Second,
}

fn kl_term(pair: &FramePair, t: &Sim3Pose) -> Result<f64> {
    if pair.len() < MIN_FIT_POINTS {
        return Ok(0.0);
    }
    gaussian_kl(&gaussian_fit(&pair.cloud_b)?, &gaussian_fit(&pair.cloud_a.transformed(t))?)
}

pub fn if_loss(pair: &FramePair, p_i: &Sim3Pose, p_i1: &Sim3Pose) -> Result<IfLossValue> {
    if pair.is_empty() {
        return invalid("inter-frame loss needs at least one match");
    }
    if pair.len() < MIN_FIT_POINTS {
        debug!("only {} matches, skipping the distribution term", pair.len());
    }
    let t = relative_pose(p_i, p_i1);
    Ok(IfLossValue {
        pc: pc_loss(&pair.cloud_b, &pair.cloud_a, &t)?,
        kl: kl_term(pair, &t)?,
    })
}

/// Analytic gradient of the point-cloud term with respect to the
/// left-retraction tangent of the chosen pose.
pub fn grad_pc_loss(pair: &FramePair, p_i: &Sim3Pose, p_i1: &Sim3Pose, side: PairSide) -> Result<Sim3Tangent> {
    if pair.is_empty() {
        return invalid("inter-frame loss needs at least one match");
    }
    let t = relative_pose(p_i, p_i1);
    let back = p_i1.rotation().matrix() / p_i1.scale();
    let n = pair.len() as f64;
    let mut g = Sim3Tangent::zero();
    for (pa, pb) in pair.cloud_a.points.iter().zip(&pair.cloud_b.points) {
        let r = pb - t.apply(pa);
        let gw = back * (-2.0 * r / n);
        let w = p_i.apply(pa);
        g.rho += gw;
        g.phi += w.cross(&gw);
        g.sigma += gw.dot(&w);
    }
    Ok(match side {
        PairSide::First => g,
        PairSide::Second => Sim3Tangent::new(-g.rho, -g.phi, -g.sigma),
    })
}

pub fn grad_if_loss(pair: &FramePair, p_i: &Sim3Pose, p_i1: &Sim3Pose, side: PairSide) -> Result<Sim3Tangent> {
    let pc = grad_pc_loss(pair, p_i, p_i1, side)?;
    if pair.len() < MIN_FIT_POINTS {
        return Ok(pc);
    }
    let mut err = None;
    let kl = fd_gradient(
        |x| {
            let d = Sim3Pose::exp(&Sim3Tangent::from_slice(x));
            let t = match side {
                PairSide::First => relative_pose(&d.compose(p_i), p_i1),
                PairSide::Second => relative_pose(p_i, &d.compose(p_i1)),
            };
            kl_term(pair, &t).unwrap_or_else(|e| {
                err = Some(e);
                f64::NAN
            })
        },
        &[0.0; 7],
        KL_FD_STEP,
    );
    if let Some(e) = err {
        return Err(e);
    }
    let kl = Sim3Tangent::from_slice(&kl?);
    Ok(Sim3Tangent::new(pc.rho + kl.rho, pc.phi + kl.phi, pc.sigma + kl.sigma))
}
