use nalgebra::{Matrix3, Vector3};
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{invalid, Result};
use crate::io::format_tum;
use crate::liegroup::{so3_log, Rotation, Sim3Pose};

/// Least-squares similarity `A` minimizing `Σ ‖gt_k − A·est_k‖²`.
pub fn umeyama_align(est: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<Sim3Pose> {
    if est.len() != gt.len() {
        return invalid("alignment needs equally many points on both sides");
    }
    let n = est.len();
    if n < 3 {
        return invalid("alignment needs at least 3 point pairs");
    }
    let nf = n as f64;
    let mu_e = est.iter().sum::<Vector3<f64>>() / nf;
    let mu_g = gt.iter().sum::<Vector3<f64>>() / nf;
    let var_e = est.iter().map(|e| (e - mu_e).norm_squared()).sum::<f64>() / nf;
    let mut sigma = Matrix3::zeros();
    for (e, g) in est.iter().zip(gt) {
        sigma += (g - mu_g) * (e - mu_e).transpose();
    }
    sigma /= nf;
    let svd = sigma.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested U"), svd.v_t.expect("requested Vᵀ"));
    let mut d = svd.singular_values;
    // sort-independent rank check on the two largest values
    let mut sorted = [d[0], d[1], d[2]];
    sorted.sort_by(|a, b| b.total_cmp(a));
    if var_e < 1e-24 || sorted[1] <= 1e-12 * sorted[0].max(1e-300) {
        return invalid("alignment points are degenerate (collinear or coincident)");
    }
    let mut s = Matrix3::identity();
    if (u.determinant() * v_t.determinant()) < 0.0 {
        // flip the direction of the smallest singular value
        let k = (0..3).min_by(|&a, &b| d[a].total_cmp(&d[b])).expect("three values");
        s[(k, k)] = -1.0;
        d[k] = -d[k];
    }
    let r = u * s * v_t;
    let scale = d.sum() / var_e;
    let t = mu_g - r * mu_e * scale;
    Sim3Pose::new(Rotation::from_matrix(r)?, t, scale)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FrameError {
    /// Meters.
    pub translation: f64,
    /// Degrees.
    pub rotation: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub median_translation_error: f64,
    pub median_rotation_error: f64,
    pub per_frame_errors: Vec<FrameError>,
    pub alignment: Sim3Pose,
}

impl EvalReport {
    pub fn to_json(&self) -> Value {
        json!({
            "median_translation_error": self.median_translation_error,
            "median_rotation_error": self.median_rotation_error,
            "per_frame_errors": self.per_frame_errors,
            "alignment": format_tum(0.0, &self.alignment),
        })
    }
}

/// Element `(n − 1)/2` of the sorted values.
pub fn lower_median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v[(v.len() - 1) / 2]
}

pub fn rotation_error_deg(a: &Rotation, b: &Rotation) -> f64 {
    let rel = a.inverse().compose(b);
    so3_log(rel.matrix()).map(|v| v.norm()).unwrap_or(std::f64::consts::PI).to_degrees()
}

/// Per-frame translation and rotation errors, optionally after aligning the
/// estimated translations onto the ground truth.
pub fn evaluate(est: &[Sim3Pose], gt: &[Sim3Pose], align: bool) -> Result<EvalReport> {
    if est.len() != gt.len() {
        return invalid(format!("{} estimated poses vs {} ground-truth poses", est.len(), gt.len()));
    }
    if est.is_empty() {
        return invalid("nothing to evaluate");
    }
    let alignment = if align {
        let e: Vec<_> = est.iter().map(|p| *p.translation()).collect();
        let g: Vec<_> = gt.iter().map(|p| *p.translation()).collect();
        umeyama_align(&e, &g)?
    } else {
        Sim3Pose::identity()
    };
    evaluate_with(est, gt, &alignment)
}

/// Errors after applying a given alignment to every estimate.
pub fn evaluate_with(est: &[Sim3Pose], gt: &[Sim3Pose], alignment: &Sim3Pose) -> Result<EvalReport> {
    if est.len() != gt.len() || est.is_empty() {
        return invalid("evaluation needs equally many, non-zero poses");
    }
    let per_frame_errors: Vec<FrameError> = est
        .iter()
        .zip(gt)
        .map(|(e, g)| {
            let e = alignment.compose(e);
            FrameError {
                translation: (e.translation() - g.translation()).norm(),
                rotation: rotation_error_deg(e.rotation(), g.rotation()),
            }
        })
        .collect();
    let t: Vec<f64> = per_frame_errors.iter().map(|e| e.translation).collect();
    let r: Vec<f64> = per_frame_errors.iter().map(|e| e.rotation).collect();
    Ok(EvalReport {
        median_translation_error: lower_median(&t),
        median_rotation_error: lower_median(&r),
        per_frame_errors,
        alignment: *alignment,
    })
}
