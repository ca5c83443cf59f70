//! Similarity-group machinery: SO(3) and Sim(3) exponential/logarithm maps,
//! the closed-form translational Jacobian, and the group operations used by
//! every optimizer in the crate.
//!
//! Tangent vectors are ordered `[rho, phi, sigma]`: a translational
//! coordinate, an axis-angle rotation and a log-scale. Poses act on points
//! as `x -> s R x + t`.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{Matrix3, Matrix4, Vector3};

use crate::error::{invalid, Error, Result};

/// Below this magnitude θ and σ switch to series expansions.
pub const SERIES_THRESHOLD: f64 = 1e-4;

/// Distance from π below which the rotation axis is read off the symmetric part.
const NEAR_PI: f64 = 1e-6;

const ORTHONORMAL_TOL: f64 = 1e-9;

pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// A proper orthonormal 3×3 matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Validates `R Rᵀ = I` and `det R = 1` to within 1e-9.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        if !all_finite(m.as_slice()) {
            return invalid("rotation matrix has non-finite entries");
        }
        let ortho = (m * m.transpose() - Matrix3::identity()).norm();
        let det = m.determinant();
        if ortho > ORTHONORMAL_TOL || (det - 1.0).abs() > ORTHONORMAL_TOL {
            return invalid(format!(
                "matrix is not a rotation (|RRᵀ-I|={ortho:.3e}, det={det:.12})"
            ));
        }
        Ok(Rotation(m))
    }

    pub(crate) fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(m)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Rodrigues' formula.
    pub fn exp(phi: &Vector3<f64>) -> Self {
        let theta2 = phi.norm_squared();
        let theta = theta2.sqrt();
        let (a, b) = if theta < SERIES_THRESHOLD {
            (
                1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0,
                0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0,
            )
        } else {
            (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
        };
        let k = hat(phi);
        Rotation(Matrix3::identity() + k * a + k * k * b)
    }

    /// Axis-angle vector with angle in `[0, π]`.
    pub fn log(&self) -> Vector3<f64> {
        let r = &self.0;
        let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        let sin_axis = vee(&(r - r.transpose())) * 0.5;
        let sin_theta = sin_axis.norm();
        let theta = sin_theta.atan2(cos_theta);

        if theta < SERIES_THRESHOLD {
            let t2 = theta * theta;
            return sin_axis * (1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0);
        }
        if PI - theta < NEAR_PI {
            // (R + Rᵀ)/2 = cosθ I + (1 - cosθ) a aᵀ
            let sym = (r + r.transpose()) * 0.5;
            let outer = (sym - Matrix3::identity() * cos_theta) / (1.0 - cos_theta);
            let mut best = 0;
            for i in 1..3 {
                if outer[(i, i)] > outer[(best, best)] {
                    best = i;
                }
            }
            let mut axis: Vector3<f64> = outer.column(best).into();
            axis /= outer[(best, best)].max(0.0).sqrt();
            axis.normalize_mut();
            if axis.dot(&sin_axis) < 0.0 {
                axis = -axis;
            }
            return axis * theta;
        }
        sin_axis * (theta / sin_theta)
    }

    pub fn angle(&self) -> f64 {
        self.log().norm()
    }

    pub fn compose(&self, other: &Rotation) -> Rotation {
        Rotation(self.0 * other.0)
    }

    pub fn inverse(&self) -> Rotation {
        Rotation(self.0.transpose())
    }

    pub fn rotate(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.0 * p
    }
}

/// `so3_exp` with input validation.
pub fn so3_exp(phi: &Vector3<f64>) -> Result<Rotation> {
    if !all_finite(phi.as_slice()) {
        return invalid("so3_exp: non-finite tangent");
    }
    Ok(Rotation::exp(phi))
}

/// `so3_log` of an arbitrary matrix; rejects non-rotations.
pub fn so3_log(m: &Matrix3<f64>) -> Result<Vector3<f64>> {
    Ok(Rotation::from_matrix(*m)?.log())
}

/// Tangent of Sim(3): translational part `rho`, rotation `phi`, log-scale `sigma`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Sim3Tangent {
    pub rho: Vector3<f64>,
    pub phi: Vector3<f64>,
    pub sigma: f64,
}

impl Sim3Tangent {
    pub const DIM: usize = 7;

    pub fn new(rho: Vector3<f64>, phi: Vector3<f64>, sigma: f64) -> Self {
        Sim3Tangent { rho, phi, sigma }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_slice(v: &[f64]) -> Self {
        assert_eq!(v.len(), Self::DIM, "sim(3) tangent needs 7 components");
        Sim3Tangent {
            rho: Vector3::new(v[0], v[1], v[2]),
            phi: Vector3::new(v[3], v[4], v[5]),
            sigma: v[6],
        }
    }

    pub fn to_array(&self) -> [f64; 7] {
        [
            self.rho.x, self.rho.y, self.rho.z, self.phi.x, self.phi.y, self.phi.z, self.sigma,
        ]
    }

    pub fn is_finite(&self) -> bool {
        all_finite(&self.to_array())
    }

    /// Rotation magnitude θ = ‖φ‖.
    pub fn theta(&self) -> f64 {
        self.phi.norm()
    }

    /// Unit rotation axis; `None` for a zero rotation.
    pub fn axis(&self) -> Option<Vector3<f64>> {
        let theta = self.theta();
        (theta > 0.0).then(|| self.phi / theta)
    }

    pub fn norm(&self) -> f64 {
        self.to_array().iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Below this rotation angle the Jacobian coefficients are summed as power
/// series in θ² instead of the closed form, which cancels badly near zero.
pub const JACOBIAN_SERIES_THRESHOLD: f64 = 0.5;

const SERIES_TERMS: usize = 10;
const MOMENTS: usize = 2 * SERIES_TERMS + 3;

/// `∫₀¹ e^{σu} u^k du` for k = 0..MOMENTS.
fn scale_moments(sigma: f64) -> [f64; MOMENTS] {
    let mut m = [0.0; MOMENTS];
    if sigma.abs() < 1.0 {
        for (k, mk) in m.iter_mut().enumerate() {
            let mut term = 1.0; // σⁿ/n!
            let mut sum = 0.0;
            for n in 0..80 {
                let contrib = term / (n + k + 1) as f64;
                sum += contrib;
                if contrib.abs() < 1e-18 * sum.abs() {
                    break;
                }
                term *= sigma / (n + 1) as f64;
            }
            *mk = sum;
        }
    } else {
        // downward recurrence M_{k-1} = (e^σ - σ M_k)/k damps the error of
        // the crude start value
        let e = sigma.exp();
        let top = MOMENTS + 60;
        let mut mk = e / (top as f64 + 1.0 + sigma.max(0.0));
        for k in (1..=top).rev() {
            if k < MOMENTS {
                m[k] = mk;
            }
            mk = (e - sigma * mk) / k as f64;
        }
        m[0] = sigma.exp_m1() / sigma;
    }
    m
}

/// Closed-form `J_s = ∫₀¹ e^{σu} exp(u φ^) du`, the matrix mapping `rho`
/// to the translation of `exp([rho, phi, sigma])`.
///
/// Written as `A I + C₁ φ^ + C₂ φ^φ^` with
/// `A = (e^σ - 1)/σ`,
/// `C₁ = (σ e^σ sinθ + (1 - e^σ cosθ) θ) / (θ (σ² + θ²))` and
/// `C₂ = (A - ((e^σ cosθ - 1) σ + e^σ sinθ θ)/(σ² + θ²)) / θ²`.
/// Every coefficient has a removable singularity at θ = 0 or σ = 0; below
/// [`JACOBIAN_SERIES_THRESHOLD`] they are summed from the moments
/// `M_k = ∫₀¹ e^{σu} u^k du` instead.
pub fn sim3_jacobian(phi: &Vector3<f64>, sigma: f64) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let m = scale_moments(sigma);
    let a = m[0];
    let (c1, c2) = if theta < JACOBIAN_SERIES_THRESHOLD {
        // sin(θu)/θ = Σ (-θ²)ʲ u^{2j+1}/(2j+1)!,
        // (1 - cos θu)/θ² = Σ (-θ²)ʲ u^{2j+2}/(2j+2)!
        let (mut c1, mut c2) = (0.0, 0.0);
        let mut pow = 1.0;
        let mut fact = 1.0; // (2j+1)!
        for j in 0..SERIES_TERMS {
            c1 += pow * m[2 * j + 1] / fact;
            c2 += pow * m[2 * j + 2] / (fact * (2 * j + 2) as f64);
            pow *= -theta2;
            fact *= ((2 * j + 2) * (2 * j + 3)) as f64;
        }
        (c1, c2)
    } else {
        let es = sigma.exp();
        let (s, c) = theta.sin_cos();
        let denom = sigma * sigma + theta2;
        let int_sin = (es * (sigma * s - theta * c) + theta) / denom;
        let int_cos = (es * (sigma * c + theta * s) - sigma) / denom;
        (int_sin / theta, (a - int_cos) / theta2)
    };
    let k = hat(phi);
    Matrix3::identity() * a + k * c1 + k * k * c2
}

/// A similarity transform `x -> s R x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sim3Pose {
    rotation: Rotation,
    translation: Vector3<f64>,
    scale: f64,
}

impl Sim3Pose {
    pub fn identity() -> Self {
        Sim3Pose {
            rotation: Rotation::identity(),
            translation: Vector3::zeros(),
            scale: 1.0,
        }
    }

    pub fn new(rotation: Rotation, translation: Vector3<f64>, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return invalid(format!("pose scale must be positive and finite, got {scale}"));
        }
        if !all_finite(translation.as_slice()) {
            return invalid("pose translation is not finite");
        }
        Ok(Sim3Pose {
            rotation,
            translation,
            scale,
        })
    }

    pub(crate) fn from_parts(rotation: Rotation, translation: Vector3<f64>, scale: f64) -> Self {
        Sim3Pose {
            rotation,
            translation,
            scale,
        }
    }

    /// A rigid pose (scale 1).
    pub fn rigid(rotation: Rotation, translation: Vector3<f64>) -> Self {
        Self::from_parts(rotation, translation, 1.0)
    }

    /// Reads the `[[sR, t], [0, 1]]` block form.
    pub fn from_matrix(m: &Matrix4<f64>) -> Result<Self> {
        let sr: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into();
        let det = sr.determinant();
        if !(det > 0.0) {
            return invalid("similarity block must have positive determinant");
        }
        let scale = det.cbrt();
        let rotation = Rotation::from_matrix(sr / scale)?;
        let bottom = m.fixed_view::<1, 4>(3, 0);
        if (bottom - nalgebra::RowVector4::new(0.0, 0.0, 0.0, 1.0)).norm() > 1e-12 {
            return invalid("bottom row of a similarity matrix must be [0 0 0 1]");
        }
        Sim3Pose::new(rotation, m.fixed_view::<3, 1>(0, 3).into(), scale)
    }

    pub fn rotation(&self) -> &Rotation {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn as_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(self.rotation.0 * self.scale));
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// `s = e^σ`, `R = exp(φ^)`, `t = J_s ρ`.
    pub fn exp(xi: &Sim3Tangent) -> Self {
        Sim3Pose {
            rotation: Rotation::exp(&xi.phi),
            translation: sim3_jacobian(&xi.phi, xi.sigma) * xi.rho,
            scale: xi.sigma.exp(),
        }
    }

    /// # Panics
    /// If `J_s` is singular, which cannot happen for a valid pose.
    pub fn log(&self) -> Sim3Tangent {
        let sigma = self.scale.ln();
        let phi = self.rotation.log();
        let jac = sim3_jacobian(&phi, sigma);
        let rho = jac
            .lu()
            .solve(&self.translation)
            .expect("sim(3) Jacobian is singular");
        Sim3Tangent { rho, phi, sigma }
    }

    pub fn compose(&self, other: &Sim3Pose) -> Sim3Pose {
        Sim3Pose {
            rotation: self.rotation.compose(&other.rotation),
            translation: self.rotation.0 * other.translation * self.scale + self.translation,
            scale: self.scale * other.scale,
        }
    }

    pub fn inverse(&self) -> Sim3Pose {
        let rt = self.rotation.inverse();
        let inv_s = 1.0 / self.scale;
        Sim3Pose {
            rotation: rt,
            translation: -(rt.0 * self.translation) * inv_s,
            scale: inv_s,
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.0 * p * self.scale + self.translation
    }

    /// Left-multiplicative update `exp(delta) · self`.
    pub fn retract(&self, delta: &Sim3Tangent) -> Sim3Pose {
        Sim3Pose::exp(delta).compose(self)
    }
}

impl Default for Sim3Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl fmt::Display for Sim3Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = &self.translation;
        let phi = self.rotation.log();
        write!(
            f,
            "Sim3(t=[{:.6}, {:.6}, {:.6}], phi=[{:.6}, {:.6}, {:.6}], s={:.6})",
            t.x, t.y, t.z, phi.x, phi.y, phi.z, self.scale
        )
    }
}

/// `sim3_exp` with input validation.
pub fn sim3_exp(xi: &Sim3Tangent) -> Result<Sim3Pose> {
    if !xi.is_finite() {
        return invalid("sim3_exp: non-finite tangent");
    }
    Ok(Sim3Pose::exp(xi))
}

/// `sim3_log`; fails if the Jacobian cannot be inverted.
pub fn sim3_log(pose: &Sim3Pose) -> Result<Sim3Tangent> {
    let sigma = pose.scale.ln();
    let phi = pose.rotation.log();
    let rho = sim3_jacobian(&phi, sigma)
        .lu()
        .solve(&pose.translation)
        .ok_or_else(|| Error::Numeric("sim(3) Jacobian is singular".into()))?;
    Ok(Sim3Tangent { rho, phi, sigma })
}

/// Interpolates between two poses: geodesic on rotation, linear on
/// translation, geometric on scale. `f = 0` gives `a`.
pub fn interpolate(a: &Sim3Pose, b: &Sim3Pose, f: f64) -> Sim3Pose {
    let rel = a.rotation.inverse().compose(&b.rotation).log();
    Sim3Pose {
        rotation: a.rotation.compose(&Rotation::exp(&(rel * f))),
        translation: a.translation + (b.translation - a.translation) * f,
        scale: a.scale * (b.scale / a.scale).powf(f),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, scale: f64) -> Vector3<f64> {
        Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ) * scale
    }

    #[test]
    fn so3_exp_zero_and_quarter_turn() {
        assert_eq!(*Rotation::exp(&Vector3::zeros()).matrix(), Matrix3::identity());
        let r = Rotation::exp(&Vector3::new(0.0, 0.0, PI / 2.0));
        let expect = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!((r.matrix() - expect).norm() < 1e-15);
    }

    #[test]
    fn so3_exp_rejects_nan() {
        assert!(so3_exp(&Vector3::new(f64::NAN, 0.0, 0.0)).is_err());
    }

    #[test]
    fn so3_log_identity_and_half_turn() {
        assert_eq!(Rotation::identity().log(), Vector3::zeros());
        let r = Rotation::from_matrix(Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0))
            .unwrap();
        let phi = r.log();
        assert!((phi - Vector3::new(PI, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn so3_log_near_pi_keeps_axis_sign() {
        let axis = Vector3::new(0.3, -0.5, 0.8).normalize();
        for eps in [0.0, 1e-9, 5e-7, 2e-6] {
            let phi = axis * (PI - eps);
            let back = Rotation::exp(&phi).log();
            let err = if eps == 0.0 {
                (back - phi).norm().min((back + phi).norm())
            } else {
                (back - phi).norm()
            };
            assert!(err < 1e-7, "eps={eps} err={err}");
        }
    }

    #[test]
    fn so3_log_rejects_non_rotation() {
        let m = Matrix3::identity() * 1.1;
        assert!(matches!(so3_log(&m), Err(Error::InvalidArgument(_))));
        let reflect = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(so3_log(&reflect).is_err());
    }

    #[test]
    fn so3_roundtrip_small_and_large() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for i in 0..500 {
            let mag = if i % 5 == 0 { 1e-6 } else { PI - 0.1 };
            let v = rand_vec(&mut rng, 1.0).normalize() * rng.random_range(0.0..mag);
            let back = Rotation::exp(&v).log();
            assert!((back - v).norm() < 1e-9);
        }
    }

    #[test]
    fn jacobian_limits() {
        assert!((sim3_jacobian(&Vector3::zeros(), 0.0) - Matrix3::identity()).norm() < 1e-15);
        let ln2 = 2f64.ln();
        let j = sim3_jacobian(&Vector3::zeros(), ln2);
        assert!((j - Matrix3::identity() / ln2).norm() < 1e-14);
    }

    #[test]
    fn jacobian_continuous_across_series_branch() {
        let axis = Vector3::new(0.2, 0.7, -0.4).normalize();
        for sigma in [-0.7, 0.0, 1e-5, 0.3, 1.5] {
            let below = sim3_jacobian(&(axis * (JACOBIAN_SERIES_THRESHOLD * (1.0 - 1e-14))), sigma);
            let above = sim3_jacobian(&(axis * (JACOBIAN_SERIES_THRESHOLD * (1.0 + 1e-14))), sigma);
            assert!((below - above).norm() < 1e-12, "sigma={sigma}");
        }
        // moment evaluation switches method at |σ| = 1
        for phi in [axis * 1e-5, axis * 0.8] {
            for s in [1.0, -1.0] {
                let lo = sim3_jacobian(&phi, s * (1.0 - 1e-12));
                let hi = sim3_jacobian(&phi, s * (1.0 + 1e-12));
                assert!((lo - hi).norm() < 1e-11);
            }
        }
    }

    #[test]
    fn sim3_exp_pure_scale() {
        let ln2 = 2f64.ln();
        let p = Sim3Pose::exp(&Sim3Tangent::new(Vector3::zeros(), Vector3::zeros(), ln2));
        assert!((p.scale() - 2.0).abs() < 1e-15);
        assert_eq!(*p.translation(), Vector3::zeros());
        assert_eq!(Sim3Pose::exp(&Sim3Tangent::zero()), Sim3Pose::identity());
    }

    #[test]
    fn sim3_log_identity_and_scale() {
        let t = Sim3Pose::identity().log();
        assert_eq!(t, Sim3Tangent::zero());
        let p = Sim3Pose::new(Rotation::identity(), Vector3::zeros(), 2.0).unwrap();
        let t = p.log();
        assert!((t.sigma - 2f64.ln()).abs() < 1e-15);
        assert_eq!(t.rho, Vector3::zeros());
        assert_eq!(t.phi, Vector3::zeros());
    }

    #[test]
    fn apply_hand_example() {
        let p = Sim3Pose::new(Rotation::identity(), Vector3::new(1.0, 0.0, 0.0), 2.0).unwrap();
        assert_eq!(p.apply(&Vector3::new(1.0, 1.0, 1.0)), Vector3::new(3.0, 2.0, 2.0));
    }

    #[test]
    fn compose_and_inverse_laws() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let xi = Sim3Tangent::new(
                rand_vec(&mut rng, 2.0),
                rand_vec(&mut rng, 1.5),
                rng.random_range(-1.0..1.0),
            );
            let t = Sim3Pose::exp(&xi);
            let id = t.compose(&t.inverse());
            assert!((id.as_matrix() - Matrix4::identity()).norm() < 1e-10);
            assert_eq!(t.compose(&Sim3Pose::identity()), t);
            let back = t.inverse().inverse();
            assert!((back.as_matrix() - t.as_matrix()).norm() < 1e-12);
        }
    }

    #[test]
    fn retract_pure_scale_and_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t0 = Sim3Pose::exp(&Sim3Tangent::new(
            rand_vec(&mut rng, 1.0),
            rand_vec(&mut rng, 1.0),
            0.2,
        ));
        assert_eq!(t0.retract(&Sim3Tangent::zero()), t0);
        let scaled = Sim3Pose::identity().retract(&Sim3Tangent::new(
            Vector3::zeros(),
            Vector3::zeros(),
            2f64.ln(),
        ));
        assert!((scaled.scale() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn from_matrix_roundtrip() {
        let p = Sim3Pose::exp(&Sim3Tangent::new(
            Vector3::new(0.3, -1.0, 2.0),
            Vector3::new(0.4, 0.1, -0.3),
            0.4,
        ));
        let q = Sim3Pose::from_matrix(&p.as_matrix()).unwrap();
        assert!((q.as_matrix() - p.as_matrix()).norm() < 1e-12);
    }

    #[test]
    fn interpolate_endpoints() {
        let a = Sim3Pose::exp(&Sim3Tangent::new(
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 0.2, 0.0),
            0.1,
        ));
        let b = Sim3Pose::exp(&Sim3Tangent::new(
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(0.3, 0.0, 0.0),
            -0.1,
        ));
        assert!((interpolate(&a, &b, 0.0).as_matrix() - a.as_matrix()).norm() < 1e-14);
        assert!((interpolate(&a, &b, 1.0).as_matrix() - b.as_matrix()).norm() < 1e-12);
    }
}
