//! Built-in oracle suite: each check compares a library routine against an
//! independent slow reference on random inputs.

use log::info;
use nalgebra::{Matrix3, Matrix4, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use wscloc::features::KdTree;
use wscloc::field::RadianceField;
use wscloc::liegroup::{hat, sim3_exp, sim3_jacobian, sim3_log};
use wscloc::render::{batch_gradient, composite, sample_coarse, gen_rays, plan_batch, trace_batch, GradRequest, RenderConfig};
use wscloc::scene::fixtures::{fixture_camera, five_blob_scene};
use wscloc::scene::look_at;
use wscloc::{Sim3Pose, Sim3Tangent};

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub name: &'static str,
    pub pass: bool,
    pub max_error: f64,
    pub tolerance: f64,
    pub cases: usize,
}

fn suite(name: &'static str, cases: usize, tolerance: f64, errors: impl Iterator<Item = f64>) -> SuiteReport {
    let max_error = errors.fold(0.0_f64, |m, e| if e.is_nan() { f64::INFINITY } else { m.max(e) });
    SuiteReport {
        name,
        pass: max_error <= tolerance,
        max_error,
        tolerance,
        cases,
    }
}

fn random_tangent(rng: &mut ChaCha8Rng, scale: f64) -> Sim3Tangent {
    let mut v = [0.0; 7];
    for x in v.iter_mut() {
        *x = rng.random_range(-scale..scale);
    }
    Sim3Tangent::from_slice(&v)
}

fn matrix_series(xi: &Sim3Tangent) -> Matrix4<f64> {
    let mut a = Matrix4::zeros();
    a.fixed_view_mut::<3, 3>(0, 0).copy_from(&(hat(&xi.phi) + Matrix3::identity() * xi.sigma));
    a.fixed_view_mut::<3, 1>(0, 3).copy_from(&xi.rho);
    let mut term = Matrix4::identity();
    let mut sum = Matrix4::identity();
    for k in 1..40 {
        term = term * a / k as f64;
        sum += term;
    }
    sum
}

fn exp_suite(rng: &mut ChaCha8Rng) -> SuiteReport {
    let n = 200;
    let errs: Vec<f64> = (0..n)
        .map(|_| {
            let xi = random_tangent(rng, 1.0);
            let p = sim3_exp(&xi).expect("finite tangent");
            (p.as_matrix() - matrix_series(&xi)).abs().max()
        })
        .collect();
    suite("sim3_exp_series", n, 1e-10, errs.into_iter())
}

fn roundtrip_suite(rng: &mut ChaCha8Rng) -> SuiteReport {
    let n = 200;
    let errs: Vec<f64> = (0..n)
        .map(|_| {
            let xi = random_tangent(rng, 1.0);
            let p = Sim3Pose::exp(&xi);
            let back = sim3_log(&p).expect("valid pose");
            let a = xi.to_array();
            let b = back.to_array();
            a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
        })
        .collect();
    suite("sim3_exp_log_roundtrip", n, 1e-9, errs.into_iter())
}

/// Composite Simpson rule for `∫₀¹ e^{σu} exp(u·φ^) du`.
fn jacobian_quadrature(phi: &Vector3<f64>, sigma: f64) -> Matrix3<f64> {
    let n = 2000;
    let h = 1.0 / n as f64;
    let f = |u: f64| wscloc::liegroup::so3_exp(&(phi * u)).expect("finite").matrix() * (sigma * u).exp();
    let mut sum = f(0.0) + f(1.0);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        sum += f(k as f64 * h) * w;
    }
    sum * h / 3.0
}

fn jacobian_suite(rng: &mut ChaCha8Rng) -> SuiteReport {
    let n = 60;
    let errs: Vec<f64> = (0..n)
        .map(|k| {
            // every third case sits inside the small-angle/small-scale branch
            let scale = if k % 3 == 0 { 1e-5 } else { 1.5 };
            let phi = Vector3::new(
                rng.random_range(-scale..scale),
                rng.random_range(-scale..scale),
                rng.random_range(-scale..scale),
            );
            let sigma = rng.random_range(-scale..scale);
            (sim3_jacobian(&phi, sigma) - jacobian_quadrature(&phi, sigma)).abs().max()
        })
        .collect();
    suite("sim3_jacobian_quadrature", n, 1e-8, errs.into_iter())
}

/// Midpoint-rule quadrature of the continuous emission-absorption integral.
fn quadrature_color(field: &dyn RadianceField, origin: Vector3<f64>, dir: Vector3<f64>, near: f64, far: f64) -> Vector3<f64> {
    let n = 20_000;
    let dt = (far - near) / n as f64;
    let mut optical = 0.0_f64;
    let mut color = Vector3::zeros();
    for k in 0..n {
        let t = near + (k as f64 + 0.5) * dt;
        let s = field.query(&(origin + dir * t), 0.0);
        let trans = (-optical).exp();
        color += s.color * (trans * (1.0 - (-s.density * dt).exp()));
        optical += s.density * dt;
    }
    color
}

fn orbit_pose(rng: &mut ChaCha8Rng) -> Sim3Pose {
    let az: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let el: f64 = rng.random_range(-0.4..0.4);
    let eye = Vector3::new(az.cos() * el.cos(), az.sin() * el.cos(), el.sin()) * 4.0;
    look_at(eye, Vector3::zeros())
}

/// Uniform samples per ray. On an even grid the discrete rule is the
/// midpoint rule over the bins, so the error falls off quadratically.
const ORACLE_SAMPLES: usize = 256;

fn renderer_suite(rng: &mut ChaCha8Rng) -> SuiteReport {
    let field = five_blob_scene();
    let camera = fixture_camera();
    let n = 200;
    let errs: Vec<f64> = (0..n)
        .map(|_| {
            let pose = orbit_pose(rng);
            let px = (rng.random_range(16..48), rng.random_range(16..48));
            let ray = gen_rays(&camera, &pose, &[px]).expect("pixel in frame")[0];
            let depths = sample_coarse(&ray, ORACLE_SAMPLES, false, rng);
            let (densities, colors): (Vec<f64>, Vec<Vector3<f64>>) = depths
                .iter()
                .map(|z| {
                    let s = field.query(&ray.at(*z), 0.0);
                    (s.density, s.color)
                })
                .unzip();
            let out = composite(&depths, &densities, &colors, ray.t_far).expect("non-negative densities");
            let reference = quadrature_color(&field, ray.origin, ray.direction, ray.t_near, ray.t_far);
            (out.rgb - reference).abs().max()
        })
        .collect();
    suite("renderer_quadrature", n, 1e-3, errs.into_iter())
}

fn pose_gradient_suite(rng: &mut ChaCha8Rng) -> SuiteReport {
    let field = five_blob_scene();
    let camera = fixture_camera();
    let cfg = RenderConfig::default();
    let bg = cfg.background();
    let n = 8;
    let h = 1e-5;
    let errs: Vec<f64> = (0..n)
        .map(|k| {
            let pose = orbit_pose(rng);
            let pixels: Vec<(usize, usize)> = (0..6).map(|_| (rng.random_range(20..44), rng.random_range(20..44))).collect();
            let target: Vec<Vector3<f64>> = pixels
                .iter()
                .map(|_| Vector3::new(rng.random(), rng.random(), rng.random()))
                .collect();
            let depths = plan_batch(&field, &camera, &pose, 0.0, &pixels, &cfg, k as u64).expect("valid batch");
            let want = GradRequest { pose: true, field: false };
            let g = batch_gradient(&field, &camera, &pose, 0.0, &pixels, &depths, &target, &bg, want)
                .expect("valid batch")
                .pose
                .to_array();
            let loss_at = |p: &Sim3Pose| {
                let traces = trace_batch(&field, &camera, p, 0.0, &pixels, &depths, &bg).expect("valid batch");
                let rendered: Vec<Vector3<f64>> = traces.iter().map(|t| t.rgb).collect();
                wscloc::render::photometric_loss(&rendered, &target).expect("same length")
            };
            let mut worst = 0.0_f64;
            let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            for c in 0..7 {
                let mut d = [0.0; 7];
                d[c] = h;
                let plus = loss_at(&pose.retract(&Sim3Tangent::from_slice(&d)));
                d[c] = -h;
                let minus = loss_at(&pose.retract(&Sim3Tangent::from_slice(&d)));
                let fd = (plus - minus) / (2.0 * h);
                worst = worst.max((fd - g[c]).abs() / norm);
            }
            worst
        })
        .collect();
    suite("pose_gradient_fd", n, 1e-4, errs.into_iter())
}

fn kdtree_suite(rng: &mut ChaCha8Rng) -> SuiteReport {
    let dim = 81;
    let points: Vec<Vec<f64>> = (0..400).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect()).collect();
    let tree = KdTree::build(points.clone()).expect("non-empty point set");
    let n = 500;
    let mismatches = (0..n)
        .filter(|_| {
            let q: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
            let mut brute: Vec<(f64, usize)> = points
                .iter()
                .enumerate()
                .map(|(i, p)| (p.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
                .collect();
            brute.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let expect: Vec<(usize, f64)> = brute[..2].iter().map(|&(d2, i)| (i, d2.sqrt())).collect();
            tree.nearest(&q, 2).expect("query has tree dimension") != expect
        })
        .count();
    suite("kdtree_brute_force", n, 0.0, std::iter::once(mismatches as f64))
}

/// Runs every suite; returns the reports in a fixed order.
pub fn run_all(seed: u64) -> Vec<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let suites = [
        exp_suite as fn(&mut ChaCha8Rng) -> SuiteReport,
        roundtrip_suite,
        jacobian_suite,
        renderer_suite,
        pose_gradient_suite,
        kdtree_suite,
    ];
    suites
        .iter()
        .map(|f| {
            let r = f(&mut rng);
            info!(
                "{:<26} {} max error {:.3e} (tolerance {:.0e}, {} cases)",
                r.name,
                if r.pass { "PASS" } else { "FAIL" },
                r.max_error,
                r.tolerance,
                r.cases
            );
            r
        })
        .collect()
}
