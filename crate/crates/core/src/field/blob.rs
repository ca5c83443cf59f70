use std::io::{Read, Write};

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{FieldInit, FieldSample, RadianceField};
use crate::error::{invalid, Error, Result};
use crate::optim::{Activation, DenseNet, Layer};

pub(super) const NAME: &str = "blob";

/// Parameters per blob in the flat vector:
/// `center0 (3), velocity (3), ln sigma, ln amplitude, color (3)`.
pub const BLOB_PARAMS: usize = 11;

const EMPTY_DENSITY: f64 = 1e-12;

/// An isotropic Gaussian emitter moving linearly with the time code.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub center0: Vector3<f64>,
    #[serde(default = "Vector3::zeros")]
    pub velocity: Vector3<f64>,
    pub sigma_spatial: f64,
    pub amplitude: f64,
    pub color: Vector3<f64>,
}

impl Blob {
    pub fn center_at(&self, t: f64) -> Vector3<f64> {
        self.center0 + self.velocity * t
    }

    fn validate(&self) -> Result<()> {
        let finite = self
            .center0
            .iter()
            .chain(self.velocity.iter())
            .chain(self.color.iter())
            .all(|v| v.is_finite());
        if !finite || !(self.sigma_spatial > 0.0) || !(self.amplitude > 0.0) {
            return invalid("blob needs finite vectors and positive sigma/amplitude");
        }
        if self.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return invalid("blob color components must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Analytic mixture of Gaussian blobs. Density is
/// `Σ a·exp(-‖x - c(t)‖² / 2σ²)`; color is the density-weighted mean of
/// blob colors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobField {
    pub blobs: Vec<Blob>,
}

impl BlobField {
    pub fn new(blobs: Vec<Blob>) -> Result<Self> {
        for b in &blobs {
            b.validate()?;
        }
        Ok(BlobField { blobs })
    }

    fn mean_color(&self) -> Vector3<f64> {
        if self.blobs.is_empty() {
            return Vector3::zeros();
        }
        self.blobs.iter().map(|b| b.color).sum::<Vector3<f64>>() / self.blobs.len() as f64
    }

    /// Per-blob density contributions and offsets `x - c(t)`.
    fn contributions(&self, x: &Vector3<f64>, t: f64) -> impl Iterator<Item = (f64, Vector3<f64>)> + '_ {
        let x = *x;
        self.blobs.iter().map(move |b| {
            let d = x - b.center_at(t);
            let s2 = b.sigma_spatial * b.sigma_spatial;
            (b.amplitude * (-d.norm_squared() / (2.0 * s2)).exp(), d)
        })
    }

    /// Returns the field with velocities zeroed.
    pub fn frozen_in_time(&self) -> BlobField {
        let mut out = self.clone();
        for b in &mut out.blobs {
            b.velocity = Vector3::zeros();
        }
        out
    }

    pub fn to_checkpoint_net(&self) -> Result<DenseNet> {
        let mut layer = Layer::zeros(BLOB_PARAMS, self.blobs.len(), Activation::Identity);
        layer.weights = self.params();
        DenseNet::from_layers(vec![layer])
    }

    pub fn from_checkpoint_net(net: &DenseNet) -> Result<BlobField> {
        let layers = net.layers();
        if layers.len() != 1 || layers[0].inputs != BLOB_PARAMS {
            return invalid("checkpoint does not hold a blob field");
        }
        let mut field = BlobField {
            blobs: vec![placeholder_blob(); layers[0].outputs],
        };
        field.set_params(&layers[0].weights)?;
        Ok(field)
    }
}

fn placeholder_blob() -> Blob {
    Blob {
        center0: Vector3::zeros(),
        velocity: Vector3::zeros(),
        sigma_spatial: 1.0,
        amplitude: 1.0,
        color: Vector3::zeros(),
    }
}

impl RadianceField for BlobField {
    fn backend(&self) -> &'static str {
        NAME
    }

    fn query(&self, x: &Vector3<f64>, t: f64) -> FieldSample {
        let mut density = 0.0;
        let mut weighted = Vector3::zeros();
        for ((rho, _), b) in self.contributions(x, t).zip(&self.blobs) {
            density += rho;
            weighted += b.color * rho;
        }
        let color = if density < EMPTY_DENSITY {
            self.mean_color()
        } else {
            weighted / density
        };
        FieldSample { density, color }
    }

    fn vjp_position(
        &self,
        x: &Vector3<f64>,
        t: f64,
        d_density: f64,
        d_color: &Vector3<f64>,
    ) -> Vector3<f64> {
        let sample = self.query(x, t);
        let color_active = sample.density >= EMPTY_DENSITY;
        let mut grad = Vector3::zeros();
        for ((rho, d), b) in self.contributions(x, t).zip(&self.blobs) {
            // ∂ρ/∂x = -ρ (x - c) / σ²
            let drho_dx = d * (-rho / (b.sigma_spatial * b.sigma_spatial));
            let mut coeff = d_density;
            if color_active {
                coeff += d_color.dot(&(b.color - sample.color)) / sample.density;
            }
            grad += drho_dx * coeff;
        }
        grad
    }

    fn vjp_params(
        &self,
        x: &Vector3<f64>,
        t: f64,
        d_density: f64,
        d_color: &Vector3<f64>,
        grads: &mut [f64],
    ) {
        let sample = self.query(x, t);
        let color_active = sample.density >= EMPTY_DENSITY;
        for (i, ((rho, d), b)) in self.contributions(x, t).zip(&self.blobs).enumerate() {
            let g = &mut grads[i * BLOB_PARAMS..(i + 1) * BLOB_PARAMS];
            let s2 = b.sigma_spatial * b.sigma_spatial;
            let mut coeff = d_density;
            if color_active {
                coeff += d_color.dot(&(b.color - sample.color)) / sample.density;
                let w = rho / sample.density;
                g[8] += d_color.x * w;
                g[9] += d_color.y * w;
                g[10] += d_color.z * w;
            }
            // ∂ρ/∂c0 = ρ (x - c)/σ², ∂ρ/∂v = t ∂ρ/∂c0
            let dc = d * (rho / s2 * coeff);
            for k in 0..3 {
                g[k] += dc[k];
                g[3 + k] += dc[k] * t;
            }
            g[6] += coeff * rho * d.norm_squared() / s2;
            g[7] += coeff * rho;
        }
    }

    fn num_params(&self) -> usize {
        self.blobs.len() * BLOB_PARAMS
    }

    fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for b in &self.blobs {
            out.extend(b.center0.iter());
            out.extend(b.velocity.iter());
            out.push(b.sigma_spatial.ln());
            out.push(b.amplitude.ln());
            out.extend(b.color.iter());
        }
        out
    }

    /// Colors are projected onto `[0, 1]`.
    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return invalid(format!(
                "blob field expects {} parameters, got {}",
                self.num_params(),
                params.len()
            ));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric("non-finite blob parameter".into()));
        }
        for (b, p) in self.blobs.iter_mut().zip(params.chunks_exact(BLOB_PARAMS)) {
            b.center0 = Vector3::new(p[0], p[1], p[2]);
            b.velocity = Vector3::new(p[3], p[4], p[5]);
            b.sigma_spatial = p[6].exp();
            b.amplitude = p[7].exp();
            b.color = Vector3::new(p[8], p[9], p[10]).map(|c| c.clamp(0.0, 1.0));
        }
        Ok(())
    }

    fn clone_box(&self) -> Box<dyn RadianceField> {
        Box::new(self.clone())
    }

    fn write_checkpoint(&self, w: &mut dyn Write) -> Result<()> {
        self.to_checkpoint_net()?.write_checkpoint(w)
    }
}

/// Initialization of a blob field from the reference scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlobInit {
    /// Standard deviation of the per-axis center offset (m).
    pub center_jitter: f64,
    pub log_sigma_jitter: f64,
    pub log_amplitude_jitter: f64,
    pub color_jitter: f64,
    /// Start from a static field; motion has to be learned.
    pub zero_velocity: bool,
}

impl Default for BlobInit {
    fn default() -> Self {
        BlobInit {
            center_jitter: 0.0,
            log_sigma_jitter: 0.0,
            log_amplitude_jitter: 0.0,
            color_jitter: 0.0,
            zero_velocity: false,
        }
    }
}

impl BlobInit {
    pub fn apply(&self, reference: &BlobField, seed: u64) -> Result<BlobField> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut draw = |scale: f64| scale * std_normal.sample(&mut rng);
        let mut blobs = Vec::with_capacity(reference.blobs.len());
        for b in &reference.blobs {
            let center0 = b.center0 + Vector3::new(draw(1.0), draw(1.0), draw(1.0)) * self.center_jitter;
            let sigma_spatial = b.sigma_spatial * draw(self.log_sigma_jitter).exp();
            let amplitude = b.amplitude * draw(self.log_amplitude_jitter).exp();
            let color = (b.color + Vector3::new(draw(1.0), draw(1.0), draw(1.0)) * self.color_jitter)
                .map(|c| c.clamp(0.0, 1.0));
            let velocity = if self.zero_velocity {
                Vector3::zeros()
            } else {
                b.velocity
            };
            blobs.push(Blob {
                center0,
                velocity,
                sigma_spatial,
                amplitude,
                color,
            });
        }
        BlobField::new(blobs)
    }
}

pub(super) fn build(init: &FieldInit<'_>) -> Result<Box<dyn RadianceField>> {
    let reference = match init.reference {
        Some(r) => r,
        None => return invalid("blob backend needs a reference scene to initialize from"),
    };
    let opts: BlobInit = if init.options.is_null() {
        BlobInit::default()
    } else {
        serde_json::from_value(init.options.clone())?
    };
    Ok(Box::new(opts.apply(reference, init.seed)?))
}

pub(super) fn load(r: &mut dyn Read, _options: &Value) -> Result<Box<dyn RadianceField>> {
    let net = DenseNet::read_checkpoint(r)?;
    Ok(Box::new(BlobField::from_checkpoint_net(&net)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::fd_gradient;

    fn two_blobs() -> BlobField {
        BlobField::new(vec![
            Blob {
                center0: Vector3::new(0.1, -0.2, 0.3),
                velocity: Vector3::new(0.4, 0.0, -0.2),
                sigma_spatial: 0.35,
                amplitude: 6.0,
                color: Vector3::new(0.9, 0.2, 0.1),
            },
            Blob {
                center0: Vector3::new(-0.3, 0.2, 0.0),
                velocity: Vector3::zeros(),
                sigma_spatial: 0.25,
                amplitude: 9.0,
                color: Vector3::new(0.1, 0.4, 0.8),
            },
        ])
        .unwrap()
    }

    #[test]
    fn validation() {
        let mut b = two_blobs().blobs[0].clone();
        b.amplitude = 0.0;
        assert!(BlobField::new(vec![b.clone()]).is_err());
        b.amplitude = 1.0;
        b.color.x = 1.5;
        assert!(BlobField::new(vec![b]).is_err());
    }

    #[test]
    fn position_vjp_matches_fd() {
        let f = two_blobs();
        let x = Vector3::new(0.05, 0.1, 0.2);
        let dd = 0.7;
        let dc = Vector3::new(-0.3, 1.1, 0.4);
        let scalar = |p: &[f64]| {
            let s = f.query(&Vector3::new(p[0], p[1], p[2]), 0.4);
            dd * s.density + dc.dot(&s.color)
        };
        let fd = fd_gradient(scalar, x.as_slice(), 1e-6).unwrap();
        let an = f.vjp_position(&x, 0.4, dd, &dc);
        for k in 0..3 {
            assert!((an[k] - fd[k]).abs() < 1e-7 * (1.0 + fd[k].abs()), "k={k}");
        }
    }

    #[test]
    fn param_vjp_matches_fd() {
        let f = two_blobs();
        let x = Vector3::new(0.05, 0.1, 0.2);
        let dd = 0.7;
        let dc = Vector3::new(-0.3, 1.1, 0.4);
        let p0 = f.params();
        let fd = fd_gradient(
            |p| {
                let mut g = f.clone();
                g.set_params(p).unwrap();
                let s = g.query(&x, 0.6);
                dd * s.density + dc.dot(&s.color)
            },
            &p0,
            1e-6,
        )
        .unwrap();
        let mut an = vec![0.0; p0.len()];
        f.vjp_params(&x, 0.6, dd, &dc, &mut an);
        for (i, (a, n)) in an.iter().zip(&fd).enumerate() {
            assert!((a - n).abs() < 1e-6 * (1.0 + n.abs()), "param {i}: {a} vs {n}");
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let f = two_blobs();
        let mut buf = Vec::new();
        f.write_checkpoint(&mut buf).unwrap();
        let back = load(&mut buf.as_slice(), &Value::Null).unwrap();
        let p = back.params();
        for (a, b) in p.iter().zip(f.params()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn init_exact_reproduces_reference() {
        let f = two_blobs();
        let g = BlobInit::default().apply(&f, 3).unwrap();
        assert_eq!(f, g);
        let z = BlobInit {
            zero_velocity: true,
            ..Default::default()
        }
        .apply(&f, 3)
        .unwrap();
        assert!(z.blobs.iter().all(|b| b.velocity == Vector3::zeros()));
    }
}
