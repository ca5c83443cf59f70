use std::io::{Read, Write};

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{FieldInit, FieldSample, RadianceField};
use crate::error::{invalid, Result};
use crate::optim::{sigmoid, softplus, Activation, DenseNet};
use crate::render::encoding::{positional_encoding, positional_encoding_vjp, EncodingConfig};

pub(super) const NAME: &str = "mlp";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpFieldConfig {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub hidden_activation: Activation,
    pub n_freqs_xyz: usize,
    pub n_freqs_time: usize,
}

impl Default for MlpFieldConfig {
    fn default() -> Self {
        MlpFieldConfig {
            hidden_layers: 4,
            hidden_width: 64,
            hidden_activation: Activation::Relu,
            n_freqs_xyz: 6,
            n_freqs_time: 4,
        }
    }
}

impl MlpFieldConfig {
    pub fn input_dim(&self) -> usize {
        3 * (1 + 2 * self.n_freqs_xyz) + (1 + 2 * self.n_freqs_time)
    }
}

/// Dense network over the encoded position and time code, with a softplus
/// density head and sigmoid color heads.
#[derive(Clone, Debug)]
pub struct MlpField {
    net: DenseNet,
    xyz_encoding: EncodingConfig,
    time_encoding: EncodingConfig,
}

impl MlpField {
    pub fn new(config: &MlpFieldConfig, seed: u64) -> Result<Self> {
        let mut dims = vec![config.input_dim()];
        dims.extend(std::iter::repeat_n(config.hidden_width, config.hidden_layers));
        dims.push(4);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = DenseNet::random(&dims, config.hidden_activation, Activation::Identity, &mut rng)?;
        Self::from_net(net, config)
    }

    pub fn from_net(net: DenseNet, config: &MlpFieldConfig) -> Result<Self> {
        if net.input_dim() != config.input_dim() || net.output_dim() != 4 {
            return invalid(format!(
                "mlp field needs a {}→4 network, got {}→{}",
                config.input_dim(),
                net.input_dim(),
                net.output_dim()
            ));
        }
        Ok(MlpField {
            net,
            xyz_encoding: EncodingConfig::full(config.n_freqs_xyz),
            time_encoding: EncodingConfig::full(config.n_freqs_time),
        })
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut DenseNet {
        &mut self.net
    }

    fn encode(&self, x: &Vector3<f64>, t: f64) -> Vec<f64> {
        let mut input = positional_encoding(x.as_slice(), &self.xyz_encoding);
        input.extend(positional_encoding(&[t], &self.time_encoding));
        input
    }

    /// Gradient on the raw network outputs given gradients on the heads.
    fn head_grad(out: &[f64], d_density: f64, d_color: &Vector3<f64>) -> [f64; 4] {
        let mut g = [0.0; 4];
        g[0] = d_density * sigmoid(out[0]);
        for k in 0..3 {
            let s = sigmoid(out[k + 1]);
            g[k + 1] = d_color[k] * s * (1.0 - s);
        }
        g
    }
}

impl RadianceField for MlpField {
    fn backend(&self) -> &'static str {
        NAME
    }

    fn query(&self, x: &Vector3<f64>, t: f64) -> FieldSample {
        let out = self
            .net
            .predict(&self.encode(x, t))
            .expect("encoding matches network input");
        FieldSample {
            density: softplus(out[0]),
            color: Vector3::new(sigmoid(out[1]), sigmoid(out[2]), sigmoid(out[3])),
        }
    }

    fn vjp_position(
        &self,
        x: &Vector3<f64>,
        t: f64,
        d_density: f64,
        d_color: &Vector3<f64>,
    ) -> Vector3<f64> {
        let (out, tape) = self
            .net
            .forward(&self.encode(x, t))
            .expect("encoding matches network input");
        let g = Self::head_grad(&out, d_density, d_color);
        let mut scratch = vec![0.0; self.net.num_params()];
        let input_grad = self
            .net
            .backward_accumulate(&tape, &g, &mut scratch)
            .expect("tape from this network");
        let n_xyz = self.xyz_encoding.output_dim(3);
        let gx = positional_encoding_vjp(x.as_slice(), &self.xyz_encoding, &input_grad[..n_xyz]);
        Vector3::new(gx[0], gx[1], gx[2])
    }

    fn vjp_params(
        &self,
        x: &Vector3<f64>,
        t: f64,
        d_density: f64,
        d_color: &Vector3<f64>,
        grads: &mut [f64],
    ) {
        let (out, tape) = self
            .net
            .forward(&self.encode(x, t))
            .expect("encoding matches network input");
        let g = Self::head_grad(&out, d_density, d_color);
        self.net
            .backward_accumulate(&tape, &g, grads)
            .expect("tape from this network");
    }

    fn num_params(&self) -> usize {
        self.net.num_params()
    }

    fn params(&self) -> Vec<f64> {
        self.net.params()
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        self.net.set_params(params)
    }

    fn set_encoding_progress(&mut self, alpha: f64) {
        self.xyz_encoding.set_alpha(alpha);
    }

    fn clone_box(&self) -> Box<dyn RadianceField> {
        Box::new(self.clone())
    }

    fn write_checkpoint(&self, w: &mut dyn Write) -> Result<()> {
        self.net.write_checkpoint(w)
    }
}

fn parse_config(options: &Value) -> Result<MlpFieldConfig> {
    if options.is_null() {
        Ok(MlpFieldConfig::default())
    } else {
        Ok(serde_json::from_value(options.clone())?)
    }
}

pub(super) fn build(init: &FieldInit<'_>) -> Result<Box<dyn RadianceField>> {
    Ok(Box::new(MlpField::new(&parse_config(init.options)?, init.seed)?))
}

pub(super) fn load(r: &mut dyn Read, options: &Value) -> Result<Box<dyn RadianceField>> {
    let net = DenseNet::read_checkpoint(r)?;
    Ok(Box::new(MlpField::from_net(net, &parse_config(options)?)?))
}
