//! Adam with per-parameter learning rates, a small dense network with a
//! hand-written backward pass, and the central-difference gradient oracle.

use std::io::{Read, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// First/second moment state of the Adam optimizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step_count: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Advances the moments and returns the bias-corrected update to add
    /// to the parameters, using one learning rate per coordinate.
    pub fn update(&mut self, grads: &[f64], rates: &[f64]) -> Result<Vec<f64>> {
        if grads.len() != self.len() || rates.len() != self.len() {
            return invalid(format!(
                "adam: expected {} gradients and rates, got {} and {}",
                self.len(),
                grads.len(),
                rates.len()
            ));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let mut delta = Vec::with_capacity(grads.len());
        for i in 0..grads.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            delta.push(-rates[i] * m_hat / (v_hat.sqrt() + self.epsilon));
        }
        Ok(delta)
    }

    /// In-place update with a single learning rate.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        let rates = vec![lr; self.len()];
        self.step_with_rates(params, grads, &rates)
    }

    pub fn step_with_rates(&mut self, params: &mut [f64], grads: &[f64], rates: &[f64]) -> Result<()> {
        if params.len() != self.len() {
            return invalid(format!(
                "adam: {} parameters for a state of length {}",
                params.len(),
                self.len()
            ));
        }
        let delta = self.update(grads, rates)?;
        for (p, d) in params.iter_mut().zip(delta) {
            *p += d;
        }
        Ok(())
    }
}

/// Learning rates for each parameter block. Pose blocks are optimized
/// independently (`rho`, `phi`, `sigma`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlockLearningRates {
    pub lr_rho: f64,
    pub lr_phi: f64,
    pub lr_sigma: f64,
    pub lr_field: f64,
    pub lr_regressor: f64,
}

impl Default for BlockLearningRates {
    fn default() -> Self {
        BlockLearningRates {
            lr_rho: 1e-3,
            lr_phi: 1e-3,
            lr_sigma: 1e-4,
            lr_field: 1e-3,
            lr_regressor: 1e-3,
        }
    }
}

impl BlockLearningRates {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lr_rho,
            self.lr_phi,
            self.lr_sigma,
            self.lr_field,
            self.lr_regressor,
        ];
        if all.iter().all(|r| *r > 0.0 && r.is_finite()) {
            Ok(())
        } else {
            invalid("learning rates must be positive and finite")
        }
    }

    /// Per-coordinate rates for a `[rho, phi, sigma]` tangent.
    pub fn pose_rates(&self) -> [f64; 7] {
        [
            self.lr_rho,
            self.lr_rho,
            self.lr_rho,
            self.lr_phi,
            self.lr_phi,
            self.lr_phi,
            self.lr_sigma,
        ]
    }
}

/// Central finite differences `(f(x + h eᵢ) - f(x - h eᵢ)) / 2h`.
pub fn fd_gradient<F>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let plus = f(&probe);
        probe[i] = x[i] - h;
        let minus = f(&probe);
        probe[i] = x[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite function value while differencing coordinate {i}"
            )));
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Softplus,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Softplus => softplus(x),
            Activation::Sigmoid => sigmoid(x),
            Activation::Identity => x,
        }
    }

    /// Derivative at pre-activation `x`.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus => sigmoid(x),
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Identity => 1.0,
        }
    }

    fn code(self) -> u32 {
        match self {
            Activation::Relu => 0,
            Activation::Softplus => 1,
            Activation::Sigmoid => 2,
            Activation::Identity => 3,
        }
    }

    fn from_code(code: u32) -> Result<Self> {
        Ok(match code {
            0 => Activation::Relu,
            1 => Activation::Softplus,
            2 => Activation::Sigmoid,
            3 => Activation::Identity,
            _ => return invalid(format!("unknown activation code {code}")),
        })
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Affine map followed by an activation; weights are `outputs × inputs`,
/// row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Layer {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
            activation,
        }
    }

    fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

static NEXT_NET_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_NET_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Clone, Debug)]
pub struct DenseNet {
    layers: Vec<Layer>,
    id: u64,
}

impl PartialEq for DenseNet {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Cached activations of one forward pass.
#[derive(Clone, Debug)]
pub struct Tape {
    net_id: u64,
    /// Input to each layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<Vec<f64>>,
}

impl DenseNet {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return invalid("network needs at least one layer");
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return invalid(format!("layer {i} has inconsistent parameter sizes"));
            }
            if i > 0 && layers[i - 1].outputs != l.inputs {
                return invalid(format!(
                    "layer {i} expects {} inputs but previous layer emits {}",
                    l.inputs,
                    layers[i - 1].outputs
                ));
            }
        }
        Ok(DenseNet {
            layers,
            id: fresh_id(),
        })
    }

    /// Random initialization: weights ~ N(0, gain/fan_in), zero biases.
    /// `dims` lists layer widths from input to output.
    pub fn random<R: Rng>(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return invalid("network needs an input and an output width");
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for i in 0..dims.len() - 1 {
            let last = i == dims.len() - 2;
            let act = if last { output } else { hidden };
            let gain: f64 = if act == Activation::Relu { 2.0 } else { 1.0 };
            let std = (gain / dims[i] as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("finite std");
            let mut layer = Layer::zeros(dims[i], dims[i + 1], act);
            for w in layer.weights.iter_mut() {
                *w = normal.sample(rng);
            }
            layers.push(layer);
        }
        DenseNet::from_layers(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    /// Flat parameters: per layer, weights (row-major) then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return invalid(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                params.len()
            ));
        }
        let mut offset = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[offset..offset + nw]);
            offset += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[offset..offset + nb]);
            offset += nb;
        }
        self.id = fresh_id();
        Ok(())
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return invalid(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                input.len()
            ));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Tape)> {
        self.check_input(input)?;
        let mut tape = Tape {
            net_id: self.id,
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut x = input.to_vec();
        for l in &self.layers {
            let z = affine(l, &x);
            let y: Vec<f64> = z.iter().map(|&v| l.activation.apply(v)).collect();
            tape.inputs.push(x);
            tape.pre.push(z);
            x = y;
        }
        Ok((x, tape))
    }

    /// Forward pass without recording a tape.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        for l in &self.layers {
            x = affine(l, &x)
                .into_iter()
                .map(|v| l.activation.apply(v))
                .collect();
        }
        Ok(x)
    }

    /// Reverse-mode pass; returns `(parameter gradient, input gradient)`.
    pub fn backward(&self, tape: &Tape, output_grad: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut grads = vec![0.0; self.num_params()];
        let input_grad = self.backward_accumulate(tape, output_grad, &mut grads)?;
        Ok((grads, input_grad))
    }

    /// Like [`DenseNet::backward`] but adds the parameter gradient into `grads`.
    pub fn backward_accumulate(
        &self,
        tape: &Tape,
        output_grad: &[f64],
        grads: &mut [f64],
    ) -> Result<Vec<f64>> {
        if tape.net_id != self.id || tape.pre.len() != self.layers.len() {
            return invalid("tape was recorded by a different network state");
        }
        if output_grad.len() != self.output_dim() {
            return invalid(format!(
                "output gradient has {} entries, network emits {}",
                output_grad.len(),
                self.output_dim()
            ));
        }
        if grads.len() != self.num_params() {
            return invalid("gradient buffer has the wrong length");
        }
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            off += l.num_params();
        }

        let mut upstream = output_grad.to_vec();
        for (li, l) in self.layers.iter().enumerate().rev() {
            let pre = &tape.pre[li];
            let input = &tape.inputs[li];
            let dz: Vec<f64> = upstream
                .iter()
                .zip(pre)
                .map(|(g, z)| g * l.activation.derivative(*z))
                .collect();
            let base = offsets[li];
            let (w_grad, b_grad) = grads[base..base + l.num_params()].split_at_mut(l.weights.len());
            let mut down = vec![0.0; l.inputs];
            for o in 0..l.outputs {
                let d = dz[o];
                if d == 0.0 {
                    continue;
                }
                b_grad[o] += d;
                let row = &l.weights[o * l.inputs..(o + 1) * l.inputs];
                let wrow = &mut w_grad[o * l.inputs..(o + 1) * l.inputs];
                for i in 0..l.inputs {
                    wrow[i] += d * input[i];
                    down[i] += d * row[i];
                }
            }
            upstream = down;
        }
        Ok(upstream)
    }

    /// Binary checkpoint: magic `WSCN`, version, layer count, per-layer
    /// `(in, out, activation)` as little-endian u32, then each layer's
    /// row-major weights followed by its biases as little-endian f64.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for l in &self.layers {
            w.write_all(&(l.inputs as u32).to_le_bytes())?;
            w.write_all(&(l.outputs as u32).to_le_bytes())?;
            w.write_all(&l.activation.code().to_le_bytes())?;
        }
        for l in &self.layers {
            for v in l.weights.iter().chain(&l.bias) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return invalid("not a network checkpoint (bad magic)");
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return invalid(format!("unsupported checkpoint version {version}"));
        }
        let n = read_u32(&mut r)? as usize;
        let mut shapes = Vec::with_capacity(n);
        for _ in 0..n {
            let i = read_u32(&mut r)? as usize;
            let o = read_u32(&mut r)? as usize;
            let a = Activation::from_code(read_u32(&mut r)?)?;
            shapes.push((i, o, a));
        }
        let mut layers = Vec::with_capacity(n);
        for (i, o, a) in shapes {
            let mut layer = Layer::zeros(i, o, a);
            for v in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                let mut buf = [0u8; 8];
                r.read_exact(&mut buf)?;
                *v = f64::from_le_bytes(buf);
            }
            layers.push(layer);
        }
        DenseNet::from_layers(layers)
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"WSCN";
pub const CHECKPOINT_VERSION: u32 = 1;

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn affine(l: &Layer, x: &[f64]) -> Vec<f64> {
    (0..l.outputs)
        .map(|o| {
            let row = &l.weights[o * l.inputs..(o + 1) * l.inputs];
            row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + l.bias[o]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut st = AdamState::new(3);
        let mut p = vec![1.0, -2.0, 0.5];
        st.step(&mut p, &[0.0; 3], 1e-3).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn adam_first_step_matches_recurrence() {
        // t = 1: m̂ = g, v̂ = g², Δ = -lr·g/(|g| + ε)
        let mut st = AdamState::new(1);
        let mut p = vec![0.0];
        st.step(&mut p, &[1.0], 1e-3).unwrap();
        let m = (1.0 - ADAM_BETA1) * 1.0;
        let v = (1.0 - ADAM_BETA2) * 1.0;
        let expect = -1e-3 * (m / (1.0 - ADAM_BETA1)) / ((v / (1.0 - ADAM_BETA2)).sqrt() + 1e-8);
        assert_eq!(p[0], expect);
        assert!((p[0] + 0.001 / (1.0 + 1e-8)).abs() < 1e-18);
    }

    #[test]
    fn adam_shape_mismatch() {
        let mut st = AdamState::new(2);
        let mut p = vec![0.0; 3];
        assert!(st.step(&mut p, &[0.0; 3], 1e-3).is_err());
        assert!(st.update(&[0.0; 2], &[1e-3]).is_err());
    }

    #[test]
    fn fd_gradient_examples() {
        let g = fd_gradient(|x| x.iter().map(|v| v * v).sum(), &[0.3, -1.2, 2.0], 1e-5).unwrap();
        for (gi, xi) in g.iter().zip([0.3, -1.2, 2.0]) {
            assert!((gi - 2.0 * xi).abs() < 1e-8);
        }
        let g = fd_gradient(|x| x[0].sin() * x[1], &[0.3, 2.0], 1e-5).unwrap();
        assert!((g[0] - 2.0 * 0.3f64.cos()).abs() < 1e-9);
        assert!((g[1] - 0.3f64.sin()).abs() < 1e-9);
        assert!(fd_gradient(|_| f64::NAN, &[0.0], 1e-5).is_err());
    }

    #[test]
    fn identity_layer_forward_backward() {
        let mut layer = Layer::zeros(3, 3, Activation::Identity);
        for i in 0..3 {
            layer.weights[i * 3 + i] = 1.0;
        }
        let net = DenseNet::from_layers(vec![layer]).unwrap();
        let x = [0.5, -1.0, 2.0];
        let (y, tape) = net.forward(&x).unwrap();
        assert_eq!(y, x.to_vec());
        let g = [1.0, 2.0, 3.0];
        let (pg, ig) = net.backward(&tape, &g).unwrap();
        assert_eq!(ig, g.to_vec());
        for o in 0..3 {
            for i in 0..3 {
                assert_eq!(pg[o * 3 + i], g[o] * x[i]);
            }
        }
    }

    #[test]
    fn zero_weights_output_bias() {
        let mut layer = Layer::zeros(2, 2, Activation::Identity);
        layer.bias = vec![0.25, -4.0];
        let net = DenseNet::from_layers(vec![layer]).unwrap();
        assert_eq!(net.predict(&[3.0, 7.0]).unwrap(), vec![0.25, -4.0]);
    }

    #[test]
    fn dead_relu_blocks_gradient() {
        let mut first = Layer::zeros(2, 3, Activation::Relu);
        first.bias = vec![-1.0; 3];
        let mut second = Layer::zeros(3, 1, Activation::Identity);
        second.weights = vec![1.0, 1.0, 1.0];
        let net = DenseNet::from_layers(vec![first, second]).unwrap();
        let (_, tape) = net.forward(&[0.1, 0.2]).unwrap();
        let (pg, ig) = net.backward(&tape, &[1.0]).unwrap();
        assert!(pg[..9].iter().all(|g| *g == 0.0));
        assert!(ig.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn stale_tape_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = DenseNet::random(&[2, 4, 1], Activation::Relu, Activation::Identity, &mut rng)
            .unwrap();
        let (_, tape) = net.forward(&[0.1, 0.2]).unwrap();
        let p = net.params();
        net.set_params(&p).unwrap();
        assert!(matches!(
            net.backward(&tape, &[1.0]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn dimension_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = DenseNet::random(&[2, 4, 1], Activation::Relu, Activation::Identity, &mut rng)
            .unwrap();
        assert!(net.forward(&[1.0]).is_err());
        let bad = vec![Layer::zeros(2, 3, Activation::Relu), Layer::zeros(2, 1, Activation::Relu)];
        assert!(DenseNet::from_layers(bad).is_err());
    }

    #[test]
    fn checkpoint_roundtrip_and_bad_magic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = DenseNet::random(&[5, 7, 3], Activation::Softplus, Activation::Sigmoid, &mut rng)
            .unwrap();
        let mut buf = Vec::new();
        net.write_checkpoint(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"WSCN");
        assert_eq!(buf.len(), 4 + 4 + 4 + 2 * 12 + 8 * net.num_params());
        let back = DenseNet::read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back, net);
        buf[0] = b'X';
        assert!(DenseNet::read_checkpoint(buf.as_slice()).is_err());
    }
}
