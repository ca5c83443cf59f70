use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Frequency encoding with a coarse-to-fine window. `alpha` in
/// `[0, n_freqs]` controls how many frequency bands are open.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodingConfig {
    pub n_freqs: usize,
    alpha: f64,
}

impl EncodingConfig {
    pub fn new(n_freqs: usize, alpha: f64) -> Self {
        EncodingConfig {
            n_freqs,
            alpha: alpha.clamp(0.0, n_freqs as f64),
        }
    }

    /// All bands open.
    pub fn full(n_freqs: usize) -> Self {
        Self::new(n_freqs, n_freqs as f64)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn set_alpha(&mut self, alpha: f64) {
        self.alpha = alpha.clamp(0.0, self.n_freqs as f64);
    }

    pub fn output_dim(&self, input_dim: usize) -> usize {
        input_dim * (1 + 2 * self.n_freqs)
    }

    /// `w_j = (1 - cos(π·clamp01(alpha - j + 1))) / 2` for `j = 1..=L`.
    pub fn window_weights(&self) -> Vec<f64> {
        (1..=self.n_freqs)
            .map(|j| {
                let r = (self.alpha - j as f64 + 1.0).clamp(0.0, 1.0);
                (1.0 - (PI * r).cos()) * 0.5
            })
            .collect()
    }
}

/// `[x, w₁ sin(2⁰πx), w₁ cos(2⁰πx), …, w_L sin(2^{L-1}πx), w_L cos(2^{L-1}πx)]`,
/// each term a block of `x.len()` values.
pub fn positional_encoding(x: &[f64], cfg: &EncodingConfig) -> Vec<f64> {
    let mut out = Vec::with_capacity(cfg.output_dim(x.len()));
    out.extend_from_slice(x);
    for (j, w) in cfg.window_weights().into_iter().enumerate() {
        let freq = (1u64 << j) as f64 * PI;
        out.extend(x.iter().map(|v| w * (freq * v).sin()));
        out.extend(x.iter().map(|v| w * (freq * v).cos()));
    }
    out
}

/// Pulls a gradient on the encoding back onto `x`.
pub fn positional_encoding_vjp(x: &[f64], cfg: &EncodingConfig, grad_out: &[f64]) -> Vec<f64> {
    let k = x.len();
    debug_assert_eq!(grad_out.len(), cfg.output_dim(k));
    let mut grad: Vec<f64> = grad_out[..k].to_vec();
    for (j, w) in cfg.window_weights().into_iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let freq = (1u64 << j) as f64 * PI;
        let sin_block = &grad_out[k * (1 + 2 * j)..k * (2 + 2 * j)];
        let cos_block = &grad_out[k * (2 + 2 * j)..k * (3 + 2 * j)];
        for i in 0..k {
            let (s, c) = (freq * x[i]).sin_cos();
            grad[i] += w * freq * (sin_block[i] * c - cos_block[i] * s);
        }
    }
    grad
}
