use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Per-row normalization to zero mean and unit variance, then `gain ⊙ x + bias`.
pub fn layer_norm(x: &Tensor, gain: &[f64], bias: &[f64]) -> Result<Tensor> {
    let d = x.cols();
    if d < 2 {
        return Err(Error::shape(format!("layer norm over {d} features")));
    }
    if gain.len() != d || bias.len() != d {
        return Err(Error::shape(format!(
            "layer norm gain/bias of length {}/{} for {d} features",
            gain.len(),
            bias.len()
        )));
    }
    let mut out = x.clone();
    for r in 0..x.rows() {
        let row = out.row_mut(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for ((v, g), b) in row.iter_mut().zip(gain).zip(bias) {
            *v = (*v - mean) * inv * g + b;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gain: vec![1.0; dim],
            bias: vec![0.0; dim],
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        layer_norm(x, &self.gain, &self.bias)
    }
}
