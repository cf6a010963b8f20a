use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{RngState, Tensor};

/// Weights of `f(x) = W_down · (silu(W_gate x) ⊙ (W_up x))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwigluParams {
    /// `[hidden × dim]`
    pub w_gate: Tensor,
    /// `[hidden × dim]`
    pub w_up: Tensor,
    /// `[dim × hidden]`
    pub w_down: Tensor,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Mean of squared differences over every output element.
    #[default]
    SquaredError,
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn silu_prime(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

impl SwigluParams {
    pub fn zeros(dim: usize, hidden: usize) -> Self {
        Self {
            w_gate: Tensor::zeros(&[hidden, dim]),
            w_up: Tensor::zeros(&[hidden, dim]),
            w_down: Tensor::zeros(&[dim, hidden]),
        }
    }

    /// Gaussian gate/up weights; the down projection is zero when `zero_down` is set.
    pub fn random(dim: usize, hidden: usize, zero_down: bool, rng: &mut RngState) -> Self {
        let std_in = 1.0 / (dim as f64).sqrt();
        let std_out = 1.0 / (hidden as f64).sqrt();
        let w_gate = Tensor::randn(hidden, dim, std_in, rng);
        let w_up = Tensor::randn(hidden, dim, std_in, rng);
        let w_down = if zero_down {
            Tensor::zeros(&[dim, hidden])
        } else {
            Tensor::randn(dim, hidden, std_out, rng)
        };
        Self { w_gate, w_up, w_down }
    }

    pub fn dim(&self) -> usize {
        self.w_gate.cols()
    }

    pub fn hidden(&self) -> usize {
        self.w_gate.rows()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dim(), self.hidden())
    }

    pub fn matrices(&self) -> [&Tensor; 3] {
        [&self.w_gate, &self.w_up, &self.w_down]
    }

    pub fn matrices_mut(&mut self) -> [&mut Tensor; 3] {
        [&mut self.w_gate, &mut self.w_up, &mut self.w_down]
    }

    pub fn num_params(&self) -> usize {
        self.matrices().iter().map(|m| m.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.matrices().iter().flat_map(|m| m.data().iter().copied()).collect()
    }

    /// Inverse of [`flatten`](Self::flatten) for parameters shaped like `self`.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.num_params() {
            return Err(Error::shape(format!(
                "{} values for {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        let mut out = self.clone();
        let mut offset = 0;
        for m in out.matrices_mut() {
            let n = m.len();
            m.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.matrices().iter().all(|m| m.is_finite())
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if self.w_up.shape() != self.w_gate.shape() || self.w_down.shape() != [self.dim(), self.hidden()] {
            return Err(Error::shape("inconsistent SwiGLU parameter shapes"));
        }
        if x.shape().len() != 2 || x.cols() != self.dim() {
            return Err(Error::shape(format!(
                "SwiGLU input {:?} for dim {}",
                x.shape(),
                self.dim()
            )));
        }
        Ok(())
    }
}

pub fn swiglu_forward(p: &SwigluParams, x: &Tensor) -> Result<Tensor> {
    p.check_input(x)?;
    let gate = x.matmul_t(&p.w_gate)?;
    let up = x.matmul_t(&p.w_up)?;
    let mut act = gate;
    act.data_mut()
        .iter_mut()
        .zip(up.data())
        .for_each(|(g, u)| *g = silu(*g) * u);
    act.matmul_t(&p.w_down)
}

/// Loss value and analytic gradients for `L(f(x), target)`.
#[derive(Clone, Debug)]
pub struct SwigluGrad {
    pub loss: f64,
    pub grads: SwigluParams,
}

pub fn swiglu_loss(p: &SwigluParams, x: &Tensor, target: &Tensor, kind: LossKind) -> Result<f64> {
    let y = swiglu_forward(p, x)?;
    if y.shape() != target.shape() {
        return Err(Error::shape(format!("target {:?} vs output {:?}", target.shape(), y.shape())));
    }
    match kind {
        LossKind::SquaredError => {
            let n = y.len().max(1) as f64;
            Ok(y.data()
                .iter()
                .zip(target.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / n)
        }
    }
}

pub fn swiglu_grad(p: &SwigluParams, x: &Tensor, target: &Tensor, kind: LossKind) -> Result<SwigluGrad> {
    p.check_input(x)?;
    let gate = x.matmul_t(&p.w_gate)?;
    let up = x.matmul_t(&p.w_up)?;
    let act = Tensor::new(
        gate.shape().to_vec(),
        gate.data().iter().zip(up.data()).map(|(g, u)| silu(*g) * u).collect(),
    )?;
    let y = act.matmul_t(&p.w_down)?;
    if y.shape() != target.shape() {
        return Err(Error::shape(format!("target {:?} vs output {:?}", target.shape(), y.shape())));
    }

    let LossKind::SquaredError = kind;
    let n = y.len().max(1) as f64;
    let resid = y.sub(target)?;
    let loss = resid.data().iter().map(|r| r * r).sum::<f64>() / n;
    let d_y = resid.scale(2.0 / n);

    let w_down = d_y.t_matmul(&act)?;
    let d_act = d_y.matmul(&p.w_down)?;
    let mut d_up = d_act.clone();
    let mut d_gate = d_act;
    for i in 0..d_up.len() {
        let g = gate.data()[i];
        let u = up.data()[i];
        d_up.data_mut()[i] *= silu(g);
        d_gate.data_mut()[i] *= u * silu_prime(g);
    }
    let grads = SwigluParams {
        w_gate: d_gate.t_matmul(x)?,
        w_up: d_up.t_matmul(x)?,
        w_down,
    };
    Ok(SwigluGrad { loss, grads })
}
