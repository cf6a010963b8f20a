use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{RngState, Tensor};

/// Boolean `[queries × keys]` visibility matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMask {
    n_queries: usize,
    n_keys: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn new(n_queries: usize, n_keys: usize, allowed: Vec<bool>) -> Result<Self> {
        if allowed.len() != n_queries * n_keys {
            return Err(Error::shape(format!(
                "mask {n_queries}x{n_keys} needs {} entries, got {}",
                n_queries * n_keys,
                allowed.len()
            )));
        }
        Ok(Self {
            n_queries,
            n_keys,
            allowed,
        })
    }

    pub fn full(n_queries: usize, n_keys: usize) -> Self {
        Self {
            n_queries,
            n_keys,
            allowed: vec![true; n_queries * n_keys],
        }
    }

    /// Tokens attend only within their own group of `group` consecutive rows.
    pub fn block_diagonal(n: usize, group: usize) -> Self {
        let mut allowed = vec![false; n * n];
        for i in 0..n {
            for j in 0..n {
                allowed[i * n + j] = i / group == j / group;
            }
        }
        Self {
            n_queries: n,
            n_keys: n,
            allowed,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_queries, self.n_keys)
    }

    pub fn allows(&self, q: usize, k: usize) -> bool {
        self.allowed[q * self.n_keys + k]
    }

    pub fn set(&mut self, q: usize, k: usize, allowed: bool) {
        self.allowed[q * self.n_keys + k] = allowed;
    }

    pub fn is_full(&self) -> bool {
        self.allowed.iter().all(|&a| a)
    }
}

/// Softmax attention weights `[nq × nk]`, scaled by `1/√d`, masked entries 0.
pub fn attention_weights(q: &Tensor, k: &Tensor, mask: &AttentionMask) -> Result<Tensor> {
    let (nq, d) = (q.rows(), q.cols());
    let nk = k.rows();
    if d == 0 {
        return Err(Error::shape("attention with zero head dimension"));
    }
    if k.cols() != d {
        return Err(Error::shape(format!("query dim {d} vs key dim {}", k.cols())));
    }
    if mask.shape() != (nq, nk) {
        return Err(Error::shape(format!(
            "mask {:?} vs attention {nq}x{nk}",
            mask.shape()
        )));
    }
    let scale = 1.0 / (d as f64).sqrt();
    let mut w = vec![0.0; nq * nk];
    for i in 0..nq {
        let qi = q.row(i);
        let row = &mut w[i * nk..(i + 1) * nk];
        let mut max = f64::NEG_INFINITY;
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = if mask.allows(i, j) {
                let s = scale * crate::numerics::tensor::dot(qi, k.row(j));
                max = max.max(s);
                s
            } else {
                f64::NEG_INFINITY
            };
        }
        if max == f64::NEG_INFINITY {
            return Err(Error::MaskedOut { row: i });
        }
        let mut sum = 0.0;
        for slot in row.iter_mut() {
            *slot = (*slot - max).exp();
            sum += *slot;
        }
        row.iter_mut().for_each(|s| *s /= sum);
    }
    Tensor::matrix(nq, nk, w)
}

/// Scaled dot-product attention restricted to the keys each query may see.
pub fn masked_attention(q: &Tensor, k: &Tensor, v: &Tensor, mask: &AttentionMask) -> Result<Tensor> {
    if v.rows() != k.rows() {
        return Err(Error::shape(format!("{} keys vs {} values", k.rows(), v.rows())));
    }
    let w = attention_weights(q, k, mask)?;
    let (nq, nk, dv) = (q.rows(), k.rows(), v.cols());
    let mut out = vec![0.0; nq * dv];
    for i in 0..nq {
        let orow = &mut out[i * dv..(i + 1) * dv];
        for j in 0..nk {
            let a = w.get(i, j);
            if a == 0.0 {
                continue;
            }
            orow.iter_mut().zip(v.row(j)).for_each(|(o, x)| *o += a * x);
        }
    }
    Tensor::matrix(nq, dv, out)
}

/// Multi-head attention weights; all projections are `[dim × dim]`, stored `[out × in]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_o: Tensor,
}

impl MultiHeadAttention {
    pub fn random(dim: usize, heads: usize, rng: &mut RngState) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!("{heads} heads do not divide dim {dim}")));
        }
        let std = 1.0 / (dim as f64).sqrt();
        Ok(Self {
            heads,
            w_q: Tensor::randn(dim, dim, std, rng),
            w_k: Tensor::randn(dim, dim, std, rng),
            w_v: Tensor::randn(dim, dim, std, rng),
            w_o: Tensor::randn(dim, dim, std, rng),
        })
    }

    pub fn dim(&self) -> usize {
        self.w_q.rows()
    }

    /// Keys and values for `x`, each `[n × dim]` with heads laid out side by side.
    pub fn project_kv(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        Ok((x.matmul_t(&self.w_k)?, x.matmul_t(&self.w_v)?))
    }

    /// Queries from `x_q` attend to precomputed keys/values.
    pub fn attend(&self, x_q: &Tensor, keys: &Tensor, values: &Tensor, mask: &AttentionMask) -> Result<Tensor> {
        let q = x_q.matmul_t(&self.w_q)?;
        let dim = self.dim();
        let dh = dim / self.heads;
        let mut merged = Tensor::zeros(&[q.rows(), dim]);
        for h in 0..self.heads {
            let (a, b) = (h * dh, (h + 1) * dh);
            let o = masked_attention(&q.slice_cols(a, b), &keys.slice_cols(a, b), &values.slice_cols(a, b), mask)?;
            merged.write_cols(a, &o);
        }
        merged.matmul_t(&self.w_o)
    }

    pub fn self_attend(&self, x: &Tensor, mask: &AttentionMask) -> Result<Tensor> {
        let (k, v) = self.project_kv(x)?;
        self.attend(x, &k, &v, mask)
    }

    pub fn byte_size(&self) -> usize {
        8 * (self.w_q.len() + self.w_k.len() + self.w_v.len() + self.w_o.len())
    }
}
