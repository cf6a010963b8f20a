use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{swiglu_forward, RngState, Tensor};
use crate::ttt::{update_on_pairs, FastWeightState, TttConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecallConfig {
    pub n_pairs: usize,
    pub dims: usize,
    /// Pairs absorbed per update; 0 puts every pair in one chunk.
    pub chunk_pairs: usize,
    pub passes: usize,
    pub learning_rate: f64,
    pub momentum_coeff: f64,
    pub expansion_factor: usize,
    pub seed: u64,
}

impl Default for RecallConfig {
    fn default() -> Self {
        Self {
            n_pairs: 16,
            dims: 16,
            chunk_pairs: 0,
            passes: 1,
            learning_rate: 0.05,
            momentum_coeff: 0.0,
            expansion_factor: 4,
            seed: 0,
        }
    }
}

impl RecallConfig {
    pub fn ttt_config(&self) -> TttConfig {
        TttConfig {
            learning_rate: self.learning_rate,
            momentum_coeff: self.momentum_coeff,
            head_dim: self.dims,
            expansion_factor: self.expansion_factor,
            ..TttConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_pairs == 0 || self.dims == 0 || self.passes == 0 {
            return Err(Error::Config("recall needs n_pairs, dims and passes ≥ 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be non-negative", self.learning_rate)));
        }
        self.ttt_config().validate()
    }
}

/// Unit-norm keys (orthonormal while `n_pairs ≤ dims`) and unit-norm values.
#[derive(Clone, Debug, PartialEq)]
pub struct RecallPairs {
    pub keys: Tensor,
    pub values: Tensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub n_pairs: usize,
    pub dims: usize,
    pub updates: usize,
    /// Mean `‖f_W(k) − v‖²` over all pairs.
    pub error_before: f64,
    pub error_after: f64,
    /// Error after each pass.
    pub per_pass: Vec<f64>,
    pub state_values: usize,
}

fn unit_rows(t: Tensor) -> Tensor {
    let mut t = t;
    for r in 0..t.rows() {
        let row = t.row_mut(r);
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
    t
}

pub fn make_pairs(n_pairs: usize, dims: usize, rng: &mut RngState) -> RecallPairs {
    let keys = if n_pairs <= dims {
        Tensor::random_orthogonal(n_pairs, dims, rng)
    } else {
        unit_rows(Tensor::randn(n_pairs, dims, 1.0, rng))
    };
    let values = unit_rows(Tensor::randn(n_pairs, dims, 1.0, rng));
    RecallPairs { keys, values }
}

/// Mean squared retrieval error of `state` over the pairs.
pub fn retrieval_error(state: &FastWeightState, pairs: &RecallPairs) -> Result<f64> {
    let out = swiglu_forward(&state.params[0], &pairs.keys)?;
    let diff = out.sub(&pairs.values)?;
    let err = diff.data().iter().map(|v| v * v).sum::<f64>() / pairs.keys.rows() as f64;
    if !err.is_finite() {
        return Err(Error::Numerical(format!("retrieval error is {err}")));
    }
    Ok(err)
}

pub fn recall_task(n_pairs: usize, dims: usize, seed: u64) -> Result<(RecallPairs, RecallReport)> {
    recall_task_with(&RecallConfig {
        n_pairs,
        dims,
        seed,
        ..RecallConfig::default()
    })
}

/// Write key→value pairs into a single-head fast-weight memory, chunk by
/// chunk, and measure retrieval before and after.
pub fn recall_task_with(cfg: &RecallConfig) -> Result<(RecallPairs, RecallReport)> {
    cfg.validate()?;
    let ttt = cfg.ttt_config();
    let root = RngState::new(cfg.seed);
    let pairs = make_pairs(cfg.n_pairs, cfg.dims, &mut root.derive(1));
    let mut state = FastWeightState::random(1, &ttt, &mut root.derive(2));
    let error_before = retrieval_error(&state, &pairs)?;
    let chunk = if cfg.chunk_pairs == 0 { cfg.n_pairs } else { cfg.chunk_pairs };
    let mut per_pass = Vec::with_capacity(cfg.passes);
    let mut updates = 0;
    for _ in 0..cfg.passes {
        for start in (0..cfg.n_pairs).step_by(chunk) {
            let end = (start + chunk).min(cfg.n_pairs);
            let k = pairs.keys.slice_rows(start, end);
            let v = pairs.values.slice_rows(start, end);
            state = update_on_pairs(&state, &[k], &[v], &ttt)?;
            updates += 1;
        }
        per_pass.push(retrieval_error(&state, &pairs)?);
    }
    let report = RecallReport {
        n_pairs: cfg.n_pairs,
        dims: cfg.dims,
        updates,
        error_before,
        error_after: *per_pass.last().expect("passes ≥ 1"),
        per_pass,
        state_values: state.num_values(),
    };
    Ok((pairs, report))
}
