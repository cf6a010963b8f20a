//! Fast-weight memory updated at test time, one chunk at a time.

mod muon;
mod snapshot;

pub use muon::{muon_step, newton_schulz, NS_POLISH_ITERS, NS_QUINTIC};
pub use snapshot::{read_snapshot, write_snapshot, SnapshotHeader};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{swiglu_forward, swiglu_grad, swiglu_loss, LossKind, RngState, SwigluParams, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TttConfig {
    #[serde(alias = "lr")]
    pub learning_rate: f64,
    #[serde(alias = "momentum")]
    pub momentum_coeff: f64,
    #[serde(alias = "ns_iters")]
    pub newton_schulz_iters: usize,
    pub head_dim: usize,
    pub expansion_factor: usize,
    /// Chunks between resets; 0 never resets.
    pub reset_period: usize,
}

impl Default for TttConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum_coeff: 0.9,
            newton_schulz_iters: 5,
            head_dim: 16,
            expansion_factor: 4,
            reset_period: 5,
        }
    }
}

impl TttConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning_rate must be ≥ 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum_coeff) {
            return Err(Error::Config(format!("momentum_coeff must lie in [0, 1), got {}", self.momentum_coeff)));
        }
        if self.newton_schulz_iters == 0 {
            return Err(Error::Config("newton_schulz_iters must be at least 1".into()));
        }
        if self.head_dim == 0 || self.expansion_factor == 0 {
            return Err(Error::Config("head_dim and expansion_factor must be positive".into()));
        }
        Ok(())
    }

    pub fn hidden_dim(&self) -> usize {
        self.head_dim * self.expansion_factor
    }
}

/// Per-head fast weights together with their optimizer state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FastWeightState {
    pub params: Vec<SwigluParams>,
    pub momentum: Vec<SwigluParams>,
    pub chunks_absorbed: u64,
    pub initial_params: Vec<SwigluParams>,
}

impl FastWeightState {
    pub fn new(initial: Vec<SwigluParams>) -> Self {
        Self {
            momentum: initial.iter().map(SwigluParams::zeros_like).collect(),
            params: initial.clone(),
            chunks_absorbed: 0,
            initial_params: initial,
        }
    }

    /// Random gate/up weights and a zero down projection for every head.
    pub fn random(heads: usize, cfg: &TttConfig, rng: &mut RngState) -> Self {
        Self::new(
            (0..heads)
                .map(|_| SwigluParams::random(cfg.head_dim, cfg.hidden_dim(), true, rng))
                .collect(),
        )
    }

    pub fn heads(&self) -> usize {
        self.params.len()
    }

    pub fn head_dim(&self) -> usize {
        self.params.first().map_or(0, SwigluParams::dim)
    }

    /// Number of stored doubles; constant over the life of the state.
    pub fn num_values(&self) -> usize {
        3 * self.params.iter().map(SwigluParams::num_params).sum::<usize>()
    }
}

/// Whether fast weights are restored before 0-based chunk `chunk_index`.
pub fn reset_due(chunk_index: usize, reset_period: usize) -> bool {
    reset_period > 0 && chunk_index > 0 && chunk_index % reset_period == 0
}

pub fn reset_state(state: &FastWeightState) -> FastWeightState {
    FastWeightState::new(state.initial_params.clone())
}

/// Per-head `[head_dim × model_dim]` query, key and value maps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TttProjections {
    pub w_q: Vec<Tensor>,
    pub w_k: Vec<Tensor>,
    pub w_v: Vec<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedTokens {
    pub q: Vec<Tensor>,
    pub k: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl TttProjections {
    /// Orthogonal rows, so each head sees an isometric slice of the token space.
    pub fn orthogonal(model_dim: usize, heads: usize, head_dim: usize, rng: &mut RngState) -> Result<Self> {
        if head_dim > model_dim {
            return Err(Error::Config(format!("head_dim {head_dim} exceeds model dim {model_dim}")));
        }
        let mut make = || -> Vec<Tensor> {
            (0..heads)
                .map(|_| Tensor::random_orthogonal(head_dim, model_dim, rng))
                .collect()
        };
        Ok(Self {
            w_q: make(),
            w_k: make(),
            w_v: make(),
        })
    }

    pub fn heads(&self) -> usize {
        self.w_q.len()
    }

    pub fn model_dim(&self) -> usize {
        self.w_q.first().map_or(0, Tensor::cols)
    }

    pub fn project(&self, tokens: &Tensor) -> Result<ProjectedTokens> {
        if tokens.shape().len() != 2 || tokens.cols() != self.model_dim() {
            return Err(Error::shape(format!(
                "TTT tokens {:?} for model dim {}",
                tokens.shape(),
                self.model_dim()
            )));
        }
        let map = |ws: &[Tensor]| ws.iter().map(|w| tokens.matmul_t(w)).collect::<Result<Vec<_>>>();
        Ok(ProjectedTokens {
            q: map(&self.w_q)?,
            k: map(&self.w_k)?,
            v: map(&self.w_v)?,
        })
    }

    pub fn byte_size(&self) -> usize {
        8 * [&self.w_q, &self.w_k, &self.w_v]
            .iter()
            .flat_map(|ws| ws.iter())
            .map(Tensor::len)
            .sum::<usize>()
    }
}

fn check_heads(state: &FastWeightState, proj: &TttProjections) -> Result<()> {
    if state.heads() != proj.heads() {
        return Err(Error::shape(format!(
            "{} fast-weight heads vs {} projection heads",
            state.heads(),
            proj.heads()
        )));
    }
    Ok(())
}

/// `f_W(q)` per head, concatenated along features.
pub fn ttt_apply(state: &FastWeightState, proj: &TttProjections, tokens_normed: &Tensor) -> Result<Tensor> {
    check_heads(state, proj)?;
    let p = proj.project(tokens_normed)?;
    let outs = apply_queries(state, &p.q)?;
    let n = tokens_normed.rows();
    let width: usize = outs.iter().map(Tensor::cols).sum();
    if width != tokens_normed.cols() {
        return Err(Error::shape(format!(
            "TTT heads produce {width} features for {}-dim tokens",
            tokens_normed.cols()
        )));
    }
    let mut out = Tensor::zeros(&[n, width]);
    let mut col = 0;
    for o in &outs {
        out.write_cols(col, o);
        col += o.cols();
    }
    Ok(out)
}

pub fn apply_queries(state: &FastWeightState, queries: &[Tensor]) -> Result<Vec<Tensor>> {
    if queries.len() != state.heads() {
        return Err(Error::shape(format!("{} query heads for {} fast-weight heads", queries.len(), state.heads())));
    }
    state.params.iter().zip(queries).map(|(p, q)| swiglu_forward(p, q)).collect()
}

/// Project the chunk's normalized tokens and absorb their key→value pairs.
pub fn ttt_update(
    state: &FastWeightState,
    proj: &TttProjections,
    chunk_tokens: &Tensor,
    cfg: &TttConfig,
) -> Result<FastWeightState> {
    check_heads(state, proj)?;
    let p = proj.project(chunk_tokens)?;
    update_on_pairs(state, &p.k, &p.v, cfg)
}

/// Mean inner loss over heads.
pub fn inner_loss(state: &FastWeightState, keys: &[Tensor], values: &[Tensor]) -> Result<f64> {
    check_pairs(state, keys, values)?;
    let mut total = 0.0;
    for ((p, k), v) in state.params.iter().zip(keys).zip(values) {
        total += swiglu_loss(p, k, v, LossKind::SquaredError)?;
    }
    Ok(total / state.heads().max(1) as f64)
}

fn check_pairs(state: &FastWeightState, keys: &[Tensor], values: &[Tensor]) -> Result<()> {
    if keys.len() != state.heads() || values.len() != state.heads() {
        return Err(Error::shape(format!(
            "{}/{} key/value heads for {} fast-weight heads",
            keys.len(),
            values.len(),
            state.heads()
        )));
    }
    if keys.iter().chain(values).any(|t| t.rows() == 0) {
        return Err(Error::shape("TTT update needs at least one token"));
    }
    Ok(())
}

/// One gradient of the mean inner loss, then one Muon step per weight matrix.
pub fn update_on_pairs(
    state: &FastWeightState,
    keys: &[Tensor],
    values: &[Tensor],
    cfg: &TttConfig,
) -> Result<FastWeightState> {
    check_pairs(state, keys, values)?;
    let heads = state.heads() as f64;
    let mut next = state.clone();
    for h in 0..state.heads() {
        let mut g = swiglu_grad(&state.params[h], &keys[h], &values[h], LossKind::SquaredError)?;
        if !g.grads.is_finite() {
            return Err(Error::Numerical(format!("non-finite fast-weight gradient in head {h}")));
        }
        // gradient of the head-averaged loss
        for m in g.grads.matrices_mut() {
            *m = m.scale(1.0 / heads);
        }
        let params = next.params[h].matrices_mut();
        let moms = next.momentum[h].matrices_mut();
        for ((w, mom), grad) in params.into_iter().zip(moms).zip(g.grads.matrices()) {
            let (dir, new_mom) = muon_step(grad, mom, cfg.momentum_coeff, cfg.newton_schulz_iters);
            w.axpy(-cfg.learning_rate, &dir)?;
            *mom = new_mom;
        }
    }
    if !next.params.iter().all(SwigluParams::is_finite) {
        return Err(Error::Numerical("fast weights became non-finite".into()));
    }
    next.chunks_absorbed += 1;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(seed: u64, heads: usize) -> (FastWeightState, TttProjections, TttConfig) {
        let cfg = TttConfig {
            head_dim: 8,
            ..TttConfig::default()
        };
        let mut rng = RngState::new(seed);
        let state = FastWeightState::random(heads, &cfg, &mut rng);
        let proj = TttProjections::orthogonal(heads * 8, heads, 8, &mut rng).unwrap();
        (state, proj, cfg)
    }

    fn with_nonzero_down(state: &FastWeightState, rng: &mut RngState) -> FastWeightState {
        FastWeightState::new(
            state
                .params
                .iter()
                .map(|p| SwigluParams::random(p.dim(), p.hidden(), false, rng))
                .collect(),
        )
    }

    #[test]
    fn zero_down_projection_gives_zero_output() {
        let (state, proj, _) = setup(1, 2);
        let mut rng = RngState::new(9);
        let x = Tensor::randn(5, 16, 1.0, &mut rng);
        let y = ttt_apply(&state, &proj, &x).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(y.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn identical_rows_give_identical_outputs() {
        let (state, proj, _) = setup(2, 2);
        let mut rng = RngState::new(3);
        let state = with_nonzero_down(&state, &mut rng);
        let row = Tensor::randn(1, 16, 1.0, &mut rng);
        let x = Tensor::concat_rows(&[&row, &row]).unwrap();
        let y = ttt_apply(&state, &proj, &x).unwrap();
        assert_eq!(y.row(0), y.row(1));
    }

    #[test]
    fn apply_is_swiglu_of_projected_queries() {
        let (state, proj, _) = setup(4, 2);
        let mut rng = RngState::new(5);
        let state = with_nonzero_down(&state, &mut rng);
        let x = Tensor::randn(3, 16, 1.0, &mut rng);
        let y = ttt_apply(&state, &proj, &x).unwrap();
        for h in 0..2 {
            let q = x.matmul(&proj.w_q[h].transpose()).unwrap();
            let expect = swiglu_forward(&state.params[h], &q).unwrap();
            let got = y.slice_cols(8 * h, 8 * (h + 1));
            assert!(got.max_abs_diff(&expect) < 1e-12);
        }
    }

    #[test]
    fn apply_is_read_only() {
        let (state, proj, _) = setup(6, 2);
        let before = state.clone();
        let mut rng = RngState::new(7);
        ttt_apply(&state, &proj, &Tensor::randn(4, 16, 1.0, &mut rng)).unwrap();
        assert_eq!(state, before);
    }

    #[test]
    fn zero_learning_rate_only_counts() {
        let (state, proj, mut cfg) = setup(8, 2);
        cfg.learning_rate = 0.0;
        let mut rng = RngState::new(1);
        let next = ttt_update(&state, &proj, &Tensor::randn(6, 16, 1.0, &mut rng), &cfg).unwrap();
        assert_eq!(next.params, state.params);
        assert_eq!(next.chunks_absorbed, 1);
    }

    #[test]
    fn small_step_decreases_inner_loss() {
        let (state, _, mut cfg) = setup(10, 1);
        let mut rng = RngState::new(11);
        let state = with_nonzero_down(&state, &mut rng);
        let k = vec![Tensor::randn(8, 8, 1.0, &mut rng)];
        let v = vec![Tensor::randn(8, 8, 1.0, &mut rng)];
        cfg.learning_rate = 1e-3;
        let l0 = inner_loss(&state, &k, &v).unwrap();
        let s1 = update_on_pairs(&state, &k, &v, &cfg).unwrap();
        let l1 = inner_loss(&s1, &k, &v).unwrap();
        let s2 = update_on_pairs(&s1, &k, &v, &cfg).unwrap();
        let l2 = inner_loss(&s2, &k, &v).unwrap();
        assert!(l1 < l0 && l2 < l1, "{l0} {l1} {l2}");
    }

    #[test]
    fn non_finite_gradient_is_numerical_error() {
        let (state, proj, cfg) = setup(12, 1);
        let mut x = Tensor::zeros(&[2, 8]);
        x.set(0, 0, f64::NAN);
        let err = ttt_update(&state, &proj, &x, &cfg).unwrap_err();
        assert!(err.is_numerical());
    }

    #[test]
    fn reset_restores_initial_weights() {
        let (state, proj, cfg) = setup(13, 2);
        assert_eq!(reset_state(&state), state);
        let mut rng = RngState::new(14);
        let mut s = state.clone();
        for _ in 0..3 {
            s = ttt_update(&s, &proj, &Tensor::randn(6, 16, 1.0, &mut rng), &cfg).unwrap();
        }
        assert_ne!(s.params, state.params);
        let r = reset_state(&s);
        assert_eq!(r.params, state.initial_params);
        assert_eq!(r.chunks_absorbed, 0);
        assert!(r.momentum.iter().all(|m| m.flatten().iter().all(|v| *v == 0.0)));
        assert_eq!(reset_state(&r), r);
    }

    #[test]
    fn empty_chunk_is_rejected() {
        let (state, proj, cfg) = setup(15, 1);
        assert!(matches!(
            ttt_update(&state, &proj, &Tensor::zeros(&[0, 8]), &cfg),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn resets_every_period() {
        let due: Vec<usize> = (0..12).filter(|&m| reset_due(m, 5)).collect();
        assert_eq!(due, vec![5, 10]);
        assert!(!(0..100).any(|m| reset_due(m, 0)));
    }

    #[test]
    fn config_validation() {
        assert!(TttConfig::default().validate().is_ok());
        let bad = TttConfig {
            newton_schulz_iters: 0,
            ..TttConfig::default()
        };
        assert!(bad.validate().is_err());
        let frozen = TttConfig {
            learning_rate: 0.0,
            ..TttConfig::default()
        };
        assert!(frozen.validate().is_ok());
        let bad = TttConfig {
            learning_rate: -1e-3,
            ..TttConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
