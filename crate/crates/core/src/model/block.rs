use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{AttentionMask, LayerNorm, MultiHeadAttention, RngState, Tensor};
use crate::swa::{swa_forward, ChunkTokens, ChunkWindow, OverlapStatus, SwaCache, SwaParams};
use crate::ttt::{reset_state, ttt_apply, ttt_update, FastWeightState, TttConfig, TttProjections};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TttLayer {
    pub proj: TttProjections,
    pub norm: LayerNorm,
    pub initial: FastWeightState,
}

/// Slow weights of one residual block.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BlockParams {
    pub frame_attn: MultiHeadAttention,
    pub frame_norm: LayerNorm,
    pub swa: Option<SwaParams>,
    pub ttt: Option<TttLayer>,
    pub chunk_attn: MultiHeadAttention,
    pub chunk_norm: LayerNorm,
}

impl BlockParams {
    pub fn random(dim: usize, heads: usize, with_swa: bool, ttt: Option<&TttConfig>, rng: &mut RngState) -> Result<Self> {
        let frame_attn = MultiHeadAttention::random(dim, heads, rng)?;
        let swa = if with_swa { Some(SwaParams::random(dim, heads, rng)?) } else { None };
        let ttt = match ttt {
            Some(cfg) => {
                if dim % cfg.head_dim != 0 {
                    return Err(Error::Config(format!(
                        "TTT head_dim {} does not divide model_dim {dim}",
                        cfg.head_dim
                    )));
                }
                let n = dim / cfg.head_dim;
                Some(TttLayer {
                    proj: TttProjections::orthogonal(dim, n, cfg.head_dim, rng)?,
                    norm: LayerNorm::new(dim),
                    initial: FastWeightState::random(n, cfg, rng),
                })
            }
            None => None,
        };
        Ok(Self {
            frame_attn,
            frame_norm: LayerNorm::new(dim),
            swa,
            ttt,
            chunk_attn: MultiHeadAttention::random(dim, heads, rng)?,
            chunk_norm: LayerNorm::new(dim),
        })
    }

    pub fn dim(&self) -> usize {
        self.frame_attn.dim()
    }

    pub fn initial_state(&self) -> BlockState {
        BlockState {
            fast: self.ttt.as_ref().map(|t| t.initial.clone()),
            swa: SwaCache::default(),
        }
    }

    pub fn byte_size(&self) -> usize {
        let norms = 8 * 2 * self.dim() * 2;
        self.frame_attn.byte_size()
            + self.chunk_attn.byte_size()
            + norms
            + self.swa.as_ref().map_or(0, SwaParams::byte_size)
            + self.ttt.as_ref().map_or(0, |t| t.proj.byte_size() + 8 * 2 * self.dim())
    }
}

/// Per-stream mutable state of one block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockState {
    pub fast: Option<FastWeightState>,
    pub swa: SwaCache,
}

impl BlockState {
    pub fn reset(&mut self) {
        if let Some(f) = &mut self.fast {
            *f = reset_state(f);
        }
        self.swa.clear();
    }

    pub fn byte_size(&self) -> usize {
        self.fast.as_ref().map_or(0, |f| 8 * f.num_values()) + self.swa.byte_size()
    }
}

/// Which chunk is being processed and the status of each of its frames.
#[derive(Clone, Debug, PartialEq)]
pub struct ChunkMeta {
    pub chunk_index: usize,
    pub frame_ids: Vec<usize>,
    pub statuses: Vec<OverlapStatus>,
}

/// `H + Attn(LN(H))` restricted to the tokens of each frame.
pub fn frame_attention(block: &BlockParams, tokens: &Tensor, tokens_per_frame: usize) -> Result<Tensor> {
    if tokens_per_frame == 0 || tokens.rows() % tokens_per_frame != 0 {
        return Err(Error::shape(format!(
            "{} tokens are not a whole number of {tokens_per_frame}-token frames",
            tokens.rows()
        )));
    }
    let x = block.frame_norm.forward(tokens)?;
    let mask = AttentionMask::full(tokens_per_frame, tokens_per_frame);
    let mut out = tokens.clone();
    for f in 0..tokens.rows() / tokens_per_frame {
        let (a, b) = (f * tokens_per_frame, (f + 1) * tokens_per_frame);
        let o = block.frame_attn.self_attend(&x.slice_rows(a, b), &mask)?;
        for r in 0..tokens_per_frame {
            out.row_mut(a + r).iter_mut().zip(o.row(r)).for_each(|(h, v)| *h += v);
        }
    }
    Ok(out)
}

/// `H + Attn(LN(H))` over every token of the chunk.
pub fn chunk_attention(block: &BlockParams, tokens: &Tensor) -> Result<Tensor> {
    let x = block.chunk_norm.forward(tokens)?;
    let mask = AttentionMask::full(x.rows(), x.rows());
    tokens.add(&block.chunk_attn.self_attend(&x, &mask)?)
}

/// Frame attention, SWA, TTT apply-then-update, chunk attention.
pub fn block_forward(
    block: &BlockParams,
    tokens: &Tensor,
    meta: &ChunkMeta,
    tokens_per_frame: usize,
    state: &BlockState,
    ttt_cfg: &TttConfig,
) -> Result<(Tensor, BlockState)> {
    if tokens.cols() != block.dim() {
        return Err(Error::shape(format!("{}-dim tokens for a {}-dim block", tokens.cols(), block.dim())));
    }
    if meta.frame_ids.len() * tokens_per_frame != tokens.rows() {
        return Err(Error::shape(format!(
            "{} tokens for {} frames of {tokens_per_frame}",
            tokens.rows(),
            meta.frame_ids.len()
        )));
    }
    let mut next = state.clone();
    let mut h = frame_attention(block, tokens, tokens_per_frame)?;

    if let Some(swa) = &block.swa {
        let window = ChunkWindow {
            chunk_index: meta.chunk_index,
            prev: None,
            cur: ChunkTokens {
                tokens: h,
                frame_ids: meta.frame_ids.clone(),
                statuses: meta.statuses.clone(),
            },
        };
        let (out, cache) = swa_forward(&window, &state.swa, swa)?;
        h = out;
        next.swa = cache;
    }

    if let (Some(layer), Some(fast)) = (&block.ttt, &state.fast) {
        let x = layer.norm.forward(&h)?;
        let o = ttt_apply(fast, &layer.proj, &x)?;
        next.fast = Some(ttt_update(fast, &layer.proj, &x, ttt_cfg)?);
        h = h.add(&o)?;
    }

    let out = chunk_attention(block, &h)?;
    Ok((out, next))
}
