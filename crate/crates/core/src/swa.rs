//! Sliding-window attention across the previous and current chunk.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{AttentionMask, LayerNorm, MultiHeadAttention, RngState, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapStatus {
    OverlapsPrevious,
    NoOverlap,
    OverlapsNext,
}

impl OverlapStatus {
    pub const ALL: [OverlapStatus; 3] = [Self::OverlapsPrevious, Self::NoOverlap, Self::OverlapsNext];

    fn index(self) -> usize {
        match self {
            Self::OverlapsPrevious => 0,
            Self::NoOverlap => 1,
            Self::OverlapsNext => 2,
        }
    }
}

/// Status of every frame in chunk `chunk_index` (0-based) of `n_chunks`.
///
/// A frame shared with the previous chunk takes precedence over one shared
/// with the next chunk.
pub fn overlap_statuses(chunk_index: usize, n_chunks: usize, n_frames: usize, overlap: usize) -> Vec<OverlapStatus> {
    (0..n_frames)
        .map(|f| {
            if chunk_index > 0 && f < overlap {
                OverlapStatus::OverlapsPrevious
            } else if chunk_index + 1 < n_chunks && f + overlap >= n_frames {
                OverlapStatus::OverlapsNext
            } else {
                OverlapStatus::NoOverlap
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapEmbeddings {
    /// Indexed by overlaps-previous, no-overlap, overlaps-next.
    pub vectors: [Vec<f64>; 3],
}

impl OverlapEmbeddings {
    pub fn zeros(dim: usize) -> Self {
        Self {
            vectors: [vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]],
        }
    }

    pub fn random(dim: usize, std: f64, rng: &mut RngState) -> Self {
        let mut v = || (0..dim).map(|_| std * rng.normal()).collect::<Vec<_>>();
        Self {
            vectors: [v(), v(), v()],
        }
    }

    pub fn get(&self, status: OverlapStatus) -> &[f64] {
        &self.vectors[status.index()]
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }
}

/// Add each frame's status vector to all of that frame's tokens.
///
/// Tokens are laid out frame-major, so the tokens per frame are `rows / statuses.len()`.
pub fn apply_overlap_embeddings(tokens: &Tensor, statuses: &[OverlapStatus], emb: &OverlapEmbeddings) -> Result<Tensor> {
    if statuses.is_empty() || tokens.rows() % statuses.len() != 0 {
        return Err(Error::shape(format!(
            "{} statuses for {} tokens",
            statuses.len(),
            tokens.rows()
        )));
    }
    if tokens.cols() != emb.dim() {
        return Err(Error::shape(format!(
            "embedding dim {} for {}-dim tokens",
            emb.dim(),
            tokens.cols()
        )));
    }
    let per_frame = tokens.rows() / statuses.len();
    let mut out = tokens.clone();
    for r in 0..tokens.rows() {
        let e = emb.get(statuses[r / per_frame]);
        out.row_mut(r).iter_mut().zip(e).for_each(|(x, v)| *x += v);
    }
    Ok(out)
}

/// Tokens of one chunk with the frame metadata SWA needs.
#[derive(Clone, Debug)]
pub struct ChunkTokens {
    pub tokens: Tensor,
    pub frame_ids: Vec<usize>,
    pub statuses: Vec<OverlapStatus>,
}

impl ChunkTokens {
    pub fn validate(&self) -> Result<()> {
        if self.frame_ids.len() != self.statuses.len() {
            return Err(Error::shape(format!(
                "{} frame ids vs {} statuses",
                self.frame_ids.len(),
                self.statuses.len()
            )));
        }
        if self.frame_ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Data("frame ids must be strictly increasing".into()));
        }
        if self.frame_ids.is_empty() || self.tokens.rows() % self.frame_ids.len() != 0 {
            return Err(Error::shape(format!(
                "{} tokens for {} frames",
                self.tokens.rows(),
                self.frame_ids.len()
            )));
        }
        Ok(())
    }
}

/// `C^{m−1} ∪ C^m`: the previous chunk is optional (first chunk or after a reset).
#[derive(Clone, Debug)]
pub struct ChunkWindow {
    pub chunk_index: usize,
    pub prev: Option<ChunkTokens>,
    pub cur: ChunkTokens,
}

impl ChunkWindow {
    pub fn validate(&self) -> Result<()> {
        self.cur.validate()?;
        if let Some(p) = &self.prev {
            p.validate()?;
            if p.tokens.cols() != self.cur.tokens.cols() {
                return Err(Error::shape("previous and current chunk token widths differ"));
            }
        }
        Ok(())
    }
}

/// Current-chunk queries see every key of both chunks.
pub fn build_swa_mask(window: &ChunkWindow) -> AttentionMask {
    let n_prev = window.prev.as_ref().map_or(0, |p| p.tokens.rows());
    let n_cur = window.cur.tokens.rows();
    AttentionMask::full(n_cur, n_prev + n_cur)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SwaParams {
    pub attn: MultiHeadAttention,
    pub norm: LayerNorm,
    pub embeddings: OverlapEmbeddings,
}

impl SwaParams {
    pub fn random(dim: usize, heads: usize, rng: &mut RngState) -> Result<Self> {
        Ok(Self {
            attn: MultiHeadAttention::random(dim, heads, rng)?,
            norm: LayerNorm::new(dim),
            embeddings: OverlapEmbeddings::random(dim, 0.02, rng),
        })
    }

    pub fn zero_output(&mut self) {
        self.attn.w_o = Tensor::zeros(self.attn.w_o.shape());
    }

    /// Normalized, embedded tokens that both queries and keys are read from.
    fn prepare(&self, chunk: &ChunkTokens) -> Result<Tensor> {
        let x = apply_overlap_embeddings(&chunk.tokens, &chunk.statuses, &self.embeddings)?;
        self.norm.forward(&x)
    }

    pub fn byte_size(&self) -> usize {
        self.attn.byte_size() + 8 * (2 * self.norm.gain.len() + 3 * self.embeddings.dim())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CachedKv {
    pub chunk_index: usize,
    pub keys: Tensor,
    pub values: Tensor,
}

/// Keys and values of the most recent chunk for one SWA layer.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SwaCache {
    pub entry: Option<CachedKv>,
}

impl SwaCache {
    pub fn clear(&mut self) {
        self.entry = None;
    }

    pub fn byte_size(&self) -> usize {
        self.entry.as_ref().map_or(0, |e| 8 * (e.keys.len() + e.values.len()))
    }
}

/// Residual SWA step using cached keys/values for the previous chunk.
///
/// An empty cache means the current chunk has no predecessor in this segment.
/// `window.prev` is ignored on this path.
pub fn swa_forward(window: &ChunkWindow, cache: &SwaCache, params: &SwaParams) -> Result<(Tensor, SwaCache)> {
    window.cur.validate()?;
    let x = params.prepare(&window.cur)?;
    let (k_cur, v_cur) = params.attn.project_kv(&x)?;
    let (keys, values) = match &cache.entry {
        Some(e) if e.chunk_index + 1 == window.chunk_index => (
            Tensor::concat_rows(&[&e.keys, &k_cur])?,
            Tensor::concat_rows(&[&e.values, &v_cur])?,
        ),
        Some(e) => {
            return Err(Error::Cache {
                expected: window.chunk_index.saturating_sub(1),
                found: e.chunk_index,
            })
        }
        None => (k_cur.clone(), v_cur.clone()),
    };
    let mask = AttentionMask::full(x.rows(), keys.rows());
    let attn = params.attn.attend(&x, &keys, &values, &mask)?;
    let out = window.cur.tokens.add(&attn)?;
    let cache = SwaCache {
        entry: Some(CachedKv {
            chunk_index: window.chunk_index,
            keys: k_cur,
            values: v_cur,
        }),
    };
    Ok((out, cache))
}

/// Same result as [`swa_forward`], re-projecting the previous chunk's raw tokens.
pub fn swa_forward_recompute(window: &ChunkWindow, params: &SwaParams) -> Result<Tensor> {
    window.validate()?;
    let x = params.prepare(&window.cur)?;
    let (k_cur, v_cur) = params.attn.project_kv(&x)?;
    let (keys, values) = match &window.prev {
        Some(p) => {
            let (k_prev, v_prev) = params.attn.project_kv(&params.prepare(p)?)?;
            (Tensor::concat_rows(&[&k_prev, &k_cur])?, Tensor::concat_rows(&[&v_prev, &v_cur])?)
        }
        None => (k_cur, v_cur),
    };
    let attn = params.attn.attend(&x, &keys, &values, &build_swa_mask(window))?;
    window.cur.tokens.add(&attn)
}
