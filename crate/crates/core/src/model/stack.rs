use std::path::Path;

use serde::{Deserialize, Serialize};

use super::block::{block_forward, BlockParams, BlockState, ChunkMeta};
use crate::error::{Error, Result};
use crate::geometry::linalg3::{self as la, Vec3};
use crate::geometry::{Pointmap, PoseSE3};
use crate::numerics::{LayerNorm, RngState, Tensor};
use crate::ttt::{reset_due, TttConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StackConfig {
    pub model_dim: usize,
    pub n_blocks: usize,
    pub heads: usize,
    /// 1-based block indices that carry an SWA layer.
    pub swa_depths: Vec<usize>,
    pub tokens_per_frame: usize,
    /// Input features per patch token.
    pub patch_features: usize,
    pub ttt_enabled: bool,
    pub ttt: TttConfig,
}

impl Default for StackConfig {
    fn default() -> Self {
        Self {
            model_dim: 64,
            n_blocks: 4,
            heads: 4,
            swa_depths: vec![2, 4],
            tokens_per_frame: 4,
            patch_features: 12,
            ttt_enabled: true,
            ttt: TttConfig::default(),
        }
    }
}

impl StackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.model_dim < 2 || self.n_blocks == 0 || self.tokens_per_frame == 0 || self.patch_features == 0 {
            return Err(Error::Config(
                "model_dim ≥ 2, n_blocks ≥ 1, tokens_per_frame ≥ 1 and patch_features ≥ 1 are required".into(),
            ));
        }
        if self.heads == 0 || self.model_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "{} heads do not divide model_dim {}",
                self.heads, self.model_dim
            )));
        }
        if let Some(d) = self.swa_depths.iter().find(|&&d| d == 0 || d > self.n_blocks) {
            return Err(Error::Config(format!("SWA depth {d} outside 1..={}", self.n_blocks)));
        }
        if self.ttt_enabled {
            self.ttt.validate()?;
            if self.model_dim % self.ttt.head_dim != 0 {
                return Err(Error::Config(format!(
                    "TTT head_dim {} does not divide model_dim {}",
                    self.ttt.head_dim, self.model_dim
                )));
            }
        }
        Ok(())
    }

    /// Read a JSON or TOML config, chosen by file extension.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?,
            _ => serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Patch grid `(rows, cols)` with rows the largest divisor not above √P.
    pub fn patch_grid(&self) -> (usize, usize) {
        let p = self.tokens_per_frame;
        let rows = (1..=p).filter(|r| p % r == 0 && r * r <= p).max().unwrap_or(1);
        (rows, p / rows)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LinearHead {
    /// `[out × dim]`
    pub weight: Tensor,
    pub bias: Vec<f64>,
}

impl LinearHead {
    fn random(out: usize, dim: usize, std: f64, rng: &mut RngState) -> Self {
        Self {
            weight: Tensor::randn(out, dim, std, rng),
            bias: vec![0.0; out],
        }
    }

    fn forward_row(&self, x: &[f64]) -> Vec<f64> {
        (0..self.weight.rows())
            .map(|o| self.bias[o] + self.weight.row(o).iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }
}

/// Rotation from two 3-vectors offset from the first two identity columns.
///
/// Gram–Schmidt on the first two columns, cross product for the third.
pub fn rotation_from_6d(r: &[f64]) -> Result<la::Mat3> {
    let a1 = [1.0 + r[0], r[1], r[2]];
    let a2 = [r[3], 1.0 + r[4], r[5]];
    let n1 = la::norm(a1);
    if !(n1 > 1e-12) {
        return Err(Error::Numerical("degenerate rotation parameters".into()));
    }
    let b1 = la::scale(a1, 1.0 / n1);
    let a2p = la::sub(a2, la::scale(b1, la::dot(b1, a2)));
    let n2 = la::norm(a2p);
    if !(n2 > 1e-12) {
        return Err(Error::Numerical("degenerate rotation parameters".into()));
    }
    let b2 = la::scale(a2p, 1.0 / n2);
    let b3 = la::cross(b1, b2);
    Ok([[b1[0], b2[0], b3[0]], [b1[1], b2[1], b3[1]], [b1[2], b2[2], b3[2]]])
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PredictionHeads {
    pub norm: LayerNorm,
    pub point: LinearHead,
    pub confidence: LinearHead,
    pub pose: LinearHead,
}

/// Backbone slow weights plus the patch embedding and heads.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HybridModel {
    pub config: StackConfig,
    /// `[model_dim × patch_features]`
    pub embed: Tensor,
    /// `[tokens_per_frame × model_dim]`
    pub positional: Tensor,
    pub blocks: Vec<BlockParams>,
    pub heads: PredictionHeads,
}

/// Stack-wide mutable state of one stream.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamState {
    pub blocks: Vec<BlockState>,
}

impl StreamState {
    pub fn reset(&mut self) {
        self.blocks.iter_mut().for_each(BlockState::reset);
    }

    /// Apply the periodic reset policy before processing `chunk_index`.
    pub fn begin_chunk(&mut self, chunk_index: usize, reset_period: usize) -> bool {
        let due = reset_due(chunk_index, reset_period);
        if due {
            self.reset();
        }
        due
    }

    pub fn byte_size(&self) -> usize {
        self.blocks.iter().map(BlockState::byte_size).sum()
    }

    pub fn chunks_absorbed(&self) -> Vec<u64> {
        self.blocks
            .iter()
            .filter_map(|b| b.fast.as_ref().map(|f| f.chunks_absorbed))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct ChunkInput {
    pub meta: ChunkMeta,
    /// `[frames · tokens_per_frame × patch_features]`, frame-major.
    pub features: Tensor,
}

#[derive(Clone, Debug)]
pub struct StackOutput {
    pub poses: Vec<PoseSE3>,
    pub pointmaps: Vec<Pointmap>,
    pub confidences: Vec<Vec<f64>>,
}

impl HybridModel {
    pub fn new(config: StackConfig, rng: &mut RngState) -> Result<Self> {
        config.validate()?;
        let d = config.model_dim;
        let embed = Tensor::randn(d, config.patch_features, 1.0 / (config.patch_features as f64).sqrt(), rng);
        let positional = Tensor::randn(config.tokens_per_frame, d, 0.02, rng);
        let ttt = config.ttt_enabled.then_some(&config.ttt);
        let blocks = (1..=config.n_blocks)
            .map(|i| BlockParams::random(d, config.heads, config.swa_depths.contains(&i), ttt, rng))
            .collect::<Result<Vec<_>>>()?;
        let heads = PredictionHeads {
            norm: LayerNorm::new(d),
            point: LinearHead::random(3, d, 0.02, rng),
            confidence: LinearHead::random(1, d, 0.02, rng),
            pose: LinearHead::random(9, d, 0.01, rng),
        };
        Ok(Self {
            config,
            embed,
            positional,
            blocks,
            heads,
        })
    }

    pub fn initial_state(&self) -> StreamState {
        StreamState {
            blocks: self.blocks.iter().map(BlockParams::initial_state).collect(),
        }
    }

    /// Zero the output paths of every SWA layer; TTT output starts at zero already.
    pub fn silence_new_layers(&mut self) {
        for b in &mut self.blocks {
            if let Some(s) = &mut b.swa {
                s.zero_output();
            }
        }
    }

    pub fn parameter_bytes(&self) -> usize {
        8 * (self.embed.len() + self.positional.len())
            + self.blocks.iter().map(BlockParams::byte_size).sum::<usize>()
    }

    pub fn embed_tokens(&self, features: &Tensor) -> Result<Tensor> {
        let p = self.config.tokens_per_frame;
        if features.cols() != self.config.patch_features || features.rows() % p != 0 {
            return Err(Error::shape(format!(
                "features {:?} for {} tokens/frame × {} features",
                features.shape(),
                p,
                self.config.patch_features
            )));
        }
        let mut h = features.matmul_t(&self.embed)?;
        for r in 0..h.rows() {
            let pos = self.positional.row(r % p).to_vec();
            h.row_mut(r).iter_mut().zip(pos).for_each(|(x, e)| *x += e);
        }
        Ok(h)
    }

    /// Backbone only: returns final tokens and the advanced stream state.
    pub fn backbone(&self, input: &ChunkInput, state: &StreamState) -> Result<(Tensor, StreamState)> {
        if state.blocks.len() != self.blocks.len() {
            return Err(Error::shape(format!(
                "stream state for {} blocks, model has {}",
                state.blocks.len(),
                self.blocks.len()
            )));
        }
        let mut h = self.embed_tokens(&input.features)?;
        let mut next = Vec::with_capacity(self.blocks.len());
        for (block, bs) in self.blocks.iter().zip(&state.blocks) {
            let (out, s) = block_forward(block, &h, &input.meta, self.config.tokens_per_frame, bs, &self.config.ttt)?;
            h = out;
            next.push(s);
        }
        Ok((h, StreamState { blocks: next }))
    }

    pub fn stack_forward(&self, input: &ChunkInput, state: &StreamState) -> Result<(StackOutput, StreamState)> {
        let (h, next) = self.backbone(input, state)?;
        let h = self.heads.norm.forward(&h)?;
        let p = self.config.tokens_per_frame;
        let (gh, gw) = self.config.patch_grid();
        let frames = h.rows() / p;
        let mut poses = Vec::with_capacity(frames);
        let mut pointmaps = Vec::with_capacity(frames);
        let mut confidences = Vec::with_capacity(frames);
        for f in 0..frames {
            let tok = h.slice_rows(f * p, (f + 1) * p);
            let mut points: Vec<Vec3> = Vec::with_capacity(p);
            let mut conf = Vec::with_capacity(p);
            let mut pooled = vec![0.0; h.cols()];
            for r in 0..p {
                let row = tok.row(r);
                let o = self.heads.point.forward_row(row);
                let z = o[2].clamp(-20.0, 20.0).exp();
                points.push([o[0] * z, o[1] * z, z]);
                conf.push(1.0 + self.heads.confidence.forward_row(row)[0].clamp(-50.0, 50.0).exp());
                pooled.iter_mut().zip(row).for_each(|(a, b)| *a += b / p as f64);
            }
            let raw = self.heads.pose.forward_row(&pooled);
            let rotation = rotation_from_6d(&raw[..6])?;
            poses.push(PoseSE3 {
                rotation,
                translation: [raw[6], raw[7], raw[8]],
            });
            pointmaps.push(Pointmap::from_points(gh, gw, points)?);
            confidences.push(conf);
        }
        Ok((
            StackOutput {
                poses,
                pointmaps,
                confidences,
            },
            next,
        ))
    }
}
