use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::oracle::{oracle_chunk, OracleConfig};
use super::partition::PartitionPlan;
use super::scene::SyntheticScene;
use crate::alignment::{stitch_stream_with, AlignMode, AlignedStream, ChunkPrediction, ScaleEstimator, StitchOptions};
use crate::error::{Error, Result};
use crate::model::{ChunkInput, ChunkMeta, HybridModel, StreamState};
use crate::ttt::{reset_due, FastWeightState};

/// Anything that turns one chunk of a scene into a chunk prediction.
pub trait ChunkPredictor {
    fn predict(&mut self, scene: &SyntheticScene, plan: &PartitionPlan, m: usize) -> Result<ChunkPrediction>;

    /// Restore the initial memory state.
    fn reset(&mut self) {}

    /// Bytes of state carried from one chunk to the next.
    fn state_bytes(&self) -> usize {
        0
    }
}

/// The network, carrying its fast weights and SWA cache between chunks.
#[derive(Clone, Debug)]
pub struct ModelPredictor {
    pub model: HybridModel,
    pub state: StreamState,
}

impl ModelPredictor {
    pub fn new(model: HybridModel) -> Self {
        let state = model.initial_state();
        Self { model, state }
    }

    /// Fast-weight state of every block that has a TTT layer.
    pub fn fast_weights(&self) -> Vec<FastWeightState> {
        self.state.blocks.iter().filter_map(|b| b.fast.clone()).collect()
    }

    pub fn initial_fast_weights(&self) -> Vec<FastWeightState> {
        self.model.initial_state().blocks.into_iter().filter_map(|b| b.fast).collect()
    }

    /// Replace the carried fast weights, e.g. to resume from a snapshot. The
    /// snapshot's own initial parameters become the reset target.
    pub fn load_fast_weights(&mut self, states: Vec<FastWeightState>) -> Result<()> {
        let slots: Vec<&mut FastWeightState> = self.state.blocks.iter_mut().filter_map(|b| b.fast.as_mut()).collect();
        if slots.len() != states.len() {
            return Err(Error::Config(format!(
                "snapshot holds {} fast-weight layers, model has {}",
                states.len(),
                slots.len()
            )));
        }
        for (i, (slot, new)) in slots.iter().zip(&states).enumerate() {
            if slot.heads() != new.heads() || slot.num_values() != new.num_values() {
                return Err(Error::Config(format!("snapshot layer {i} does not match the model's shape")));
            }
        }
        for (slot, new) in slots.into_iter().zip(states) {
            *slot = new;
        }
        Ok(())
    }

    pub fn chunk_input(&self, scene: &SyntheticScene, plan: &PartitionPlan, m: usize) -> Result<ChunkInput> {
        let span = &plan.chunks[m];
        let grid = self.model.config.patch_grid();
        let features = scene.chunk_features(span, grid)?;
        if features.cols() != self.model.config.patch_features {
            return Err(Error::Config(format!(
                "scene frames give {} features per token, model expects {}",
                features.cols(),
                self.model.config.patch_features
            )));
        }
        Ok(ChunkInput {
            meta: ChunkMeta {
                chunk_index: m,
                frame_ids: span.frame_ids(),
                statuses: plan.statuses(m),
            },
            features,
        })
    }
}

impl ChunkPredictor for ModelPredictor {
    fn predict(&mut self, scene: &SyntheticScene, plan: &PartitionPlan, m: usize) -> Result<ChunkPrediction> {
        let input = self.chunk_input(scene, plan, m)?;
        let (out, next) = self.model.stack_forward(&input, &self.state)?;
        self.state = next;
        Ok(ChunkPrediction {
            chunk_index: m,
            frame_ids: input.meta.frame_ids,
            poses: out.poses,
            pointmaps: out.pointmaps,
        })
    }

    fn reset(&mut self) {
        self.state.reset();
    }

    fn state_bytes(&self) -> usize {
        self.state.byte_size()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct OraclePredictor {
    pub config: OracleConfig,
}

impl ChunkPredictor for OraclePredictor {
    fn predict(&mut self, scene: &SyntheticScene, plan: &PartitionPlan, m: usize) -> Result<ChunkPrediction> {
        oracle_chunk(scene, plan, m, &self.config)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamOptions {
    /// Restore memory before every chunk whose 0-based index is a positive multiple; 0 disables.
    pub reset_period: usize,
    pub align: AlignMode,
    pub scale_estimator: ScaleEstimator,
}

impl Default for StreamOptions {
    fn default() -> Self {
        Self {
            reset_period: 5,
            align: AlignMode::Rigid,
            scale_estimator: ScaleEstimator::Median,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChunkDiagnostics {
    pub chunk_index: usize,
    pub first_frame: usize,
    pub n_frames: usize,
    pub reset: bool,
    pub latency_seconds: f64,
    /// Carried state after the chunk.
    pub state_bytes: usize,
}

#[derive(Clone, Debug)]
pub struct StreamResult {
    pub predictions: Vec<ChunkPrediction>,
    pub aligned: AlignedStream,
    pub chunks: Vec<ChunkDiagnostics>,
}

impl StreamResult {
    pub fn peak_state_bytes(&self) -> usize {
        self.chunks.iter().map(|c| c.state_bytes).max().unwrap_or(0)
    }

    pub fn latencies(&self) -> Vec<f64> {
        self.chunks.iter().map(|c| c.latency_seconds).collect()
    }

    pub fn total_seconds(&self) -> f64 {
        self.chunks.iter().map(|c| c.latency_seconds).sum()
    }
}

pub fn run_stream<P: ChunkPredictor + ?Sized>(
    predictor: &mut P,
    scene: &SyntheticScene,
    plan: &PartitionPlan,
    opts: &StreamOptions,
) -> Result<StreamResult> {
    run_stream_observed(predictor, scene, plan, opts, |_, _| {})
}

/// Process chunks left to right, applying the reset policy before each one,
/// then stitch. `observe(m, predictor)` sees the predictor just before chunk
/// `m` is predicted.
pub fn run_stream_observed<P: ChunkPredictor + ?Sized>(
    predictor: &mut P,
    scene: &SyntheticScene,
    plan: &PartitionPlan,
    opts: &StreamOptions,
    mut observe: impl FnMut(usize, &P),
) -> Result<StreamResult> {
    if plan.n_frames > scene.len() {
        return Err(Error::Config(format!(
            "plan covers {} frames, scene has {}",
            plan.n_frames,
            scene.len()
        )));
    }
    let mut predictions = Vec::with_capacity(plan.len());
    let mut chunks = Vec::with_capacity(plan.len());
    for (m, span) in plan.chunks.iter().enumerate() {
        let reset = reset_due(m, opts.reset_period);
        if reset {
            predictor.reset();
        }
        observe(m, predictor);
        let t0 = Instant::now();
        let pred = predictor.predict(scene, plan, m)?;
        let latency_seconds = t0.elapsed().as_secs_f64();
        chunks.push(ChunkDiagnostics {
            chunk_index: m,
            first_frame: span.start,
            n_frames: span.len(),
            reset,
            latency_seconds,
            state_bytes: predictor.state_bytes(),
        });
        predictions.push(pred);
    }
    let aligned = stitch_stream_with(
        &predictions,
        &StitchOptions {
            mode: opts.align,
            scale_estimator: opts.scale_estimator,
            reset_period: opts.reset_period,
        },
    )?;
    Ok(StreamResult {
        predictions,
        aligned,
        chunks,
    })
}
