//! Residual hybrid blocks and the prediction stack built from them.

mod block;
mod stack;

pub use block::{block_forward, chunk_attention, frame_attention, BlockParams, BlockState, ChunkMeta, TttLayer};
pub use stack::{
    rotation_from_6d, ChunkInput, HybridModel, LinearHead, PredictionHeads, StackConfig, StackOutput, StreamState,
};
