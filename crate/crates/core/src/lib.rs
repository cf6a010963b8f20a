//! Hybrid-memory streaming reconstruction: chunk-wise test-time-training
//! fast weights, sliding-window attention across adjacent chunks, feedforward
//! chunk stitching, training losses and trajectory evaluation.

pub mod alignment;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod gradcheck;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod stream;
pub mod swa;
pub mod ttt;

pub use alignment::{AlignMode, AlignedStream, ChunkPrediction};
pub use error::{Error, Result};
pub use geometry::{Pointmap, PoseSE3, SimilaritySim3, Trajectory};
pub use model::{HybridModel, StackConfig};
pub use numerics::{AttentionMask, RngState, SwigluParams, Tensor};
