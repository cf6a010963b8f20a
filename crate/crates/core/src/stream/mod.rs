//! Chunked streaming: partitioning, synthetic scenes, oracle predictors, the
//! inference loop with its reset policy, and an associative-recall probe of
//! the fast-weight memory.

mod engine;
mod oracle;
mod partition;
mod recall;
mod scene;

pub use engine::{
    run_stream, run_stream_observed, ChunkDiagnostics, ChunkPredictor, ModelPredictor, OraclePredictor, StreamOptions,
    StreamResult,
};
pub use oracle::{gauge_poses, oracle_chunk, oracle_predict, GaugeMode, OracleConfig};
pub use partition::{partition_chunks, ChunkSpan, PartitionPlan};
pub use recall::{make_pairs, recall_task, recall_task_with, retrieval_error, RecallConfig, RecallPairs, RecallReport};
pub use scene::{
    features_per_token, frame_features, generate_scene, generate_scene_with, MotionModel, SceneConfig, SyntheticScene,
};
