//! JSON report bodies, one per subcommand. Each has a checked-in schema under
//! `schemas/`.

use hybridmem::eval::{AteAlignment, AteReport, BenchEntry, BenchOptions, SlopeFit};
use hybridmem::gradcheck::GradCheck;
use hybridmem::losses::LossBreakdown;
use hybridmem::{AlignMode, SimilaritySim3};
use serde::Serialize;

/// Keys whose values are wall-clock measurements and so differ between runs.
pub const TIMING_KEYS: [&str; 4] = ["latency_seconds", "total_seconds", "seconds", "chunk_latencies"];

#[derive(Clone, Debug, Serialize)]
pub struct AteSummary {
    pub alignment: AteAlignment,
    pub rmse: f64,
    pub mean: f64,
    pub max: f64,
    pub n_frames: usize,
}

impl From<&AteReport> for AteSummary {
    fn from(r: &AteReport) -> Self {
        Self {
            alignment: r.alignment,
            rmse: r.rmse,
            mean: r.mean,
            max: r.max,
            n_frames: r.n_frames,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ChunkRow {
    pub chunk_index: usize,
    pub first_frame: usize,
    pub n_frames: usize,
    pub reset: bool,
    pub state_bytes: usize,
    pub latency_seconds: Option<f64>,
    pub loss: Option<LossBreakdown>,
}

#[derive(Clone, Debug, Serialize)]
pub struct StreamReport {
    pub command: &'static str,
    pub seed: u64,
    /// `model`, `oracle` or `file`.
    pub predictor: String,
    pub motion: Option<String>,
    pub n_frames: usize,
    pub chunk_size: Option<usize>,
    pub overlap: Option<usize>,
    pub reset_period: usize,
    pub align: AlignMode,
    pub n_chunks: usize,
    pub ate: Option<AteSummary>,
    pub seam_errors: Vec<f64>,
    pub max_seam_error: f64,
    pub scales: Vec<f64>,
    pub peak_state_bytes: usize,
    pub chunks: Vec<ChunkRow>,
    pub total_seconds: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Reorthonormalized {
    pub pred: usize,
    pub gt: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct AteCommandReport {
    pub command: &'static str,
    pub alignment: AteAlignment,
    pub rmse: f64,
    pub mean: f64,
    pub max: f64,
    pub n_frames: usize,
    pub reorthonormalized: Reorthonormalized,
    pub transform: SimilaritySim3,
    pub frame_ids: Vec<usize>,
    pub errors: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct StitchReport {
    pub command: &'static str,
    pub mode: AlignMode,
    pub reset_period: usize,
    pub n_chunks: usize,
    pub n_frames: usize,
    pub seam_errors: Vec<f64>,
    pub max_seam_error: f64,
    pub scales: Vec<f64>,
    /// Row-major 3×4 chunk-to-world transforms.
    pub transforms: Vec<[f64; 12]>,
    pub ate: Option<AteSummary>,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchCommandReport {
    pub command: &'static str,
    pub options: BenchOptions,
    pub entries: Vec<BenchEntry>,
    pub slopes: Vec<SlopeFit>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckCommandReport {
    pub command: &'static str,
    pub base_seed: u64,
    pub seeds: usize,
    pub tolerance: f64,
    pub passed: bool,
    pub max_relative_error: f64,
    pub checks: Vec<GradCheck>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RecallCommandReport {
    pub command: &'static str,
    pub seed: u64,
    pub n_pairs: usize,
    pub dims: usize,
    pub passes: usize,
    pub chunk_pairs: usize,
    pub learning_rate: f64,
    pub momentum_coeff: f64,
    pub updates: usize,
    pub error_before: f64,
    pub error_after: f64,
    pub improved: bool,
    pub per_pass: Vec<f64>,
    pub state_values: usize,
}

/// Drop every timing field, recursively, so reports can be compared across runs.
pub fn strip_timing(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(map) => {
            map.retain(|k, _| !TIMING_KEYS.contains(&k.as_str()));
            map.values_mut().for_each(strip_timing);
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(strip_timing),
        _ => {}
    }
}
