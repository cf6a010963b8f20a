//! Wall-time and state-size scaling of the streaming configurations.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::alignment::AlignMode;
use crate::error::{Error, Result};
use crate::model::{HybridModel, StackConfig};
use crate::numerics::RngState;
use crate::stream::{generate_scene, partition_chunks, run_stream, MotionModel, ModelPredictor, StreamOptions};
use crate::ttt::TttConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchConfig {
    /// Fast weights plus SWA, chunked.
    Hybrid,
    SwaOnly,
    TttOnly,
    /// No memory layers; the whole sequence is one chunk.
    FullAttention,
}

impl BenchConfig {
    pub const ALL: [BenchConfig; 4] = [Self::Hybrid, Self::SwaOnly, Self::TttOnly, Self::FullAttention];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Hybrid => "hybrid",
            Self::SwaOnly => "swa_only",
            Self::TttOnly => "ttt_only",
            Self::FullAttention => "full_attention",
        }
    }
}

impl std::str::FromStr for BenchConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown bench config `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchOptions {
    /// Sequence lengths in frames.
    pub lengths: Vec<usize>,
    pub chunk_size: usize,
    pub overlap: usize,
    /// Timed runs per point; the median is reported.
    pub runs: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub n_blocks: usize,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            lengths: vec![64, 128, 256, 512],
            chunk_size: 16,
            overlap: 2,
            runs: 3,
            model_dim: 32,
            heads: 2,
            n_blocks: 4,
            seed: 0,
        }
    }
}

impl BenchOptions {
    pub fn validate(&self) -> Result<()> {
        if self.lengths.len() < 3 {
            return Err(Error::Config("scaling fits need at least 3 lengths".into()));
        }
        if self.lengths.windows(2).any(|w| w[0] >= w[1]) || self.lengths[0] == 0 {
            return Err(Error::Config("lengths must be positive and strictly increasing".into()));
        }
        let span = *self.lengths.last().expect("non-empty") as f64 / self.lengths[0] as f64;
        if span < 4.0 {
            return Err(Error::Config(format!("lengths span {span:.2}×, need at least 4×")));
        }
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        partition_chunks(self.chunk_size, self.chunk_size, self.overlap).map(|_| ())
    }

    pub fn stack_config(&self, kind: BenchConfig) -> StackConfig {
        let (swa, ttt) = match kind {
            BenchConfig::Hybrid => (true, true),
            BenchConfig::SwaOnly => (true, false),
            BenchConfig::TttOnly => (false, true),
            BenchConfig::FullAttention => (false, false),
        };
        let depths = (1..=self.n_blocks).filter(|d| d % 2 == 0).collect();
        StackConfig {
            model_dim: self.model_dim,
            n_blocks: self.n_blocks,
            heads: self.heads,
            swa_depths: if swa { depths } else { Vec::new() },
            ttt_enabled: ttt,
            ttt: TttConfig {
                head_dim: (self.model_dim / self.heads).max(1),
                ..TttConfig::default()
            },
            ..StackConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchEntry {
    pub config: BenchConfig,
    pub length: usize,
    /// Median wall time of one full stream.
    pub seconds: f64,
    /// Peak of carried state plus the current chunk's tokens.
    pub state_bytes: usize,
    pub chunk_latencies: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub config: BenchConfig,
    pub slope: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub options: BenchOptions,
    pub entries: Vec<BenchEntry>,
    pub slopes: Vec<SlopeFit>,
}

impl BenchReport {
    pub fn slope(&self, config: BenchConfig) -> Option<f64> {
        self.slopes.iter().find(|s| s.config == config).map(|s| s.slope)
    }

    pub fn entries_for(&self, config: BenchConfig) -> impl Iterator<Item = &BenchEntry> {
        self.entries.iter().filter(move |e| e.config == config)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("length,config,seconds,state_bytes\n");
        for e in &self.entries {
            out.push_str(&format!("{},{},{:.9},{}\n", e.length, e.config.name(), e.seconds, e.state_bytes));
        }
        out
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Time one configuration at one length: a discarded warm-up, then the median
/// of `runs` streams.
pub fn bench_point(kind: BenchConfig, length: usize, opts: &BenchOptions) -> Result<BenchEntry> {
    let cfg = opts.stack_config(kind);
    let token_bytes_per_frame = 8 * cfg.tokens_per_frame * cfg.model_dim;
    let model = HybridModel::new(cfg, &mut RngState::new(opts.seed))?;
    let scene = generate_scene(length, MotionModel::Straight, opts.seed)?;
    let plan = if kind == BenchConfig::FullAttention {
        partition_chunks(length, length.max(2), 1)?
    } else {
        partition_chunks(length, opts.chunk_size, opts.overlap)?
    };
    let stream_opts = StreamOptions {
        align: AlignMode::Rigid,
        ..StreamOptions::default()
    };
    let mut times = Vec::with_capacity(opts.runs);
    let mut last = None;
    for run in 0..=opts.runs {
        let mut predictor = ModelPredictor::new(model.clone());
        let t0 = Instant::now();
        let result = run_stream(&mut predictor, &scene, &plan, &stream_opts)?;
        let dt = t0.elapsed().as_secs_f64();
        if run > 0 {
            times.push(dt);
            last = Some(result);
        }
    }
    let result = last.expect("runs ≥ 1");
    let state_bytes = result
        .chunks
        .iter()
        .map(|c| c.state_bytes + c.n_frames * token_bytes_per_frame)
        .max()
        .unwrap_or(0);
    Ok(BenchEntry {
        config: kind,
        length,
        seconds: median(times),
        state_bytes,
        chunk_latencies: result.latencies(),
    })
}

pub fn bench_scaling(configs: &[BenchConfig], opts: &BenchOptions) -> Result<BenchReport> {
    opts.validate()?;
    if configs.is_empty() {
        return Err(Error::Config("no bench configurations selected".into()));
    }
    let mut entries = Vec::new();
    let mut slopes = Vec::new();
    for &kind in configs {
        let mut points = Vec::new();
        for &n in &opts.lengths {
            let e = bench_point(kind, n, opts)?;
            points.push((n as f64, e.seconds.max(f64::MIN_POSITIVE)));
            entries.push(e);
        }
        slopes.push(SlopeFit {
            config: kind,
            slope: loglog_slope(&points),
        });
    }
    Ok(BenchReport {
        options: opts.clone(),
        entries,
        slopes,
    })
}
