use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use hybridmem::alignment::{stitch_stream_with, StitchOptions};
use hybridmem::eval::{
    bench_scaling, compute_ate, parse_pose_file, read_prediction_dump, write_pose_file, write_prediction_dump,
    AteAlignment, AteReport, BenchOptions,
};
use hybridmem::gradcheck::{run_gradcheck, GradcheckReport, GRADCHECK_TOL};
use hybridmem::losses::{adjacent_pairs, total_loss, LossWeights, SupervisionBatch};
use hybridmem::stream::{
    generate_scene, partition_chunks, recall_task_with, run_stream, ChunkPredictor, ModelPredictor, OracleConfig,
    OraclePredictor, RecallConfig, StreamOptions, SyntheticScene,
};
use hybridmem::ttt::{read_snapshot, write_snapshot};
use hybridmem::{AlignedStream, ChunkPrediction, Error, HybridModel, RngState, StackConfig, Trajectory};
use serde::Serialize;

use crate::report::*;
use crate::{resolve_seed, AteArgs, BenchArgs, Failure, GradcheckArgs, PredictorKind, RecallArgs, StitchArgs, StreamArgs};

type CmdResult = Result<(), Failure>;

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Invalid(format!("{}: {e}", path.display()))
}

fn write_json<T: Serialize>(report: &T, path: Option<&Path>) -> CmdResult {
    let Some(path) = path else {
        return Ok(());
    };
    let mut text = serde_json::to_string_pretty(report).map_err(|e| Failure::Invalid(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_failure(path, e))
}

fn out(stdout: &mut dyn Write, line: std::fmt::Arguments<'_>) {
    let _ = stdout.write_fmt(line);
    let _ = stdout.write_all(b"\n");
}

macro_rules! say {
    ($w:expr, $($arg:tt)*) => { out($w, format_args!($($arg)*)) };
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

/// Restrict `gt` to the frames present in `pred`.
fn matching_frames(gt: &Trajectory, pred: &Trajectory) -> Result<Trajectory, Error> {
    let ids: BTreeSet<usize> = pred.frame_ids().into_iter().collect();
    Trajectory::new(gt.entries().iter().filter(|(id, _)| ids.contains(id)).copied().collect())
}

/// ATE, or `None` with a warning when the prediction is too degenerate to align.
fn optional_ate(pred: &Trajectory, gt: &Trajectory, alignment: AteAlignment) -> Result<Option<AteReport>, Failure> {
    match compute_ate(pred, gt, alignment) {
        Ok(r) => Ok(Some(r)),
        Err(Error::Degenerate(m)) => {
            log::warn!("ATE skipped: {m}");
            Ok(None)
        }
        Err(e) => Err(e.into()),
    }
}

fn load_gt(path: &Path) -> Result<Trajectory, Failure> {
    let f = parse_pose_file(path)?;
    if f.reorthonormalized > 0 {
        log::warn!("{}: re-orthonormalized {} rotations", path.display(), f.reorthonormalized);
    }
    Ok(f.trajectory)
}

fn chunk_loss(scene: &SyntheticScene, p: &ChunkPrediction) -> Result<Option<hybridmem::losses::LossBreakdown>, Failure> {
    if p.pointmaps.len() != p.frame_ids.len() {
        return Ok(None);
    }
    let batch = SupervisionBatch {
        pred_pointmaps: p.pointmaps.clone(),
        gt_pointmaps: p
            .frame_ids
            .iter()
            .map(|&f| {
                let (h, w) = (p.pointmaps[0].height, p.pointmaps[0].width);
                scene.pointmaps[f].downsample(h, w)
            })
            .collect::<Result<_, _>>()?,
        pred_poses: p.poses.clone(),
        gt_poses: p.frame_ids.iter().map(|&f| scene.trajectory.entries()[f].1).collect(),
        pairs: adjacent_pairs(p.frame_ids.len()),
    };
    Ok(Some(total_loss(&batch, &LossWeights::default())?))
}

fn print_stream_summary(stdout: &mut dyn Write, r: &StreamReport) {
    say!(
        stdout,
        "stream: {} frames in {} chunks ({} predictor, align {:?}, reset period {})",
        r.n_frames,
        r.n_chunks,
        r.predictor,
        r.align,
        r.reset_period
    );
    match &r.ate {
        Some(a) => say!(stdout, "ATE ({:?}): rmse {:.6e}  mean {:.6e}  max {:.6e}", a.alignment, a.rmse, a.mean, a.max),
        None => say!(stdout, "ATE: not available"),
    }
    say!(stdout, "max seam error: {:.3e}", r.max_seam_error);
    say!(stdout, "peak carried state: {} bytes", r.peak_state_bytes);
    if let Some(t) = r.total_seconds {
        say!(stdout, "predict time: {t:.3} s");
    }
}

fn aligned_fields(aligned: &AlignedStream) -> (Vec<f64>, f64, Vec<f64>) {
    let seams = aligned.seam_errors();
    let max = max_of(&seams);
    (seams, max, aligned.scales.clone())
}

pub fn stream(a: &StreamArgs, stdout: &mut dyn Write) -> CmdResult {
    let seed = resolve_seed(a.seed)?;
    if let Some(input) = &a.input {
        return replay_stream(a, input, seed, stdout);
    }
    let mut config = match &a.config {
        Some(p) => StackConfig::from_path(p)?,
        None => StackConfig::default(),
    };
    let reset_period = a.reset_period.unwrap_or(config.ttt.reset_period);
    config.ttt.reset_period = reset_period;
    let scene = generate_scene(a.frames, a.motion, seed)?;
    let plan = partition_chunks(a.frames, a.chunk_size, a.overlap)?;
    let opts = StreamOptions {
        reset_period,
        align: a.align,
        ..StreamOptions::default()
    };

    let (result, predictor_name) = match a.predictor {
        PredictorKind::Model => {
            let model = HybridModel::new(config, &mut RngState::new(seed))?;
            let mut p = ModelPredictor::new(model);
            if let Some(path) = &a.load_state {
                let f = std::fs::File::open(path).map_err(|e| io_failure(path, e))?;
                p.load_fast_weights(read_snapshot(std::io::BufReader::new(f))?)?;
            }
            let r = run_stream(&mut p, &scene, &plan, &opts)?;
            if let Some(path) = &a.save_state {
                let f = std::fs::File::create(path).map_err(|e| io_failure(path, e))?;
                write_snapshot(&p.fast_weights(), std::io::BufWriter::new(f))?;
            }
            (r, "model")
        }
        PredictorKind::Oracle => {
            if a.load_state.is_some() || a.save_state.is_some() {
                return Err(Failure::Invalid("the oracle predictor carries no fast weights".into()));
            }
            let config = OracleConfig {
                gauge_mode: a.gauge,
                sigma_t: a.sigma_t,
                sigma_r: a.sigma_r,
                sigma_s: a.sigma_s,
                gauge_period: a.gauge_period,
                seed,
            };
            config.validate()?;
            let mut p = OraclePredictor { config };
            let r = run_stream(&mut p as &mut dyn ChunkPredictor, &scene, &plan, &opts)?;
            (r, "oracle")
        }
    };

    if let Some(path) = &a.dump {
        write_prediction_dump(&result.predictions, path)?;
    }
    if let Some(path) = &a.poses_out {
        write_pose_file(&result.aligned.trajectory, path)?;
    }
    let gt = matching_frames(&scene.trajectory, &result.aligned.trajectory)?;
    let ate = optional_ate(&result.aligned.trajectory, &gt, AteAlignment::Sim3)?;
    let mut chunks = Vec::with_capacity(result.chunks.len());
    for (d, p) in result.chunks.iter().zip(&result.predictions) {
        chunks.push(ChunkRow {
            chunk_index: d.chunk_index,
            first_frame: d.first_frame,
            n_frames: d.n_frames,
            reset: d.reset,
            state_bytes: d.state_bytes,
            latency_seconds: Some(d.latency_seconds),
            loss: chunk_loss(&scene, p)?,
        });
    }
    let (seam_errors, max_seam_error, scales) = aligned_fields(&result.aligned);
    let report = StreamReport {
        command: "stream",
        seed,
        predictor: predictor_name.into(),
        motion: Some(format!("{:?}", a.motion).to_lowercase()),
        n_frames: a.frames,
        chunk_size: Some(a.chunk_size),
        overlap: Some(a.overlap),
        reset_period,
        align: a.align,
        n_chunks: plan.len(),
        ate: ate.as_ref().map(AteSummary::from),
        seam_errors,
        max_seam_error,
        scales,
        peak_state_bytes: result.peak_state_bytes(),
        chunks,
        total_seconds: Some(result.total_seconds()),
    };
    print_stream_summary(stdout, &report);
    write_json(&report, a.out.as_deref())
}

fn replay_stream(a: &StreamArgs, input: &Path, seed: u64, stdout: &mut dyn Write) -> CmdResult {
    let predictions = read_prediction_dump(input)?;
    let reset_period = a.reset_period.unwrap_or(hybridmem::ttt::TttConfig::default().reset_period);
    let aligned = stitch_stream_with(
        &predictions,
        &StitchOptions {
            mode: a.align,
            reset_period,
            ..StitchOptions::default()
        },
    )?;
    if let Some(path) = &a.poses_out {
        write_pose_file(&aligned.trajectory, path)?;
    }
    let ate = match &a.gt {
        Some(path) => {
            let gt = matching_frames(&load_gt(path)?, &aligned.trajectory)?;
            optional_ate(&aligned.trajectory, &gt, AteAlignment::Sim3)?
        }
        None => None,
    };
    let chunks = predictions
        .iter()
        .map(|p| ChunkRow {
            chunk_index: p.chunk_index,
            first_frame: p.frame_ids.first().copied().unwrap_or(0),
            n_frames: p.frame_ids.len(),
            reset: hybridmem::ttt::reset_due(p.chunk_index, reset_period),
            state_bytes: 0,
            latency_seconds: None,
            loss: None,
        })
        .collect();
    let (seam_errors, max_seam_error, scales) = aligned_fields(&aligned);
    let report = StreamReport {
        command: "stream",
        seed,
        predictor: "file".into(),
        motion: None,
        n_frames: aligned.trajectory.len(),
        chunk_size: None,
        overlap: None,
        reset_period,
        align: a.align,
        n_chunks: predictions.len(),
        ate: ate.as_ref().map(AteSummary::from),
        seam_errors,
        max_seam_error,
        scales,
        peak_state_bytes: 0,
        chunks,
        total_seconds: None,
    };
    print_stream_summary(stdout, &report);
    write_json(&report, a.out.as_deref())
}

pub fn ate(a: &AteArgs, stdout: &mut dyn Write) -> CmdResult {
    let pred = parse_pose_file(&a.pred)?;
    let gt = parse_pose_file(&a.gt)?;
    for (name, f) in [("pred", &pred), ("gt", &gt)] {
        if f.reorthonormalized > 0 {
            log::warn!("{name}: re-orthonormalized {} rotations", f.reorthonormalized);
        }
    }
    let r = compute_ate(&pred.trajectory, &gt.trajectory, a.alignment)?;
    say!(stdout, "ATE ({:?}) over {} frames", r.alignment, r.n_frames);
    say!(stdout, "rmse {:.6e}  mean {:.6e}  max {:.6e}", r.rmse, r.mean, r.max);
    say!(stdout, "alignment scale {:.6}", r.transform.scale);
    if pred.reorthonormalized + gt.reorthonormalized > 0 {
        say!(
            stdout,
            "re-orthonormalized rotations: pred {}, gt {}",
            pred.reorthonormalized,
            gt.reorthonormalized
        );
    }
    let report = AteCommandReport {
        command: "ate",
        alignment: r.alignment,
        rmse: r.rmse,
        mean: r.mean,
        max: r.max,
        n_frames: r.n_frames,
        reorthonormalized: Reorthonormalized {
            pred: pred.reorthonormalized,
            gt: gt.reorthonormalized,
        },
        transform: r.transform,
        frame_ids: r.frame_ids,
        errors: r.errors,
    };
    write_json(&report, a.out.as_deref())
}

pub fn stitch(a: &StitchArgs, stdout: &mut dyn Write) -> CmdResult {
    let predictions = read_prediction_dump(&a.chunks)?;
    let aligned = stitch_stream_with(
        &predictions,
        &StitchOptions {
            mode: a.mode,
            reset_period: a.reset_period,
            ..StitchOptions::default()
        },
    )?;
    if let Some(path) = &a.poses_out {
        write_pose_file(&aligned.trajectory, path)?;
    }
    let ate = match &a.gt {
        Some(path) => {
            let gt = matching_frames(&load_gt(path)?, &aligned.trajectory)?;
            Some(compute_ate(&aligned.trajectory, &gt, a.alignment)?)
        }
        None => None,
    };
    let (seam_errors, max_seam_error, scales) = aligned_fields(&aligned);
    let report = StitchReport {
        command: "stitch",
        mode: a.mode,
        reset_period: a.reset_period,
        n_chunks: predictions.len(),
        n_frames: aligned.trajectory.len(),
        seam_errors,
        max_seam_error,
        scales,
        transforms: aligned.transforms.iter().map(|t| t.to_row_major_3x4()).collect(),
        ate: ate.as_ref().map(AteSummary::from),
    };
    say!(
        stdout,
        "stitched {} chunks into {} frames ({:?})",
        report.n_chunks,
        report.n_frames,
        report.mode
    );
    say!(stdout, "max seam error: {:.3e}", report.max_seam_error);
    if let Some(r) = &report.ate {
        say!(stdout, "ATE ({:?}): rmse {:.6e}", r.alignment, r.rmse);
    }
    write_json(&report, a.out.as_deref())
}

pub fn bench(a: &BenchArgs, stdout: &mut dyn Write) -> CmdResult {
    let opts = BenchOptions {
        lengths: a.lengths.clone(),
        chunk_size: a.chunk_size,
        overlap: a.overlap,
        runs: a.runs,
        model_dim: a.dim,
        heads: a.heads,
        n_blocks: a.blocks,
        seed: resolve_seed(a.seed)?,
    };
    let r = bench_scaling(&a.configs, &opts)?;
    if let Some(path) = &a.csv {
        std::fs::write(path, r.to_csv()).map_err(|e| io_failure(path, e))?;
    }
    say!(stdout, "{:<16}{:>8}{:>14}{:>14}", "config", "length", "seconds", "state_bytes");
    for e in &r.entries {
        say!(stdout, "{:<16}{:>8}{:>14.6}{:>14}", e.config.name(), e.length, e.seconds, e.state_bytes);
    }
    for s in &r.slopes {
        say!(stdout, "{}: log-log slope {:.3}", s.config.name(), s.slope);
    }
    let report = BenchCommandReport {
        command: "bench",
        options: r.options,
        entries: r.entries,
        slopes: r.slopes,
    };
    write_json(&report, a.out.as_deref())
}

/// Run the sweep with one gradcheck per seed spread over `jobs` workers,
/// keeping the results in seed order.
fn parallel_gradcheck(base: u64, seeds: usize, jobs: usize) -> Result<GradcheckReport, Error> {
    let jobs = jobs.clamp(1, seeds.max(1));
    let per_seed: Vec<Result<GradcheckReport, Error>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..jobs)
            .map(|w| {
                s.spawn(move || {
                    (w..seeds)
                        .step_by(jobs)
                        .map(|i| (i, run_gradcheck(base.wrapping_add(i as u64), 1)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        let mut all: Vec<_> = handles
            .into_iter()
            .flat_map(|h| h.join().expect("gradcheck worker panicked"))
            .collect();
        all.sort_by_key(|(i, _)| *i);
        all.into_iter().map(|(_, r)| r).collect()
    });
    let mut checks = Vec::new();
    for r in per_seed {
        checks.extend(r?.checks);
    }
    let max_relative_error = checks.iter().map(|c| c.relative_error).fold(0.0, f64::max);
    Ok(GradcheckReport {
        tolerance: GRADCHECK_TOL,
        passed: checks.iter().all(|c| c.relative_error < GRADCHECK_TOL),
        checks,
        max_relative_error,
    })
}

pub fn gradcheck(a: &GradcheckArgs, stdout: &mut dyn Write) -> CmdResult {
    if a.seeds == 0 {
        return Err(Failure::Invalid("--seeds must be at least 1".into()));
    }
    let base = resolve_seed(a.seed)?;
    let jobs = a
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let r = parallel_gradcheck(base, a.seeds, jobs)?;
    for c in &r.checks {
        let mark = if c.relative_error < r.tolerance { "ok" } else { "FAIL" };
        say!(
            stdout,
            "{mark:<5}{:<28} seed {:<6} {:>6} entries  rel err {:.3e}",
            c.name,
            c.seed,
            c.entries,
            c.relative_error
        );
    }
    say!(
        stdout,
        "{} checks, max relative error {:.3e} (tolerance {:.0e})",
        r.checks.len(),
        r.max_relative_error,
        r.tolerance
    );
    let report = GradcheckCommandReport {
        command: "gradcheck",
        base_seed: base,
        seeds: a.seeds,
        tolerance: r.tolerance,
        passed: r.passed,
        max_relative_error: r.max_relative_error,
        checks: r.checks,
    };
    write_json(&report, a.out.as_deref())?;
    if report.passed {
        Ok(())
    } else {
        Err(Failure::Numerical(format!(
            "gradient mismatch: max relative error {:.3e} exceeds {:.0e}",
            report.max_relative_error, report.tolerance
        )))
    }
}

pub fn recall(a: &RecallArgs, stdout: &mut dyn Write) -> CmdResult {
    let cfg = RecallConfig {
        n_pairs: a.pairs,
        dims: a.dims,
        chunk_pairs: a.chunk_pairs,
        passes: a.passes,
        learning_rate: a.lr,
        momentum_coeff: a.momentum,
        seed: resolve_seed(a.seed)?,
        ..RecallConfig::default()
    };
    let (_, r) = recall_task_with(&cfg)?;
    let report = RecallCommandReport {
        command: "recall",
        seed: cfg.seed,
        n_pairs: r.n_pairs,
        dims: r.dims,
        passes: cfg.passes,
        chunk_pairs: cfg.chunk_pairs,
        learning_rate: cfg.learning_rate,
        momentum_coeff: cfg.momentum_coeff,
        updates: r.updates,
        error_before: r.error_before,
        error_after: r.error_after,
        improved: r.error_after < r.error_before,
        per_pass: r.per_pass,
        state_values: r.state_values,
    };
    say!(
        stdout,
        "recall of {} pairs in {} dims: error {:.6} -> {:.6} after {} updates",
        report.n_pairs,
        report.dims,
        report.error_before,
        report.error_after,
        report.updates
    );
    write_json(&report, a.out.as_deref())
}
