use hybridmem::alignment::{stitch_stream, stitch_stream_with, AlignMode, ScaleEstimator, StitchOptions};
use hybridmem::eval::{compute_ate, AteAlignment};
use hybridmem::model::{HybridModel, StackConfig};
use hybridmem::stream::{
    gauge_poses, generate_scene, oracle_predict, partition_chunks, run_stream, run_stream_observed, ChunkSpan, GaugeMode,
    ModelPredictor, MotionModel, OracleConfig, OraclePredictor, StreamOptions, SyntheticScene,
};
use hybridmem::ttt::{write_snapshot, TttConfig};
use hybridmem::RngState;

fn model(seed: u64) -> HybridModel {
    let cfg = StackConfig {
        model_dim: 16,
        n_blocks: 2,
        heads: 2,
        swa_depths: vec![2],
        ttt: TttConfig {
            head_dim: 8,
            ..TttConfig::default()
        },
        ..StackConfig::default()
    };
    HybridModel::new(cfg, &mut RngState::new(seed)).unwrap()
}

fn prefix(scene: &SyntheticScene, end: usize) -> hybridmem::geometry::Trajectory {
    scene.sub_trajectory(&ChunkSpan { index: 0, start: 0, end })
}

#[test]
fn identical_seeds_give_identical_streams() {
    let scene = generate_scene(40, MotionModel::Turn, 1).unwrap();
    let plan = partition_chunks(40, 8, 2).unwrap();
    let run = || {
        let mut p = ModelPredictor::new(model(4));
        run_stream(&mut p, &scene, &plan, &StreamOptions::default()).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.predictions, b.predictions);
    assert_eq!(a.aligned.trajectory, b.aligned.trajectory);
    assert_eq!(
        a.chunks.iter().map(|c| c.state_bytes).collect::<Vec<_>>(),
        b.chunks.iter().map(|c| c.state_bytes).collect::<Vec<_>>()
    );
}

#[test]
fn later_frames_do_not_affect_earlier_chunks() {
    let scene = generate_scene(50, MotionModel::Straight, 2).unwrap();
    let plan = partition_chunks(50, 8, 2).unwrap();
    let m = 3;
    let mut edited = scene.clone();
    for pm in &mut edited.pointmaps[plan.chunks[m].end..] {
        *pm = pm.scaled(1.7);
    }
    let opts = StreamOptions {
        reset_period: 2,
        ..StreamOptions::default()
    };
    let a = run_stream(&mut ModelPredictor::new(model(5)), &scene, &plan, &opts).unwrap();
    let b = run_stream(&mut ModelPredictor::new(model(5)), &edited, &plan, &opts).unwrap();
    assert_eq!(a.predictions[..=m], b.predictions[..=m]);
    assert_eq!(a.aligned.chunk_poses[..=m], b.aligned.chunk_poses[..=m]);
    assert_ne!(a.predictions[m + 1], b.predictions[m + 1]);
}

#[test]
fn carried_state_is_constant_over_100_chunks() {
    let (chunk, overlap) = (6, 2);
    let n = chunk + 99 * (chunk - overlap);
    let scene = generate_scene(n, MotionModel::Loop, 3).unwrap();
    let plan = partition_chunks(n, chunk, overlap).unwrap();
    assert_eq!(plan.len(), 100);
    let mut p = ModelPredictor::new(model(6));
    let r = run_stream(&mut p, &scene, &plan, &StreamOptions::default()).unwrap();
    let first = r.chunks[0].state_bytes;
    assert!(first > 0);
    assert!(r.chunks.iter().all(|c| c.state_bytes == first));
}

#[test]
fn resets_restore_the_initial_snapshot_bitwise() {
    let scene = generate_scene(70, MotionModel::Turn, 4).unwrap();
    let plan = partition_chunks(70, 6, 1).unwrap();
    let mut p = ModelPredictor::new(model(7));
    let mut initial = Vec::new();
    write_snapshot(&p.initial_fast_weights(), &mut initial).unwrap();
    let mut matches = Vec::new();
    let opts = StreamOptions {
        reset_period: 5,
        ..StreamOptions::default()
    };
    run_stream_observed(&mut p, &scene, &plan, &opts, |m, p| {
        let mut now = Vec::new();
        write_snapshot(&p.fast_weights(), &mut now).unwrap();
        if now == initial {
            matches.push(m + 1);
        }
    })
    .unwrap();
    assert_eq!(matches, vec![1, 6, 11]);
}

#[test]
fn zero_noise_oracles_stitch_exactly() {
    for (gauge, mode) in [
        (GaugeMode::PerChunkSe3, AlignMode::Rigid),
        (GaugeMode::PerChunkSim3, AlignMode::Similarity),
    ] {
        for seed in 0..5 {
            let scene = generate_scene(8 + 9 * 6, MotionModel::Loop, seed).unwrap();
            let plan = partition_chunks(scene.len(), 8, 2).unwrap();
            assert_eq!(plan.len(), 10);
            let cfg = OracleConfig {
                gauge_mode: gauge,
                seed: 100 + seed,
                ..OracleConfig::default()
            };
            let preds = oracle_predict(&scene, &plan, &cfg).unwrap();
            let st = stitch_stream(&preds, mode).unwrap();
            let ate = compute_ate(&st.trajectory, &scene.trajectory, AteAlignment::Sim3).unwrap();
            assert!(ate.rmse < 1e-9, "{gauge:?}: {}", ate.rmse);
            let expect = gauge_poses(&scene.poses(), &cfg.gauge(0));
            for ((_, p), q) in st.trajectory.entries().iter().zip(&expect) {
                assert!(p.max_abs_diff(q) < 1e-9);
            }
        }
    }
}

#[test]
fn reset_boundaries_stay_seamless_without_per_seam_alignment() {
    let scene = generate_scene(6 + 13 * 5, MotionModel::Turn, 5).unwrap();
    let plan = partition_chunks(scene.len(), 6, 1).unwrap();
    let mut oracle = OraclePredictor {
        config: OracleConfig {
            gauge_mode: GaugeMode::PerChunkSe3,
            gauge_period: 5,
            seed: 8,
            ..OracleConfig::default()
        },
    };
    let opts = StreamOptions {
        reset_period: 5,
        align: AlignMode::None,
        ..StreamOptions::default()
    };
    let r = run_stream(&mut oracle, &scene, &plan, &opts).unwrap();
    let seams = r.aligned.seam_errors();
    assert!(seams.iter().all(|e| *e < 1e-9), "{seams:?}");
    // without the re-anchoring at resets the gauge change would show up
    let stale = stitch_stream_with(
        &r.predictions,
        &StitchOptions {
            mode: AlignMode::None,
            reset_period: 0,
            scale_estimator: ScaleEstimator::Median,
        },
    )
    .unwrap();
    assert!(stale.seam_errors()[4] > 1e-3);
}

#[test]
fn scale_noise_makes_similarity_stitching_drift() {
    let mut wins = 0;
    let counts = [5, 10, 20, 50];
    let mut ates = vec![Vec::new(); counts.len()];
    for seed in 0..50 {
        let scene = generate_scene(16 + 49 * 14, MotionModel::Turn, seed).unwrap();
        let plan = partition_chunks(scene.len(), 16, 2).unwrap();
        let cfg = OracleConfig {
            gauge_mode: GaugeMode::PerChunkSim3,
            sigma_s: 0.02,
            seed,
            ..OracleConfig::default()
        };
        let preds = oracle_predict(&scene, &plan, &cfg).unwrap();
        let mut row = Vec::new();
        for (i, &k) in counts.iter().enumerate() {
            let st = stitch_stream(&preds[..k], AlignMode::Similarity).unwrap();
            let gt = prefix(&scene, plan.chunks[k - 1].end);
            let rmse = compute_ate(&st.trajectory, &gt, AteAlignment::Sim3).unwrap().rmse;
            ates[i].push(rmse);
            row.push(rmse);
        }
        if row[3] > row[0] {
            wins += 1;
        }
    }
    assert!(wins >= 45, "{wins}/50");
    let medians: Vec<f64> = ates
        .into_iter()
        .map(|mut v| {
            v.sort_by(f64::total_cmp);
            v[v.len() / 2]
        })
        .collect();
    assert!(medians.windows(2).all(|w| w[0] <= w[1]), "{medians:?}");
}
