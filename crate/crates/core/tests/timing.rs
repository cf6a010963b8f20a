//! Wall-clock checks. Kept in their own test binary so they do not share the
//! machine with the rest of the suite.

use hybridmem::eval::{bench_scaling, BenchConfig, BenchOptions};
use hybridmem::model::{HybridModel, StackConfig};
use hybridmem::stream::{generate_scene, partition_chunks, run_stream, ModelPredictor, MotionModel, StreamOptions};
use hybridmem::RngState;
use std::sync::Mutex;

static MACHINE: Mutex<()> = Mutex::new(());

#[test]
fn per_chunk_latency_is_flat_over_50_chunks() {
    let _guard = MACHINE.lock().unwrap_or_else(|e| e.into_inner());
    let (chunk, overlap) = (16, 2);
    let n = chunk + 49 * (chunk - overlap);
    let scene = generate_scene(n, MotionModel::Loop, 1).unwrap();
    let plan = partition_chunks(n, chunk, overlap).unwrap();
    assert_eq!(plan.len(), 50);
    let model = HybridModel::new(StackConfig::default(), &mut RngState::new(1)).unwrap();
    let opts = StreamOptions::default();

    // per-chunk minimum over repeated streams filters out scheduler noise
    let mut best = vec![f64::INFINITY; plan.len()];
    for _ in 0..5 {
        let mut p = ModelPredictor::new(model.clone());
        let r = run_stream(&mut p, &scene, &plan, &opts).unwrap();
        for (b, t) in best.iter_mut().zip(r.latencies()) {
            *b = b.min(t);
        }
    }
    let mut sorted = best.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    for (m, t) in best.iter().enumerate() {
        assert!(
            (t / median - 1.0).abs() <= 0.25,
            "chunk {m}: {t:.6}s vs median {median:.6}s"
        );
    }
}

#[test]
fn hybrid_is_linear_and_full_attention_quadratic() {
    let _guard = MACHINE.lock().unwrap_or_else(|e| e.into_inner());
    let r = bench_scaling(&[BenchConfig::Hybrid, BenchConfig::FullAttention], &BenchOptions::default()).unwrap();
    let hybrid = r.slope(BenchConfig::Hybrid).unwrap();
    let full = r.slope(BenchConfig::FullAttention).unwrap();
    assert!((0.8..=1.3).contains(&hybrid), "hybrid slope {hybrid}");
    assert!((1.7..=2.4).contains(&full), "full attention slope {full}");
    let bytes: Vec<usize> = r.entries_for(BenchConfig::Hybrid).map(|e| e.state_bytes).collect();
    assert!(bytes.iter().all(|b| *b == bytes[0]), "{bytes:?}");
}
