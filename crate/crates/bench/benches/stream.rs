use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use hybridmem::alignment::AlignMode;
use hybridmem::eval::{BenchConfig, BenchOptions};
use hybridmem::stream::{run_stream, StreamOptions};
use hybridmem_bench::StreamFixture;

fn streams(c: &mut Criterion) {
    let opts = BenchOptions::default();
    let stream_opts = StreamOptions {
        align: AlignMode::Rigid,
        ..StreamOptions::default()
    };
    for kind in BenchConfig::ALL {
        let mut g = c.benchmark_group(format!("stream/{}", kind.name()));
        g.sample_size(10);
        for length in [64, 128, 256] {
            let f = StreamFixture::new(kind, length, &opts).unwrap();
            g.throughput(Throughput::Elements(length as u64));
            g.bench_with_input(BenchmarkId::from_parameter(length), &length, |b, _| {
                b.iter_batched(
                    || f.predictor(),
                    |mut p| run_stream(&mut p, &f.scene, &f.plan, &stream_opts).unwrap(),
                    criterion::BatchSize::LargeInput,
                )
            });
        }
        g.finish();
    }
}

criterion_group!(benches, streams);
criterion_main!(benches);
