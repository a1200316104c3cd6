use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use streamrtr_bench::{config, minibatches, warmed_engine};

fn step_scaling(c: &mut Criterion) {
    let mut group = c.benchmark_group("step/fixed_10_iterations");
    group.sample_size(20);
    let cfg = config(Some(10));
    for n in [10usize, 32, 100] {
        let batches = minibatches(n, 10, 8, 1.0);
        let s = (n * n * 10) as u64;
        group.throughput(Throughput::Elements(s));
        group.bench_with_input(BenchmarkId::from_parameter(s), &batches, |bch, batches| {
            let mut engine = warmed_engine(batches, &cfg, 4);
            let mut t = 4;
            bch.iter(|| {
                let (b, m) = &batches[t % batches.len()];
                t += 1;
                engine.step(b, m).expect("step")
            });
        });
    }
    group.finish();
}

fn step_to_convergence(c: &mut Criterion) {
    let mut group = c.benchmark_group("step/converged");
    group.sample_size(10);
    for (label, obs) in [("full", 1.0), ("obs0.9", 0.9)] {
        let batches = minibatches(50, 50, 6, obs);
        let cfg = config(None);
        group.bench_function(label, |bch| {
            let mut engine = warmed_engine(&batches, &cfg, 3);
            let mut t = 3;
            bch.iter(|| {
                let (b, m) = &batches[t % batches.len()];
                t += 1;
                engine.step(b, m).expect("step")
            });
        });
    }
    group.finish();
}

fn checkpoint(c: &mut Criterion) {
    let batches = minibatches(50, 1, 4, 1.0);
    let engine = warmed_engine(&batches, &config(None), 4);
    c.bench_function("state/serialize", |bch| bch.iter(|| engine.state().to_bytes()));
}

criterion_group!(benches, step_scaling, step_to_convergence, checkpoint);
criterion_main!(benches);
