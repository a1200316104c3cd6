use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use streamrtr::tensor::{fiber_norms, fold, mode_n_product, unfold, unfold_t_matmul};
use streamrtr::{DenseTensor, Matrix};

fn tensor(n: usize) -> DenseTensor {
    DenseTensor::from_fn(&[n, n, n], |i| ((i[0] * 7 + i[1] * 3 + i[2]) as f64 * 0.01).sin()).expect("shape")
}

fn unfolding(c: &mut Criterion) {
    let mut group = c.benchmark_group("unfold_fold");
    for n in [20usize, 50] {
        let t = tensor(n);
        group.throughput(Throughput::Elements(t.len() as u64));
        for mode in 0..3 {
            group.bench_with_input(BenchmarkId::new(format!("mode{mode}"), n), &t, |b, t| {
                b.iter(|| fold(&unfold(t, mode).expect("mode"), mode, t.shape()).expect("fold"))
            });
        }
    }
    group.finish();
}

fn products(c: &mut Criterion) {
    let mut group = c.benchmark_group("products");
    let n = 50;
    let t = tensor(n);
    let l = Matrix::from_fn(n, 3, |i, k| ((i + k) as f64).cos());
    group.throughput(Throughput::Elements(t.len() as u64));
    for mode in 0..3 {
        group.bench_function(BenchmarkId::new("unfold_t_matmul", mode), |b| {
            b.iter(|| unfold_t_matmul(&t, mode, &l).expect("shape"))
        });
        group.bench_function(BenchmarkId::new("fiber_norms", mode), |b| b.iter(|| fiber_norms(&t, mode).expect("mode")));
    }
    let core = tensor(3);
    group.bench_function("tucker_3_to_50", |b| {
        b.iter(|| {
            let mut x = mode_n_product(&core, &l, 0).expect("product");
            x = mode_n_product(&x, &l, 1).expect("product");
            mode_n_product(&x, &l, 2).expect("product")
        })
    });
    group.finish();
}

criterion_group!(benches, unfolding, products);
criterion_main!(benches);
