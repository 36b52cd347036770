use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use dreamforge_core::metrics::{csfd_from_vectors, cssc_from_labels};

fn faces(n: usize, dim: usize) -> Vec<(usize, Vec<f64>)> {
    (0..n)
        .map(|i| {
            let v = (0..dim).map(|d| ((i * 31 + d * 7) % 17) as f64 - 8.0).collect();
            (i + 1, v)
        })
        .collect()
}

fn csfd(c: &mut Criterion) {
    let mut group = c.benchmark_group("csfd_from_vectors");
    for n in [4, 14, 30] {
        let input = faces(n, 512);
        group.bench_with_input(BenchmarkId::from_parameter(n), &input, |b, input| {
            b.iter(|| csfd_from_vectors(black_box(input)).unwrap())
        });
    }
    group.finish();
}

fn cssc(c: &mut Criterion) {
    let labels: Vec<&str> = (0..30)
        .map(|i| ["anime", "realism", "origami"][i % 3])
        .collect();
    c.bench_function("cssc_from_labels/30", |b| {
        b.iter(|| cssc_from_labels(black_box(&labels)).unwrap())
    });
}

criterion_group!(benches, csfd, cssc);
criterion_main!(benches);
