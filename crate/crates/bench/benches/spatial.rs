use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use meteor_core::geometry::{farthest_point_sample, Point3};
use meteor_core::SpatialIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cloud(n: usize, seed: u64) -> Vec<Point3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| [0, 1, 2].map(|_| rng.gen_range(0.0..1.0))).collect()
}

fn radius_query(c: &mut Criterion) {
    let mut g = c.benchmark_group("radius_query");
    for n in [1_000, 10_000] {
        let pts = cloud(n, 1);
        let idx = SpatialIndex::from_points(&pts, 0.1).unwrap();
        let brute = |center: &Point3| -> Vec<usize> {
            (0..pts.len()).filter(|&i| meteor_core::geometry::distance(&pts[i], center) < 0.1).collect()
        };
        g.bench_with_input(BenchmarkId::new("grid", n), &n, |b, _| {
            b.iter(|| pts.iter().take(100).map(|p| idx.radius_query(black_box(p), 0.1).unwrap().len()).sum::<usize>())
        });
        g.bench_with_input(BenchmarkId::new("brute", n), &n, |b, _| {
            b.iter(|| pts.iter().take(100).map(|p| brute(black_box(p)).len()).sum::<usize>())
        });
    }
    g.finish();
}

fn knn_and_fps(c: &mut Criterion) {
    let pts = cloud(4_000, 2);
    let idx = SpatialIndex::from_points(&pts, 0.05).unwrap();
    c.bench_function("knn_query k=8 x100", |b| {
        b.iter(|| pts.iter().take(100).map(|p| idx.knn_query(black_box(p), 8).unwrap().len()).sum::<usize>())
    });
    c.bench_function("farthest_point_sample 4000->512", |b| {
        b.iter(|| farthest_point_sample(black_box(&pts), 512, 0).unwrap())
    });
}

criterion_group!(benches, radius_query, knn_and_fps);
criterion_main!(benches);
