use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use signmix_bench::{ratio_matrix, training_fixture, videos};
use signmix_core::clip::{sample_clip, ClipSpec};
use signmix_core::cotrain::{compute_loss, loss_and_grad, LossConfig};
use signmix_core::split::{optimize_matrix, SplitConfig};

fn split(c: &mut Criterion) {
    let mut g = c.benchmark_group("split");
    g.sample_size(10);
    for (signers, glosses) in [(50, 100), (200, 400), (400, 1000)] {
        let mat = ratio_matrix(signers, glosses, 7);
        let cfg = SplitConfig {
            restarts: 0,
            ..SplitConfig::default()
        };
        g.bench_with_input(
            BenchmarkId::from_parameter(format!("{signers}x{glosses}")),
            &mat,
            |b, m| b.iter(|| optimize_matrix(black_box(m), &cfg).unwrap()),
        );
    }
    g.finish();
}

fn loss(c: &mut Criterion) {
    let cfg = LossConfig::default();
    let mut g = c.benchmark_group("loss");
    for languages in [1, 3] {
        let f = training_fixture(32, 32, 64, languages, 3);
        g.bench_function(BenchmarkId::new("forward", languages), |b| {
            b.iter(|| compute_loss(black_box(&f.batch), &f.model, &cfg).unwrap())
        });
        g.bench_function(BenchmarkId::new("forward_backward", languages), |b| {
            b.iter(|| loss_and_grad(black_box(&f.batch), &f.model, &cfg, true).unwrap())
        });
    }
    g.finish();
}

fn clips(c: &mut Criterion) {
    let recs = videos(1000, 5);
    let spec = ClipSpec::default();
    c.bench_function("clip/sample_1000", |b| {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        b.iter(|| {
            for r in &recs {
                black_box(sample_clip(r, &spec, &mut rng).unwrap());
            }
        })
    });
}

criterion_group!(benches, split, loss, clips);
criterion_main!(benches);
