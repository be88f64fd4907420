use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

use hyperhier_core::data::{generate_synthetic, SynthConfig};
use hyperhier_core::geometry::{distance, exp_map0, pairwise_distances};
use hyperhier_core::hierarchy::{sample_triplets, select_ancestors};
use hyperhier_core::training::{total_loss, Batch, ModelParams};
use hyperhier_core::whitening::loss_pfw;
use hyperhier_core::{GeometryConfig, Label, LabeledEmbedding, PoincarePoint, TrainConfig};

fn points(rng: &mut ChaCha8Rng, n: usize, g: &GeometryConfig) -> Vec<PoincarePoint> {
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..g.dim).map(|_| rng.random_range(-3.0..3.0)).collect();
            exp_map0(&v, g).unwrap()
        })
        .collect()
}

fn geometry(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let g = GeometryConfig::new(0.01, 160).unwrap();
    let pts = points(&mut rng, 64, &g);

    c.bench_function("distance d=160", |b| {
        b.iter(|| distance(black_box(pts[0].coords()), black_box(pts[1].coords()), g.c))
    });

    let mut group = c.benchmark_group("pairwise_distances");
    for n in [16, 64] {
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            b.iter(|| pairwise_distances(&pts[..n], &pts, &g).unwrap())
        });
    }
    group.finish();
}

fn whitening(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g = GeometryConfig::new(0.01, 64).unwrap();
    let z = points(&mut rng, 64, &g);
    let z_aug = points(&mut rng, 64, &g);
    let batch: Vec<LabeledEmbedding> = z
        .into_iter()
        .zip(z_aug)
        .enumerate()
        .map(|(i, (z, z_aug))| LabeledEmbedding {
            z,
            z_aug,
            y: if i % 2 == 0 {
                Label::Bonafide
            } else {
                Label::Spoof
            },
        })
        .collect();
    c.bench_function("loss_pfw b=64 d=64", |b| {
        b.iter(|| loss_pfw(black_box(&batch), &g, 0.05, 0.01).unwrap())
    });
}

fn objective(c: &mut Criterion) {
    let ds = generate_synthetic(&SynthConfig {
        n_per_subcluster: 16,
        ..SynthConfig::default()
    })
    .unwrap();
    let mut cfg = TrainConfig::default();
    cfg.geometry.dim = 32;
    let params = ModelParams::init(&cfg, ds.d_in).unwrap();
    let idx: Vec<usize> = (0..cfg.batch_size.min(ds.n()))
        .map(|i| i * ds.n() / cfg.batch_size)
        .collect();
    let batch = Batch::from_dataset(&ds, &idx).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let triples = sample_triplets(&params.bank, &cfg.hsl, &mut rng).unwrap();
    let triplets = select_ancestors(&triples, &params.bank, &mut rng, cfg.hsl.gumbel_enabled);

    c.bench_function("total_loss with gradients", |b| {
        b.iter(|| total_loss(black_box(&batch), &params, &cfg, &triplets).unwrap())
    });
}

criterion_group!(benches, geometry, whitening, objective);
criterion_main!(benches);
