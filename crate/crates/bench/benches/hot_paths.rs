use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use tov_bench::mosaic_patch;
use tov_core::oversegment::{felzenszwalb, SegmentParams};
use tov_core::region_proposal::{selective_search, ProposalParams};
use tov_core::ssl::train::train_step;
use tov_core::ssl::{nt_xent, Model, OptimizerState, Tensor};
use tov_core::synth::{general_corpus, toy_model_config};

fn segmentation(c: &mut Criterion) {
    let mut group = c.benchmark_group("segmentation");
    for per_class in [2, 8] {
        let patch = mosaic_patch(per_class);
        let pixels = patch.width() * patch.height();
        group.bench_with_input(BenchmarkId::new("felzenszwalb", pixels), &patch, |b, p| {
            b.iter(|| felzenszwalb(black_box(p), &SegmentParams::default()).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("selective_search", pixels), &patch, |b, p| {
            b.iter(|| selective_search(black_box(p), &ProposalParams::default()).unwrap())
        });
    }
    group.finish();
}

fn loss(c: &mut Criterion) {
    let mut group = c.benchmark_group("nt_xent");
    for n in [16usize, 64] {
        let data = (0..2 * n * 64).map(|i| ((i * 7919) % 1000) as f64 / 500.0 - 1.0).collect();
        let z = Tensor::new(vec![2 * n, 64], data).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &z, |b, z| b.iter(|| nt_xent(black_box(z), 0.5).unwrap()));
    }
    group.finish();
}

fn training(c: &mut Criterion) {
    let config = toy_model_config();
    // 32 images read as 16 view pairs; content does not affect cost.
    let views = general_corpus(32, 32, 3);
    let mut model = Model::init(config, 1).unwrap();
    let mut opt = OptimizerState::new(Default::default(), &model);
    c.bench_function("train_step/16_pairs", |b| {
        b.iter(|| train_step(&mut model, &mut opt, black_box(&views), 0.5, 1e-4).unwrap())
    });
}

criterion_group!(benches, segmentation, loss, training);
criterion_main!(benches);
