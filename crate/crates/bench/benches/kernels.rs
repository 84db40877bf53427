use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use seeood::data::{make_simulation_dataset, subsample_ood};
use seeood::detection::{score_heatmap, select_threshold};
use seeood::training::{
    discriminator_loss_and_grads, generator_objective_and_grads, sample_generator,
};
use seeood::wasserstein::{score_batch, wasserstein_score};
use seeood::{Activation, CostMatrix, GridSpec, Mlp, OutputHead, ProbVector, Rng, TrainConfig};

fn discriminator(rng: &mut Rng) -> Mlp {
    Mlp::glorot(&[2, 128, 3], Activation::Relu, OutputHead::Softmax, rng).unwrap()
}

fn mlp(c: &mut Criterion) {
    let mut rng = Rng::new(1);
    let net = discriminator(&mut rng);
    let x = [4.0, 3.0];

    let mut group = c.benchmark_group("mlp");
    group.bench_function("forward", |b| {
        b.iter(|| net.forward(black_box(&x)).unwrap())
    });
    let (_, cache) = net.forward(&x).unwrap();
    group.bench_function("backward", |b| {
        b.iter(|| {
            net.backward(black_box(&cache), black_box(&[0.1, -0.2, 0.1]))
                .unwrap()
        })
    });
    group.finish();
}

fn score(c: &mut Criterion) {
    let binary = CostMatrix::binary(10).unwrap();
    let p = ProbVector::new((1..=10).map(|i| i as f64 / 55.0).collect()).unwrap();
    c.bench_function("wasserstein_score/k10", |b| {
        b.iter(|| wasserstein_score(black_box(&p), &binary).unwrap())
    });

    let mut rng = Rng::new(2);
    let net = discriminator(&mut rng);
    let cost = CostMatrix::binary(3).unwrap();
    let inputs: Vec<Vec<f64>> = (0..1000)
        .map(|_| vec![rng.uniform_range(-1.0, 8.0), rng.uniform_range(-1.0, 8.0)])
        .collect();
    let mut group = c.benchmark_group("score_batch");
    group.throughput(Throughput::Elements(inputs.len() as u64));
    group.bench_function("1000", |b| {
        b.iter(|| score_batch(&net, black_box(&inputs), &cost).unwrap())
    });
    group.finish();

    let scores: Vec<f64> = (0..3000).map(|_| rng.uniform()).collect();
    c.bench_function("select_threshold/3000", |b| {
        b.iter(|| select_threshold(black_box(&scores), 0.95).unwrap())
    });

    let grid = GridSpec {
        resolution: 50,
        ..GridSpec::default()
    };
    c.bench_function("score_heatmap/50x50", |b| {
        b.iter(|| score_heatmap(&net, black_box(&grid), &cost).unwrap())
    });
}

fn training_step(c: &mut Criterion) {
    let mut rng = Rng::new(3);
    let config = TrainConfig::setting1();
    let data = subsample_ood(&make_simulation_dataset(&mut rng), 2, &mut rng).unwrap();
    let cost = CostMatrix::binary(3).unwrap();
    let disc = discriminator(&mut rng);
    let gen = Mlp::glorot(
        &config.generator_arch,
        Activation::Relu,
        OutputHead::Identity,
        &mut rng,
    )
    .unwrap();
    let ind: Vec<_> = data.ind_train[..config.batch_ind].to_vec();

    let mut group = c.benchmark_group("training_step");
    group.bench_function("discriminator", |b| {
        b.iter_batched(
            || sample_generator(&gen, config.batch_gen, config.noise_dim, &mut rng).unwrap(),
            |generated| {
                discriminator_loss_and_grads(
                    &disc,
                    &ind,
                    &data.ood_train,
                    &generated,
                    1.0,
                    0.001,
                    &cost,
                )
                .unwrap()
            },
            BatchSize::SmallInput,
        )
    });
    let noise = seeood::data::sample_noise(config.noise_dim, config.batch_gen, &mut Rng::new(4));
    group.bench_function("generator", |b| {
        b.iter(|| {
            generator_objective_and_grads(&disc, &gen, black_box(&noise), 100.0, &cost).unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, mlp, score, training_step);
criterion_main!(benches);
