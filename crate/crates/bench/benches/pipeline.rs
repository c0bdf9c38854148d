use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use gaitnet_core::backward::{build_bgn, BgnConfig};
use gaitnet_core::dataset::{generate, sample_uniform, SamplingStrategy};
use gaitnet_core::forward::{build_fgn, rollout, train_fgn, FgnConfig};
use gaitnet_core::gait::{d_gait, PoseWeights};
use gaitnet_core::nn::{AdamConfig, AdamState, HiddenActivation, Matrix, Network, OutputActivation};
use gaitnet_core::oracle::Oracle;

fn oracle(c: &mut Criterion) {
    let o = Oracle::desk();
    let anatomy = o.preset("crouch").unwrap();
    let g = o.space().reference_gait();
    c.bench_function("oracle_simulate", |b| {
        b.iter(|| o.simulate(black_box(&anatomy), black_box(&g)).unwrap())
    });
    let a = o.simulate(&anatomy, &g).unwrap();
    let r = o.simulate(&o.space().reference_anatomy(), &g).unwrap();
    c.bench_function("d_gait", |b| {
        b.iter(|| d_gait(black_box(&a), black_box(&r), PoseWeights::default()).unwrap())
    });
}

fn networks(c: &mut Criterion) {
    let o = Oracle::desk();
    let s = o.space();
    let fgn = build_fgn(&FgnConfig::default(), s, o.layout()).unwrap();
    let anatomy = s.reference_anatomy();
    let g = s.reference_gait();
    c.bench_function("fgn_rollout_60_frames", |b| {
        b.iter(|| rollout(&fgn, s, black_box(&anatomy), &g).unwrap())
    });

    let bgn = build_bgn(&BgnConfig::default(), s, o.layout()).unwrap();
    let gait = o.simulate(&anatomy, &g).unwrap();
    c.bench_function("bgn_posterior_1000", |b| {
        b.iter(|| {
            bgn.posterior_samples(s, black_box(&gait), &g, &anatomy.skeleton, 1000, 1)
                .unwrap()
        })
    });

    let net = Network::new(
        &[42, 128, 128, 128, 57],
        HiddenActivation::Relu,
        OutputActivation::Linear,
        1,
    )
    .unwrap();
    let x = Matrix::from_vec(256, 42, vec![0.1; 256 * 42]).unwrap();
    let up = Matrix::from_vec(256, 57, vec![0.01; 256 * 57]).unwrap();
    c.bench_function("mlp_train_step_batch256", |b| {
        b.iter_batched(
            || (net.clone(), AdamState::new(&net, AdamConfig::default())),
            |(mut n, mut st)| {
                let (_, tr) = n.forward_traced(&x).unwrap();
                let g = n.backward_params(&tr, &up).unwrap();
                st.step(&mut n, &g).unwrap();
                n
            },
            BatchSize::SmallInput,
        )
    });
}

fn training(c: &mut Criterion) {
    let o = Oracle::desk();
    let ds = generate(&sample_uniform(200, o.space(), 1), &o, SamplingStrategy::Uniform, 1).unwrap();
    let cfg = FgnConfig {
        hidden: vec![64, 64],
        epochs: 1,
        pairs_per_epoch: 12_000,
        ..FgnConfig::default()
    };
    let mut group = c.benchmark_group("training");
    group.sample_size(10);
    group.bench_function("fgn_epoch_12k_pairs", |b| {
        b.iter(|| train_fgn(&ds, o.space(), &cfg).unwrap())
    });
    group.finish();
}

criterion_group!(benches, oracle, networks, training);
criterion_main!(benches);
