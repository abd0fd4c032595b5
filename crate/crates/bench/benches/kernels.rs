use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use rd2v_core::context::forward;
use rd2v_core::encoder::encode;
use rd2v_core::negatives::{filter_top_k, patch_shuffle, NegativePool, PatchRange};
use rd2v_core::objectives::contrastive_loss;
use rd2v_core::signal::{mix_at_snr, synth_noise, synth_utterance};
use rd2v_core::{
    ConvSpec, FeatureSequence, Matrix, ModelConfig, NoiseKind, ParameterSet, PatchSpec, Provenance, SeededRng,
    TransformerConfig,
};

fn randn(rng: &mut SeededRng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.normal())
}

fn pool(rng: &mut SeededRng, n: usize, d: usize) -> NegativePool {
    let mut p = NegativePool::new();
    for i in 0..n {
        p.push((0..d).map(|_| rng.normal()).collect(), Provenance::Standard, i);
    }
    p
}

fn matmul(c: &mut Criterion) {
    let mut g = c.benchmark_group("matmul");
    for n in [64, 256] {
        let mut rng = SeededRng::new(1, "bench/matmul");
        let a = randn(&mut rng, n, n);
        let b = randn(&mut rng, n, n);
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |bch, _| {
            bch.iter(|| a.matmul(black_box(&b)).unwrap())
        });
    }
    g.finish();
}

fn encoder(c: &mut Criterion) {
    let spec = ConvSpec::with_channels(32);
    let mut params = ParameterSet::new();
    spec.init_params(&mut SeededRng::new(2, "bench/conv"), &mut params);
    let w = synth_utterance(3, 1.0, 16_000).unwrap();
    c.bench_function("encode 1s, 32 channels", |b| {
        b.iter(|| encode(&spec, &params, black_box(&w)).unwrap())
    });
}

fn context(c: &mut Criterion) {
    let mut g = c.benchmark_group("context forward, 49 frames");
    for (name, cfg) in [
        ("toy", ModelConfig::toy().transformer),
        ("desk", TransformerConfig::desk()),
    ] {
        let mut params = ParameterSet::new();
        cfg.init_params(32, &mut SeededRng::new(4, "bench/ctx"), &mut params);
        let f = FeatureSequence::new(randn(&mut SeededRng::new(5, "bench/f"), 49, 32)).unwrap();
        g.bench_function(name, |b| {
            b.iter(|| forward(&cfg, &params, black_box(&f), None).unwrap())
        });
    }
    g.finish();
}

fn negatives(c: &mut Criterion) {
    let mut rng = SeededRng::new(6, "bench/neg");
    let anchor: Vec<f64> = (0..64).map(|_| rng.normal()).collect();
    let target: Vec<f64> = (0..64).map(|_| rng.normal()).collect();
    let p = pool(&mut rng, 100, 64);
    c.bench_function("contrastive loss, 100 negatives", |b| {
        b.iter(|| contrastive_loss(black_box(&anchor), &target, &p, 0.1).unwrap())
    });
    c.bench_function("top-50 of 100", |b| {
        b.iter(|| filter_top_k(black_box(&anchor), &p, 50).unwrap())
    });

    let f = FeatureSequence::new(randn(&mut rng, 149, 768)).unwrap();
    let spec = PatchSpec::sample(PatchRange::BASE, &mut rng).unwrap();
    c.bench_function("patch shuffle 149x768", |b| {
        let mut r = SeededRng::new(7, "bench/shuffle");
        b.iter(|| patch_shuffle(black_box(&f), spec, &mut r))
    });
}

fn mixing(c: &mut Criterion) {
    let clean = synth_utterance(8, 3.0, 16_000).unwrap();
    let noise = synth_noise(9, 4.0, NoiseKind::BandLimited, 16_000).unwrap();
    c.bench_function("mix 3s at 10 dB", |b| {
        let mut r = SeededRng::new(10, "bench/mix");
        b.iter(|| mix_at_snr(black_box(&clean), &noise, 10.0, &mut r).unwrap())
    });
}

criterion_group!(benches, matmul, encoder, context, negatives, mixing);
criterion_main!(benches);
