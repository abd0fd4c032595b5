use criterion::{criterion_group, criterion_main, Criterion};

use rd2v_core::train::{train_step, Corpus, Profile, TrainState};
use rd2v_core::{Ablation, TrainConfig};

fn step(c: &mut Criterion) {
    let mut g = c.benchmark_group("toy train step");
    g.sample_size(20);
    for ablation in [Ablation::RegressionOnly, Ablation::JointNonsemanticRemoval] {
        let mut cfg = TrainConfig::for_profile(Profile::Toy);
        cfg.loss.ablation = ablation;
        let batch = Corpus::new(&cfg.data, cfg.seed)
            .unwrap()
            .batch(0, cfg.batch_size)
            .unwrap();
        let fresh = TrainState::fresh(&cfg);
        g.bench_function(format!("{ablation:?}"), |b| {
            b.iter_batched(
                || fresh.clone(),
                |mut s| train_step(&mut s, &batch, &cfg).unwrap(),
                criterion::BatchSize::LargeInput,
            )
        });
    }
    g.finish();
}

criterion_group!(benches, step);
criterion_main!(benches);
