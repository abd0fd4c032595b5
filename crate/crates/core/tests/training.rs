use rd2v_core::ema::ParameterSet;
use rd2v_core::numeric::SeededRng;
use rd2v_core::objectives::Ablation;
use rd2v_core::train::{
    diagnose, run, similarity_histogram, train_step, Checkpoint, Corpus, LossSupport, Profile, TrainConfig, TrainState,
    Trainer,
};

fn toy(seed: u64, steps: u64) -> TrainConfig {
    let mut cfg = TrainConfig::for_profile(Profile::Toy);
    cfg.seed = seed;
    cfg.steps = steps;
    cfg
}

#[test]
fn degenerate_config_has_zero_regression_loss() {
    // Clean input on both branches, nothing masked, one target layer and
    // no contrastive term: teacher and student compute the same function.
    let mut cfg = toy(4, 1);
    cfg.model.transformer.top_m = 1;
    cfg.loss_support = LossSupport::All;
    cfg.loss.lambda = 0.0;
    cfg.loss.ablation = Ablation::RegressionOnly;
    cfg.mask.prob = 0.0;
    cfg.data.add_noise = false;
    cfg.validate().unwrap();
    let mut state = TrainState::fresh(&cfg);
    let batch = Corpus::new(&cfg.data, cfg.seed).unwrap().batch(0, 2).unwrap();
    for pair in &batch {
        assert_eq!(pair.clean, pair.noisy);
    }
    let (rec, reports) = train_step(&mut state, &batch, &cfg).unwrap();
    assert!(rec.regression < 1e-9, "{}", rec.regression);
    assert!(rec.total < 1e-9);
    for r in &reports {
        assert_eq!(r.masked_count, r.positive_similarities.len());
        assert!(r.negative_similarities.is_empty());
    }
}

#[test]
fn toy_loss_falls_over_fifty_steps() {
    let (mut first, mut last) = (0.0, 0.0);
    for seed in [1, 2, 3] {
        let mut t = Trainer::new(toy(seed, 50)).unwrap();
        let mut records = Vec::new();
        while !t.done() {
            records.push(t.step().unwrap().0);
        }
        first += records[0].total / 3.0;
        last += records[49].total / 3.0;
    }
    assert!(last < first, "step 1 {first}, step 50 {last}");
}

#[test]
fn teacher_moves_only_by_moving_average() {
    let cfg = toy(9, 3);
    let mut t = Trainer::new(cfg).unwrap();
    for _ in 0..3 {
        let before = t.state.teacher.clone();
        let (rec, _) = t.step().unwrap();
        let mut expected = ParameterSet::new();
        for (name, m) in before.iter() {
            let s = t.state.student.get(name).unwrap();
            let mut e = m.clone();
            for (ev, sv) in e.data_mut().iter_mut().zip(s.data()) {
                *ev = rec.tau * *ev + (1.0 - rec.tau) * sv;
            }
            expected.insert(name, e);
        }
        assert_eq!(t.state.teacher.max_abs_diff(&expected).unwrap(), 0.0);
    }
}

#[test]
fn resumed_trainer_matches_uninterrupted_state() {
    let cfg = toy(5, 6);
    let mut straight = Trainer::new(cfg.clone()).unwrap();
    let mut split = Trainer::new(cfg.clone()).unwrap();
    for _ in 0..3 {
        straight.step().unwrap();
        split.step().unwrap();
    }
    let bytes = split.checkpoint().to_bytes();
    let mut resumed = Trainer::resume(cfg, Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    for _ in 0..3 {
        let x = straight.step().unwrap().0;
        let y = resumed.step().unwrap().0;
        assert_eq!(x.to_json_line(), y.to_json_line());
    }
    assert_eq!(straight.state, resumed.state);
}

#[test]
fn run_writes_log_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy(2, 4);
    cfg.checkpoint_every = 2;
    cfg.output_dir = Some(dir.path().to_path_buf());
    let summary = run(cfg.clone(), None).unwrap();
    assert_eq!(summary.records.len(), 4);
    let names: Vec<String> = summary
        .checkpoints
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert_eq!(
        names,
        ["ckpt-00000000.rd2v", "ckpt-00000002.rd2v", "ckpt-00000004.rd2v"]
    );
    let log = std::fs::read_to_string(dir.path().join("train.jsonl")).unwrap();
    for (i, line) in log.lines().enumerate() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(keys.len(), 7, "{keys:?}");
        assert_eq!(v["step"], (i + 1) as u64);
    }
    let last = Checkpoint::load(&summary.checkpoints[2]).unwrap();
    assert_eq!(last.step, 4);
    assert_eq!(last.config_digest, cfg.digest());
}

#[test]
fn diagnostics_on_a_trained_checkpoint() {
    let cfg = toy(6, 2);
    let mut t = Trainer::new(cfg.clone()).unwrap();
    t.step().unwrap();
    t.step().unwrap();
    let probe = Corpus::probe(&cfg.data, 77, 2).unwrap();
    let r = diagnose(&cfg, &t.checkpoint(), &probe, 40, 1).unwrap();
    assert_eq!(r.step, 2);
    assert_eq!(r.histogram.bins.len(), 40);
    assert_eq!(r.histogram.positive_total() as usize, r.positive_pairs);
    assert_eq!(r.histogram.negative_total() as usize, r.negative_pairs);
    assert!(r.collapse >= 0.0);
    assert!(diagnose(&cfg, &t.checkpoint(), &[], 40, 1).is_err());
}

#[test]
fn random_projections_have_near_zero_mean_similarity() {
    // Monte Carlo stand-in for an untrained predictor: independent Gaussian
    // vectors at dimension 32 have cosine similarity centred on 0.
    for seed in 0..3 {
        let mut rng = SeededRng::new(seed, "projections");
        let cos: Vec<f64> = (0..5000)
            .map(|_| {
                let a: Vec<f64> = (0..32).map(|_| rng.normal()).collect();
                let b: Vec<f64> = (0..32).map(|_| rng.normal()).collect();
                let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
                dot / (a.iter().map(|x| x * x).sum::<f64>() * b.iter().map(|x| x * x).sum::<f64>()).sqrt()
            })
            .collect();
        let h = similarity_histogram(&cos, &[], 20).unwrap();
        assert_eq!(h.positive_total(), 5000);
        let mean: f64 = h
            .bins
            .iter()
            .map(|b| 0.5 * (b.bin_lo + b.bin_hi) * b.positive_count as f64)
            .sum::<f64>()
            / 5000.0;
        assert!(mean.abs() < 0.2, "{mean}");
        let spread = h.bins.iter().filter(|b| b.positive_count > 0).count();
        assert!(spread >= 6, "mass in only {spread} bins");
    }
}
