//! Similarity histograms and the target-collapse metric.

use serde::{Deserialize, Serialize};

use crate::ema::ParameterSet;
use crate::encoder::FeatureSequence;
use crate::error::{Error, Result};
use crate::model::{predictions, teacher_targets};
use crate::negatives::build_pools;
use crate::numeric::{cosine_similarity, mean, Matrix, SeededRng};
use crate::objectives::Ablation;
use crate::train::checkpoint::Checkpoint;
use crate::train::config::TrainConfig;
use crate::train::corpus::Pair;
use crate::train::trainer::draw_masks;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub positive_count: u64,
    pub negative_count: u64,
}

/// Equal-width bins over [-1, 1]; the last bin is closed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bins: Vec<HistogramBin>,
}

impl Histogram {
    pub fn new(bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::Domain("histogram needs at least one bin".into()));
        }
        let edge = |i: usize| (2 * i) as f64 / bins as f64 - 1.0;
        Ok(Self {
            bins: (0..bins)
                .map(|i| HistogramBin {
                    bin_lo: edge(i),
                    bin_hi: edge(i + 1),
                    positive_count: 0,
                    negative_count: 0,
                })
                .collect(),
        })
    }

    fn index(&self, v: f64) -> usize {
        let n = self.bins.len();
        let i = ((v.clamp(-1.0, 1.0) + 1.0) / 2.0 * n as f64).floor() as usize;
        i.min(n - 1)
    }

    pub fn add_positive(&mut self, v: f64) {
        let i = self.index(v);
        self.bins[i].positive_count += 1;
    }

    pub fn add_negative(&mut self, v: f64) {
        let i = self.index(v);
        self.bins[i].negative_count += 1;
    }

    pub fn positive_total(&self) -> u64 {
        self.bins.iter().map(|b| b.positive_count).sum()
    }

    pub fn negative_total(&self) -> u64 {
        self.bins.iter().map(|b| b.negative_count).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_lo,bin_hi,positive_count,negative_count\n");
        for b in &self.bins {
            s.push_str(&format!(
                "{},{},{},{}\n",
                b.bin_lo, b.bin_hi, b.positive_count, b.negative_count
            ));
        }
        s
    }
}

/// Cosine similarities of masked predictions with their targets and with
/// their negatives.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SimilaritySamples {
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
    /// Teacher targets of every probe utterance.
    pub targets: Vec<FeatureSequence>,
}

/// Runs both branches over `probe`. Negatives follow the configured pool
/// recipe; a regression-only config uses the standard-only recipe.
pub fn similarity_samples(
    cfg: &TrainConfig,
    student: &ParameterSet,
    teacher: &ParameterSet,
    probe: &[Pair],
    seed: u64,
) -> Result<SimilaritySamples> {
    if probe.is_empty() {
        return Err(Error::Domain("probe corpus is empty".into()));
    }
    let plan = cfg
        .pool_plan()
        .or_else(|| Ablation::JointStandard.plan(&cfg.negatives))
        .expect("standard recipe always has a pool");
    let mut out = SimilaritySamples::default();
    for (i, pair) in probe.iter().enumerate() {
        let rng = SeededRng::new(seed, format!("diagnose/{i}"));
        let c_tar = teacher_targets(&cfg.model, teacher, &pair.clean, cfg.precision)?;
        let (input_mask, loss_mask) = draw_masks(cfg, c_tar.len(), &mut rng.child("mask"));
        let c_pre = predictions(&cfg.model, student, &pair.noisy, &input_mask, cfg.precision)?;
        let masked = loss_mask.masked_indices();
        let pools = build_pools(&c_pre, &c_tar, &masked, &plan, cfg.patch, &rng.child("pools"))?;
        for (&t, pool) in masked.iter().zip(&pools) {
            out.positive.push(cosine_similarity(c_pre.row(t), c_tar.frame(t))?);
            for f in pool.frames() {
                out.negative.push(cosine_similarity(c_pre.row(t), f)?);
            }
        }
        out.targets.push(c_tar);
    }
    Ok(out)
}

/// Bins positive and negative similarities.
pub fn similarity_histogram(positive: &[f64], negative: &[f64], bins: usize) -> Result<Histogram> {
    if positive.is_empty() && negative.is_empty() {
        return Err(Error::Domain("no similarity samples to bin".into()));
    }
    let mut h = Histogram::new(bins)?;
    positive.iter().for_each(|&v| h.add_positive(v));
    negative.iter().for_each(|&v| h.add_negative(v));
    Ok(h)
}

/// Mean over dimensions of the per-dimension sample standard deviation
/// (n - 1 denominator) of `frames`.
pub fn collapse_metric(frames: &Matrix) -> Result<f64> {
    let n = frames.rows();
    if n < 2 {
        return Err(Error::Domain(format!(
            "collapse metric needs at least 2 frames, got {n}"
        )));
    }
    let d = frames.cols();
    let mut mu = vec![0.0; d];
    for r in frames.iter_rows() {
        mu.iter_mut().zip(r).for_each(|(m, v)| *m += v / n as f64);
    }
    let mut ss = vec![0.0; d];
    for r in frames.iter_rows() {
        ss.iter_mut()
            .zip(r)
            .zip(&mu)
            .for_each(|((s, v), m)| *s += (v - m) * (v - m));
    }
    Ok(ss.iter().map(|s| (s / (n - 1) as f64).sqrt()).sum::<f64>() / d as f64)
}

/// Stacks the frames of several sequences.
pub fn stack(seqs: &[FeatureSequence]) -> Result<Matrix> {
    let d = seqs
        .first()
        .ok_or_else(|| Error::Domain("no sequences to stack".into()))?
        .dim();
    let mut data = Vec::new();
    for s in seqs {
        if s.dim() != d {
            return Err(Error::Shape(format!("sequences have {} and {d} dims", s.dim())));
        }
        data.extend_from_slice(s.frames().data());
    }
    Matrix::new(data.len() / d, d, data)
}

/// Diagnostics of one checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapseReport {
    pub step: u64,
    pub collapse: f64,
    pub mean_positive_similarity: f64,
    pub mean_negative_similarity: f64,
    pub positive_pairs: usize,
    pub negative_pairs: usize,
    pub histogram: Histogram,
}

pub fn diagnose(
    cfg: &TrainConfig,
    ckpt: &Checkpoint,
    probe: &[Pair],
    bins: usize,
    seed: u64,
) -> Result<CollapseReport> {
    let s = similarity_samples(cfg, &ckpt.student, &ckpt.teacher, probe, seed)?;
    Ok(CollapseReport {
        step: ckpt.step,
        collapse: collapse_metric(&stack(&s.targets)?)?,
        mean_positive_similarity: mean(&s.positive),
        mean_negative_similarity: mean(&s.negative),
        positive_pairs: s.positive.len(),
        negative_pairs: s.negative.len(),
        histogram: similarity_histogram(&s.positive, &s.negative, bins)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::config::Profile;
    use crate::train::corpus::Corpus;

    #[test]
    fn histogram_binning() {
        let h = similarity_histogram(&[1.0, 1.0, -1.0, 0.0], &[0.3, -0.99], 4).unwrap();
        let pos: Vec<u64> = h.bins.iter().map(|b| b.positive_count).collect();
        let neg: Vec<u64> = h.bins.iter().map(|b| b.negative_count).collect();
        assert_eq!(pos, vec![1, 0, 1, 2]);
        assert_eq!(neg, vec![1, 0, 1, 0]);
        assert_eq!(h.bins[3].bin_hi, 1.0);
        assert!(h
            .to_csv()
            .starts_with("bin_lo,bin_hi,positive_count,negative_count\n-1,-0.5,1,1\n"));
        assert!(similarity_histogram(&[], &[], 4).is_err());
        assert!(Histogram::new(0).is_err());
    }

    #[test]
    fn self_pairs_land_in_the_top_bin() {
        let mut rng = SeededRng::new(0, "x");
        let sims: Vec<f64> = (0..500)
            .map(|_| {
                let v: Vec<f64> = (0..16).map(|_| rng.normal()).collect();
                cosine_similarity(&v, &v).unwrap()
            })
            .collect();
        let h = similarity_histogram(&sims, &[], 20).unwrap();
        assert_eq!(h.bins[19].positive_count, 500);
        assert_eq!(h.positive_total(), 500);
    }

    #[test]
    fn collapse_cases() {
        assert_eq!(collapse_metric(&Matrix::filled(10, 3, 2.5)).unwrap(), 0.0);
        assert!(matches!(collapse_metric(&Matrix::zeros(1, 3)), Err(Error::Domain(_))));
        let mut rng = SeededRng::new(1, "x");
        let m = Matrix::from_fn(10_000, 8, |_, _| rng.normal());
        let c = collapse_metric(&m).unwrap();
        assert!((c - 1.0).abs() < 0.05, "{c}");
        let rev: Vec<usize> = (0..10_000).rev().collect();
        assert!((collapse_metric(&m.select_rows(&rev)).unwrap() - c).abs() < 1e-12);
    }

    #[test]
    fn diagnose_a_fresh_model() {
        let mut cfg = TrainConfig::for_profile(Profile::Toy);
        cfg.data.seconds = [0.5, 0.5];
        let student = cfg.model.init_params(cfg.seed);
        let probe = Corpus::probe(&cfg.data, 11, 2).unwrap();
        let ckpt = Checkpoint {
            config_digest: cfg.digest(),
            step: 0,
            seed: 0,
            teacher: student.clone(),
            adam_m: student.clone(),
            adam_v: student.clone(),
            student,
        };
        let r = diagnose(&cfg, &ckpt, &probe, 10, 3).unwrap();
        assert_eq!(r.histogram.positive_total() as usize, r.positive_pairs);
        assert_eq!(r.histogram.negative_total() as usize, r.negative_pairs);
        assert_eq!(r.negative_pairs, r.positive_pairs * 50);
        assert!(r.collapse > 0.0);
    }
}
