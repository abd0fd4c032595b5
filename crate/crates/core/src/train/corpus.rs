//! Clean utterances, noise sources and seeded (clean, noisy) batches.

use crate::error::{Error, Result};
use crate::numeric::SeededRng;
use crate::signal::{load_wav, mix_at_snr, read_manifest, synth_noise, synth_utterance, Waveform};
use crate::train::config::DataConfig;

/// One training example: the teacher hears `clean`, the student `noisy`.
#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    pub clean: Waveform,
    pub noisy: Waveform,
    /// Mixing SNR in dB; infinite when no noise was added.
    pub snr_db: f64,
}

#[derive(Clone, Debug)]
pub struct Corpus {
    cfg: DataConfig,
    seed: u64,
    clean: Vec<Waveform>,
    noise: Vec<Waveform>,
}

impl Corpus {
    /// Loads manifests or synthesises the clean pool from `seed`.
    pub fn new(cfg: &DataConfig, seed: u64) -> Result<Self> {
        let clean = match &cfg.manifest {
            Some(path) => load_all(path, cfg.sample_rate)?,
            None => synth_pool(cfg, &SeededRng::new(seed, "corpus/clean"), cfg.pool_size)?,
        };
        let noise = match &cfg.noise_manifest {
            Some(path) => load_all(path, cfg.sample_rate)?,
            None => Vec::new(),
        };
        if clean.is_empty() {
            return Err(Error::Config("corpus has no clean utterances".into()));
        }
        Ok(Self {
            cfg: cfg.clone(),
            seed,
            clean,
            noise,
        })
    }

    pub fn len(&self) -> usize {
        self.clean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean.is_empty()
    }

    pub fn utterances(&self) -> &[Waveform] {
        &self.clean
    }

    /// The batch for `step`; depends only on the corpus seed and `step`.
    pub fn batch(&self, step: u64, size: usize) -> Result<Vec<Pair>> {
        let root = SeededRng::new(self.seed, format!("corpus/step{step}"));
        (0..size)
            .map(|b| {
                let mut rng = root.child(format!("utt{b}"));
                let clean = &self.clean[rng.index(self.clean.len())];
                self.pair(clean, &mut rng)
            })
            .collect()
    }

    /// A held-out probe set drawn from streams disjoint from training.
    pub fn probe(cfg: &DataConfig, seed: u64, count: usize) -> Result<Vec<Pair>> {
        if count == 0 {
            return Err(Error::Domain("probe corpus is empty".into()));
        }
        let root = SeededRng::new(seed, "probe");
        let clean = synth_pool(cfg, &root.child("clean"), count)?;
        let corpus = Self {
            cfg: cfg.clone(),
            seed,
            clean: Vec::new(),
            noise: Vec::new(),
        };
        clean
            .iter()
            .enumerate()
            .map(|(i, c)| corpus.pair(c, &mut root.child(format!("mix{i}"))))
            .collect()
    }

    fn pair(&self, clean: &Waveform, rng: &mut SeededRng) -> Result<Pair> {
        if !self.cfg.add_noise {
            return Ok(Pair {
                clean: clean.clone(),
                noisy: clean.clone(),
                snr_db: f64::INFINITY,
            });
        }
        let [lo, hi] = self.cfg.snr_db;
        let snr = if lo == hi { lo } else { rng.uniform(lo, hi)? };
        let noise = if self.noise.is_empty() {
            let kind = self.cfg.noise_kinds[rng.index(self.cfg.noise_kinds.len())];
            let seed = rng.int_inclusive(0, u32::MAX as usize) as u64;
            let dur = clean.duration_s() + 0.25;
            synth_noise(seed, dur, kind, clean.sample_rate())?
        } else {
            loop_to(&self.noise[rng.index(self.noise.len())], clean.len())?
        };
        let mix = mix_at_snr(clean, &noise, snr, &mut rng.child("offset"))?;
        Ok(Pair {
            clean: clean.clone(),
            noisy: mix.mixed,
            snr_db: snr,
        })
    }
}

fn synth_pool(cfg: &DataConfig, rng: &SeededRng, count: usize) -> Result<Vec<Waveform>> {
    let [lo, hi] = cfg.seconds;
    (0..count)
        .map(|i| {
            let mut r = rng.child(format!("{i}"));
            let dur = if lo == hi { lo } else { r.uniform(lo, hi)? };
            let seed = r.int_inclusive(0, u32::MAX as usize) as u64;
            synth_utterance(seed, dur, cfg.sample_rate)
        })
        .collect()
}

fn load_all(manifest: &std::path::Path, sample_rate: u32) -> Result<Vec<Waveform>> {
    read_manifest(manifest)?
        .iter()
        .map(|p| {
            let w = load_wav(p)?;
            if w.sample_rate() != sample_rate {
                return Err(Error::Format(format!(
                    "{} is {} Hz, expected {sample_rate}",
                    p.display(),
                    w.sample_rate()
                )));
            }
            Ok(w)
        })
        .collect()
}

/// Repeats `noise` until it covers at least `len` samples.
pub fn loop_to(noise: &Waveform, len: usize) -> Result<Waveform> {
    if noise.len() >= len {
        return Ok(noise.clone());
    }
    let samples = noise.samples().iter().copied().cycle().take(len).collect();
    Waveform::new(samples, noise.sample_rate())
}
