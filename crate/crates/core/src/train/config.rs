//! Training configuration: built-in profiles layered under TOML files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::context::MaskConfig;
use crate::ema::{EmaSchedule, EmaScope};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::negatives::{NegativeCounts, PatchRange, PoolPlan};
use crate::numeric::Precision;
use crate::objectives::LossConfig;
use crate::signal::{NoiseKind, DEFAULT_SAMPLE_RATE};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Full-size model: 12 layers of width 768, 100k updates.
    Base,
    /// Small model that trains on a laptop.
    #[default]
    Desk,
    /// Two-layer model used by the tracked experiments.
    Toy,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(Profile::Base),
            "desk" => Ok(Profile::Desk),
            "toy" => Ok(Profile::Toy),
            other => Err(Error::Config(format!("unknown profile {other:?}"))),
        }
    }
}

/// Frames on which the losses are evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossSupport {
    #[default]
    Masked,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    /// Peak learning rate.
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Linear warmup length; unset means 10% of the run.
    pub warmup_steps: Option<u64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-6,
            warmup_steps: None,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid optimizer settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Clean-speech manifest; unset means a synthetic corpus.
    pub manifest: Option<PathBuf>,
    /// Noise manifest; unset means synthetic noise.
    pub noise_manifest: Option<PathBuf>,
    /// Number of synthetic utterances.
    pub pool_size: usize,
    /// Synthetic utterance durations are uniform in this range (seconds).
    pub seconds: [f64; 2],
    /// Mixing SNR is uniform in this range (dB).
    pub snr_db: [f64; 2],
    /// When false the student hears the clean waveform.
    pub add_noise: bool,
    pub noise_kinds: Vec<NoiseKind>,
    pub sample_rate: u32,
    /// Corpus seed; unset means the training seed.
    pub seed: Option<u64>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            noise_manifest: None,
            pool_size: 64,
            seconds: [1.0, 3.0],
            snr_db: [0.0, 25.0],
            add_noise: true,
            noise_kinds: vec![NoiseKind::White, NoiseKind::BandLimited],
            sample_rate: DEFAULT_SAMPLE_RATE,
            seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub profile: Profile,
    pub model: ModelConfig,
    pub mask: MaskConfig,
    pub ema: EmaSchedule,
    pub ema_scope: EmaScope,
    pub loss: LossConfig,
    pub loss_support: LossSupport,
    pub negatives: NegativeCounts,
    pub patch: PatchRange,
    pub optimizer: AdamConfig,
    pub data: DataConfig,
    pub precision: Precision,
    pub steps: u64,
    /// Utterances per step.
    pub batch_size: usize,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    /// Write a checkpoint every this many steps; 0 writes only the last.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_profile(Profile::Desk)
    }
}

impl TrainConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let base = Self {
            profile,
            model: ModelConfig::desk(),
            mask: MaskConfig::default(),
            ema: EmaSchedule::default(),
            ema_scope: EmaScope::All,
            loss: LossConfig::default(),
            loss_support: LossSupport::Masked,
            negatives: NegativeCounts::default(),
            patch: PatchRange::DESK,
            optimizer: AdamConfig::default(),
            data: DataConfig::default(),
            precision: Precision::F64,
            steps: 2000,
            batch_size: 4,
            seed: 0,
            output_dir: None,
            checkpoint_every: 0,
        };
        match profile {
            Profile::Desk => base,
            Profile::Base => Self {
                model: ModelConfig::base(),
                patch: PatchRange::BASE,
                steps: 100_000,
                precision: Precision::F32,
                ..base
            },
            Profile::Toy => Self {
                model: ModelConfig::toy(),
                optimizer: AdamConfig {
                    lr: 1e-3,
                    ..AdamConfig::default()
                },
                ema: EmaSchedule {
                    tau0: 0.99,
                    tau_e: 0.999,
                    tau_n: 300,
                },
                data: DataConfig {
                    pool_size: 16,
                    seconds: [1.0, 1.0],
                    ..DataConfig::default()
                },
                steps: 300,
                batch_size: 2,
                ..base
            },
        }
    }

    /// Profile defaults (from the file's `profile` key, desk if absent)
    /// overridden by the file's values.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let over: toml::Table = text
            .parse()
            .map_err(|e| Error::Config(format!("config is not valid TOML: {e}")))?;
        let profile = match over.get("profile") {
            Some(toml::Value::String(s)) => s.parse()?,
            Some(other) => return Err(Error::Config(format!("profile must be a string, got {other}"))),
            None => Profile::default(),
        };
        let mut base = toml::Table::try_from(Self::for_profile(profile))
            .map_err(|e| Error::Config(format!("cannot encode profile defaults: {e}")))?;
        merge(&mut base, over);
        let cfg: Self = toml::Value::Table(base)
            .try_into()
            .map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        // Relative manifest paths are taken from the config's directory and
        // made absolute, so a saved copy of the config still resolves.
        let dir = std::path::absolute(path.parent().unwrap_or(Path::new("."))).map_err(|e| Error::io(path, e))?;
        for m in [&mut cfg.data.manifest, &mut cfg.data.noise_manifest]
            .into_iter()
            .flatten()
        {
            if m.is_relative() {
                *m = dir.join(&*m);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot encode config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.mask.validate()?;
        self.ema.validate()?;
        self.loss.validate()?;
        self.patch.validate()?;
        self.optimizer.validate()?;
        if let Some(plan) = self.pool_plan() {
            plan.validate()?;
        }
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::Config("steps and batch_size must be positive".into()));
        }
        let d = &self.data;
        let [lo, hi] = d.seconds;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Config(format!("utterance seconds {lo}..{hi} invalid")));
        }
        let min_samples = (lo * d.sample_rate as f64).round() as usize;
        self.model
            .frames(min_samples)
            .map_err(|e| Error::Config(e.to_string()))?;
        let [s0, s1] = d.snr_db;
        if !(s0.is_finite() && s1.is_finite() && s0 <= s1) {
            return Err(Error::Config(format!("snr range {s0}..{s1} invalid")));
        }
        if d.manifest.is_none() && d.pool_size == 0 {
            return Err(Error::Config("synthetic pool_size must be positive".into()));
        }
        if d.noise_kinds.is_empty() {
            return Err(Error::Config("noise_kinds is empty".into()));
        }
        Ok(())
    }

    /// Pool recipe of the configured ablation, if any pool is used.
    pub fn pool_plan(&self) -> Option<PoolPlan> {
        self.loss.ablation.plan(&self.negatives)
    }

    pub fn warmup_steps(&self) -> u64 {
        self.optimizer.warmup_steps.unwrap_or(self.steps / 10)
    }

    pub fn data_seed(&self) -> u64 {
        self.data.seed.unwrap_or(self.seed)
    }

    /// SHA-256 of everything that affects the loss trace; output location
    /// and checkpoint cadence are excluded.
    pub fn digest(&self) -> [u8; 32] {
        let mut c = self.clone();
        c.output_dir = None;
        c.checkpoint_every = 0;
        let json = serde_json::to_vec(&c).expect("config serialises");
        Sha256::digest(&json).into()
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::Ablation;

    #[test]
    fn profiles_validate() {
        for p in [Profile::Base, Profile::Desk, Profile::Toy] {
            TrainConfig::for_profile(p).validate().unwrap();
        }
        let base = TrainConfig::for_profile(Profile::Base);
        assert_eq!(base.model.transformer.layers, 12);
        assert_eq!(base.model.transformer.model_dim, 768);
        assert_eq!(base.model.transformer.ffn_dim, 3072);
        assert_eq!(base.model.transformer.top_m, 8);
        assert_eq!(base.optimizer.lr, 1e-4);
        assert_eq!(base.mask.prob, 0.065);
        assert_eq!(base.patch, PatchRange { lo: 30, hi: 50 });
        assert_eq!(
            (base.negatives.standard, base.negatives.non_semantic, base.negatives.k),
            (50, 50, 50)
        );
        assert_eq!(base.loss.lambda, 1.0);
        assert_eq!(base.ema, EmaSchedule::default());
    }

    #[test]
    fn toml_overrides_profile() {
        let cfg = TrainConfig::from_toml_str(
            r#"
            profile = "toy"
            steps = 12
            seed = 7
            [loss]
            ablation = "regression_only"
            [model.transformer]
            heads = 2
            "#,
        )
        .unwrap();
        assert_eq!(cfg.profile, Profile::Toy);
        assert_eq!(cfg.steps, 12);
        assert_eq!(cfg.loss.ablation, Ablation::RegressionOnly);
        assert_eq!(cfg.loss.kappa, 0.1);
        assert_eq!(cfg.model.transformer.heads, 2);
        assert_eq!(cfg.model.transformer.model_dim, 32);
        assert!(cfg.pool_plan().is_none());
    }

    #[test]
    fn bad_configs_are_rejected() {
        for text in [
            "stepz = 3",
            "profile = \"huge\"",
            "[model.transformer]\nheads = 5",
            "[negatives]\nk = 101",
            "[data]\nseconds = [0.01, 0.01]",
            "steps = 0",
            "not toml [",
        ] {
            assert!(
                matches!(TrainConfig::from_toml_str(text), Err(Error::Config(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn round_trip_and_digest() {
        let cfg = TrainConfig::for_profile(Profile::Toy);
        let back = TrainConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, cfg);
        let mut moved = cfg.clone();
        moved.output_dir = Some("/tmp/x".into());
        moved.checkpoint_every = 5;
        assert_eq!(moved.digest(), cfg.digest());
        let mut other = cfg.clone();
        other.seed += 1;
        assert_ne!(other.digest(), cfg.digest());
    }

    #[test]
    fn warmup_defaults_to_a_tenth() {
        let mut cfg = TrainConfig::for_profile(Profile::Toy);
        assert_eq!(cfg.warmup_steps(), 30);
        cfg.optimizer.warmup_steps = Some(0);
        assert_eq!(cfg.warmup_steps(), 0);
    }
}
