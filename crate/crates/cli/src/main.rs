// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rd2v_core::selfcheck::{gradient_suite, TOLERANCE};
use rd2v_core::signal::{
    load_wav, mix_at_snr, save_wav, save_wav_float, snr_db, synth_noise, synth_utterance, write_manifest,
};
use rd2v_core::train::corpus::loop_to;
use rd2v_core::train::{diagnose, run, Corpus, Profile};
use rd2v_core::{Checkpoint, Error, NoiseKind, SeededRng, TrainConfig};

const USAGE: u8 = 2;
const FAILURE: u8 = 3;

#[derive(Parser)]
#[command(name = "rd2v", version, about = "Noise-robust teacher-student speech pre-training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pre-training loop, writing train.jsonl and checkpoints.
    Pretrain(PretrainArgs),
    /// Similarity histograms and collapse metric of checkpoints, or the SNR
    /// of a mixture.
    Diagnose(DiagnoseArgs),
    /// Mix a noise file into a clean file at a given SNR.
    Mix(MixArgs),
    /// Finite-difference check of the analytic gradients.
    Gradcheck(GradcheckArgs),
    /// Write a seeded synthetic corpus of WAV files and manifests.
    SynthCorpus(SynthArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config; its `profile` key selects the defaults. Diagnose falls
    /// back to the config.toml written next to the checkpoint.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Profile used when no config file is given.
    #[arg(long, default_value = "desk")]
    profile: Profile,
}

impl ConfigArgs {
    fn load(&self) -> Result<TrainConfig, Error> {
        match &self.config {
            Some(p) => TrainConfig::load(p),
            None => Ok(TrainConfig::for_profile(self.profile)),
        }
    }
}

#[derive(Args)]
struct PretrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    /// Continue from this checkpoint; the config must match the one it was
    /// written with.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Checkpoint to analyse; repeat for a trajectory.
    #[arg(long, conflicts_with_all = ["clean", "mixed"])]
    checkpoint: Vec<PathBuf>,
    /// Utterances in the held-out probe set.
    #[arg(long, default_value_t = 16)]
    probe: usize,
    #[arg(long, default_value_t = 50)]
    bins: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for report.json and one histogram CSV per checkpoint.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Clean reference WAV (SNR mode).
    #[arg(long, requires = "mixed")]
    clean: Option<PathBuf>,
    /// Mixture WAV (SNR mode).
    #[arg(long, requires = "clean")]
    mixed: Option<PathBuf>,
}

#[derive(Args)]
struct MixArgs {
    #[arg(long)]
    clean: PathBuf,
    #[arg(long)]
    noise: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    snr: f64,
    #[arg(long)]
    out: PathBuf,
    /// Seeds the noise offset.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write 32-bit float samples instead of 16-bit PCM (no clipping).
    #[arg(long)]
    float: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 100)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 16)]
    count: usize,
    #[arg(long, default_value_t = 4)]
    noise_count: usize,
    #[arg(long, default_value_t = 1.0)]
    seconds: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => USAGE,
            Failure::Core(Error::Config(_) | Error::Io { .. } | Error::Format(_)) => USAGE,
            Failure::Core(_) => FAILURE,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "{m}"),
            Failure::Core(e) => write!(f, "{e}"),
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| {
        Failure::Core(Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report types serialise")
}

fn pretrain(a: PretrainArgs) -> Result<(), Failure> {
    let mut cfg = a.config.load()?;
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.checkpoint_every {
        cfg.checkpoint_every = n;
    }
    if a.output_dir.is_some() {
        cfg.output_dir = a.output_dir;
    }
    let dir = cfg
        .output_dir
        .clone()
        .ok_or_else(|| Failure::Usage("no output directory: pass --output-dir or set output_dir".into()))?;
    cfg.validate()?;
    let resume = a.resume.map(Checkpoint::load).transpose()?;
    std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    write_file(&dir.join("config.toml"), &cfg.to_toml_string()?)?;
    let summary = run(cfg, resume)?;
    if let Some(last) = summary.records.last() {
        eprintln!(
            "step {} total {:.6} regression {:.6} contrastive {:.6}",
            last.step, last.total, last.regression, last.contrastive
        );
    }
    for p in &summary.checkpoints {
        println!("{}", p.display());
    }
    Ok(())
}

fn diagnose_cmd(a: DiagnoseArgs) -> Result<(), Failure> {
    if let (Some(clean), Some(mixed)) = (&a.clean, &a.mixed) {
        let c = load_wav(clean)?;
        let m = load_wav(mixed)?;
        if c.len() != m.len() {
            return Err(Error::Length(format!("clean has {} samples, mixture {}", c.len(), m.len())).into());
        }
        let residual: Vec<f64> = m.samples().iter().zip(c.samples()).map(|(x, y)| x - y).collect();
        println!(
            "{}",
            to_json(&serde_json::json!({ "snr_db": snr_db(c.samples(), &residual) }))
        );
        return Ok(());
    }
    if a.checkpoint.is_empty() {
        return Err(Failure::Usage("pass --checkpoint, or --clean with --mixed".into()));
    }
    let saved = a.checkpoint[0].parent().map(|d| d.join("config.toml"));
    let cfg = match (&a.config.config, saved) {
        (None, Some(path)) if path.exists() => TrainConfig::load(path)?,
        _ => a.config.load()?,
    };
    let probe = Corpus::probe(&cfg.data, cfg.data_seed().wrapping_add(1_000_003), a.probe)?;
    let mut reports = Vec::new();
    for path in &a.checkpoint {
        let ckpt = Checkpoint::load(path)?;
        if ckpt.config_digest != cfg.digest() {
            eprintln!("warning: {} was written with a different config", path.display());
        }
        reports.push(diagnose(&cfg, &ckpt, &probe, a.bins, a.seed)?);
    }
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        for r in &reports {
            write_file(&dir.join(format!("histogram-{:08}.csv", r.step)), &r.histogram.to_csv())?;
        }
        write_file(&dir.join("report.json"), &to_json(&reports))?;
    }
    println!("{}", to_json(&reports));
    Ok(())
}

fn mix(a: MixArgs) -> Result<(), Failure> {
    let clean = load_wav(&a.clean)?;
    let noise = loop_to(&load_wav(&a.noise)?, clean.len())?;
    if noise.sample_rate() != clean.sample_rate() {
        return Err(Error::Format("clean and noise sample rates differ".into()).into());
    }
    let m = mix_at_snr(&clean, &noise, a.snr, &mut SeededRng::new(a.seed, "mix"))?;
    if a.float {
        save_wav_float(&a.out, &m.mixed)?;
    } else {
        if m.mixed.peak() > 1.0 {
            eprintln!(
                "warning: mixture peaks at {:.3}; 16-bit output clips it (use --float)",
                m.mixed.peak()
            );
        }
        save_wav(&a.out, &m.mixed)?;
    }
    let info = serde_json::json!({ "snr_db": a.snr, "gain": m.gain, "offset": m.offset });
    println!("{}", to_json(&info));
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<(), Failure> {
    if a.instances == 0 {
        return Err(Failure::Usage("--instances must be positive".into()));
    }
    let checks = gradient_suite(a.instances, a.seed)?;
    let mut worst = 0.0f64;
    for c in &checks {
        println!(
            "{:<16} {:>4} instances  max rel. error {:.3e}",
            c.name, c.instances, c.max_relative_error
        );
        worst = worst.max(c.max_relative_error);
    }
    println!("max relative error {worst:.3e} (tolerance {TOLERANCE:.0e})");
    if checks.iter().all(|c| c.passed()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("gradient check failed: {worst:.3e} >= {TOLERANCE:.0e}")).into())
    }
}

fn synth_corpus(a: SynthArgs) -> Result<(), Failure> {
    if a.count == 0 || !(a.seconds >= 0.025) {
        return Err(Failure::Usage(
            "--count must be positive and --seconds at least 0.025".into(),
        ));
    }
    let rng = SeededRng::new(a.seed, "synth-corpus");
    let write_set = |sub: &str, n: usize, make: &dyn Fn(usize, u64) -> Result<rd2v_core::Waveform, Error>| {
        let dir = a.out.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        let mut entries = Vec::new();
        for i in 0..n {
            let seed = rng.child(format!("{sub}/{i}")).int_inclusive(0, u32::MAX as usize) as u64;
            let name = format!("{sub}/{sub}-{i:04}.wav");
            save_wav(a.out.join(&name), &make(i, seed)?)?;
            entries.push(name);
        }
        write_manifest(a.out.join(format!("{sub}.lst")), &entries)?;
        Ok::<usize, Error>(n)
    };
    let rate = rd2v_core::signal::DEFAULT_SAMPLE_RATE;
    let clean = write_set("clean", a.count, &|_, s| synth_utterance(s, a.seconds, rate))?;
    let noise = write_set("noise", a.noise_count, &|i, s| {
        let kind = if i % 2 == 0 {
            NoiseKind::White
        } else {
            NoiseKind::BandLimited
        };
        synth_noise(s, a.seconds + 0.25, kind, rate)
    })?;
    println!("wrote {clean} clean and {noise} noise files to {}", a.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Pretrain(a) => pretrain(a),
        Command::Diagnose(a) => diagnose_cmd(a),
        Command::Mix(a) => mix(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::SynthCorpus(a) => synth_corpus(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
