//! Waveforms: synthetic utterances and noise, SNR mixing, WAV I/O.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::SeededRng;

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Mono audio. Nominal range is [-1, 1]; mixtures may exceed it slightly
/// and are only clamped when quantised to 16-bit PCM.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Length("waveform has no samples".into()));
        }
        if sample_rate == 0 {
            return Err(Error::Domain("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Numeric(format!("non-finite sample at index {i}")));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0_f64, |m, s| m.max(s.abs()))
    }
}

/// Noise flavours available to [`synth_noise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    White,
    BandLimited,
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "white" => Ok(NoiseKind::White),
            "band-limited" | "band_limited" => Ok(NoiseKind::BandLimited),
            other => Err(Error::Config(format!("unknown noise kind {other:?}"))),
        }
    }
}

/// Parameters of one mixing event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixSpec {
    pub snr_db: f64,
    pub noise_source: String,
    pub seed: u64,
}

/// Mean squared amplitude.
pub fn power(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64
}

/// `10 log10(P(signal) / P(noise))`.
pub fn snr_db(signal: &[f64], noise: &[f64]) -> f64 {
    10.0 * (power(signal) / power(noise)).log10()
}

/// Result of [`mix_at_snr`] with the quantities needed to audit it.
#[derive(Clone, Debug)]
pub struct Mixture {
    pub mixed: Waveform,
    pub gain: f64,
    pub offset: usize,
}

impl Mixture {
    /// The scaled noise that was added, `gain * noise[offset..offset+n]`.
    pub fn scaled_noise(&self, noise: &Waveform) -> Vec<f64> {
        let n = self.mixed.len();
        noise.samples()[self.offset..self.offset + n]
            .iter()
            .map(|s| self.gain * s)
            .collect()
    }
}

/// Adds a randomly positioned noise segment scaled so the clean-to-noise
/// power ratio equals `snr_db` over the whole utterance.
pub fn mix_at_snr(clean: &Waveform, noise: &Waveform, snr_db: f64, rng: &mut SeededRng) -> Result<Mixture> {
    let n = clean.len();
    if noise.len() < n {
        return Err(Error::Length(format!(
            "noise has {} samples but the clean utterance needs {n}",
            noise.len()
        )));
    }
    if !snr_db.is_finite() {
        return Err(Error::Domain(format!("snr {snr_db} dB is not finite")));
    }
    let offset = rng.int_inclusive(0, noise.len() - n);
    let segment = &noise.samples()[offset..offset + n];
    let p_clean = power(clean.samples());
    let p_noise = power(segment);
    if p_clean <= 0.0 {
        return Err(Error::Domain("clean utterance has zero power".into()));
    }
    if p_noise <= 0.0 {
        return Err(Error::Domain("noise segment has zero power".into()));
    }
    let gain = (p_clean / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    let mixed = clean.samples().iter().zip(segment).map(|(c, s)| c + gain * s).collect();
    Ok(Mixture {
        mixed: Waveform::new(mixed, clean.sample_rate())?,
        gain,
        offset,
    })
}

fn sample_count(duration_s: f64, sample_rate: u32) -> Result<usize> {
    if !(duration_s > 0.0) || !duration_s.is_finite() {
        return Err(Error::Domain(format!("duration {duration_s} s must be positive")));
    }
    if sample_rate == 0 {
        return Err(Error::Domain("sample rate must be positive".into()));
    }
    Ok(((duration_s * sample_rate as f64).round() as usize).max(1))
}

/// Deterministic "speech-like" signal: 3 to 8 partials, each with its own
/// slow amplitude modulation, under a raised-cosine onset/offset, scaled to
/// a peak of 0.9.
pub fn synth_utterance(seed: u64, duration_s: f64, sample_rate: u32) -> Result<Waveform> {
    let n = sample_count(duration_s, sample_rate)?;
    let mut rng = SeededRng::new(seed, "synth/utterance");
    let partials = rng.int_inclusive(3, 8);
    let nyquist = sample_rate as f64 / 2.0;
    let f_hi = 4000.0_f64.min(0.45 * nyquist);
    let f_lo = 80.0_f64.min(0.5 * f_hi);
    struct Partial {
        freq: f64,
        amp: f64,
        phase: f64,
        mod_rate: f64,
        mod_phase: f64,
        glide: f64,
    }
    let parts: Vec<Partial> = (0..partials)
        .map(|_| Partial {
            freq: (f_lo.ln() + rng.unit() * (f_hi / f_lo).ln()).exp(),
            amp: 0.2 + 0.8 * rng.unit(),
            phase: 2.0 * PI * rng.unit(),
            mod_rate: 1.0 + 5.0 * rng.unit(),
            mod_phase: 2.0 * PI * rng.unit(),
            glide: 0.2 * (rng.unit() - 0.5),
        })
        .collect();

    let sr = sample_rate as f64;
    let ramp = (0.05 * sr).max(1.0);
    let mut out: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let edge = (i as f64).min((n - 1 - i) as f64);
            let env = if edge < ramp {
                0.5 - 0.5 * (PI * edge / ramp).cos()
            } else {
                1.0
            };
            let s: f64 = parts
                .iter()
                .map(|p| {
                    let m = 0.5 + 0.5 * (2.0 * PI * p.mod_rate * t + p.mod_phase).sin();
                    let f = p.freq * (1.0 + p.glide * t);
                    p.amp * m * (2.0 * PI * f * t + p.phase).sin()
                })
                .sum();
            env * s
        })
        .collect();

    let peak = out.iter().fold(0.0_f64, |m, s| m.max(s.abs()));
    if peak > 0.0 {
        let k = 0.9 / peak;
        out.iter_mut().for_each(|s| *s *= k);
    } else {
        // A single-sample utterance sits on the envelope zero.
        out.iter_mut().for_each(|s| *s = 0.9);
    }
    Waveform::new(out, sample_rate)
}

/// Deterministic noise scaled to an RMS of 0.1.
pub fn synth_noise(seed: u64, duration_s: f64, kind: NoiseKind, sample_rate: u32) -> Result<Waveform> {
    let n = sample_count(duration_s, sample_rate)?;
    let mut rng = SeededRng::new(seed, "synth/noise");
    let white: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    let mut out = match kind {
        NoiseKind::White => white,
        NoiseKind::BandLimited => {
            // Two-pole resonator centred between 300 Hz and 3 kHz.
            let sr = sample_rate as f64;
            let centre = (300.0 + 2700.0 * rng.unit()).min(0.4 * sr);
            let r = 0.97;
            let theta = 2.0 * PI * centre / sr;
            let (a1, a2) = (2.0 * r * theta.cos(), -r * r);
            let (mut y1, mut y2) = (0.0, 0.0);
            white
                .iter()
                .map(|&x| {
                    let y = x + a1 * y1 + a2 * y2;
                    y2 = y1;
                    y1 = y;
                    y
                })
                .collect()
        }
    };
    let rms = power(&out).sqrt();
    if rms > 0.0 {
        let k = 0.1 / rms;
        out.iter_mut().for_each(|s| *s *= k);
    }
    Waveform::new(out, sample_rate)
}

/// Reads a mono WAV file, 16-bit PCM or 32-bit float.
pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Format(format!(
            "{}: expected mono, found {} channels",
            path.display(),
            spec.channels
        )));
    }
    let samples = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<Vec<_>, _>>(),
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<Vec<_>, _>>(),
        (format, bits) => {
            return Err(Error::Format(format!(
                "{}: expected 16-bit PCM or 32-bit float, found {format:?} with {bits} bits",
                path.display()
            )))
        }
    }
    .map_err(|e| wav_error(path, e))?;
    if samples.is_empty() {
        return Err(Error::Format(format!("{}: no audio samples", path.display())));
    }
    Waveform::new(samples, spec.sample_rate)
}

/// Writes 16-bit PCM mono, rounding to the nearest level and clamping to
/// the representable range.
pub fn save_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_error(path, e))?;
    for &s in w.samples() {
        let q = (s * 32768.0).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        writer.write_sample(q).map_err(|e| wav_error(path, e))?;
    }
    writer.finalize().map_err(|e| wav_error(path, e))
}

/// Writes 32-bit float mono without clamping.
pub fn save_wav_float(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate(),
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_error(path, e))?;
    for &s in w.samples() {
        writer.write_sample(s as f32).map_err(|e| wav_error(path, e))?;
    }
    writer.finalize().map_err(|e| wav_error(path, e))
}

fn wav_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io)
            if matches!(
                io.kind(),
                std::io::ErrorKind::NotFound | std::io::ErrorKind::PermissionDenied
            ) =>
        {
            Error::io(path, io)
        }
        hound::Error::IoError(io) => Error::Format(format!("{}: unreadable WAV data: {io}", path.display())),
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

/// Reads a corpus manifest: one relative path per line, resolved against
/// the manifest's directory. Blank lines are skipped.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<std::path::PathBuf>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| base.join(l))
        .collect())
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[String]) -> Result<()> {
    let path = path.as_ref();
    let mut text = entries.join("\n");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wave(samples: Vec<f64>) -> Waveform {
        Waveform::new(samples, DEFAULT_SAMPLE_RATE).unwrap()
    }

    #[test]
    fn power_examples() {
        assert_eq!(power(&[0.0; 8]), 0.0);
        assert_eq!(power(&[0.5; 8]), 0.25);
        let n = 1600; // 10 whole periods of a 100 Hz sine
        let sine: Vec<f64> = (0..n).map(|i| (2.0 * PI * 100.0 * i as f64 / 16000.0).sin()).collect();
        assert!((power(&sine) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn gain_at_equal_power() {
        // Constant-magnitude signals of power 0.5 make the gain exact.
        let a = 0.5f64.sqrt();
        let clean = wave(vec![a; 64]);
        let noise = wave((0..64).map(|i| if i % 2 == 0 { a } else { -a }).collect());
        let mut rng = SeededRng::new(0, "mix");
        let m = mix_at_snr(&clean, &noise, 0.0, &mut rng).unwrap();
        assert!((m.gain - 1.0).abs() < 1e-12);
        let m = mix_at_snr(&clean, &noise, 20.0, &mut rng).unwrap();
        assert!((m.gain - 0.1).abs() < 1e-12);
    }

    #[test]
    fn mix_errors() {
        let mut rng = SeededRng::new(0, "mix");
        let clean = wave(vec![0.1; 10]);
        assert!(matches!(
            mix_at_snr(&clean, &wave(vec![0.1; 9]), 5.0, &mut rng),
            Err(Error::Length(_))
        ));
        assert!(matches!(
            mix_at_snr(&wave(vec![0.0; 10]), &wave(vec![0.1; 10]), 5.0, &mut rng),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            mix_at_snr(&clean, &wave(vec![0.0; 10]), 5.0, &mut rng),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn mixing_is_additive_and_reproducible() {
        let clean = synth_utterance(1, 0.25, DEFAULT_SAMPLE_RATE).unwrap();
        let noise = synth_noise(2, 0.5, NoiseKind::BandLimited, DEFAULT_SAMPLE_RATE).unwrap();
        let a = mix_at_snr(&clean, &noise, 7.5, &mut SeededRng::new(9, "mix")).unwrap();
        let b = mix_at_snr(&clean, &noise, 7.5, &mut SeededRng::new(9, "mix")).unwrap();
        assert_eq!(a.mixed, b.mixed);
        let scaled = a.scaled_noise(&noise);
        for ((m, c), s) in a.mixed.samples().iter().zip(clean.samples()).zip(&scaled) {
            let residual = m - c;
            assert!((residual - s).abs() <= f64::EPSILON * m.abs().max(1.0));
        }
        assert!((snr_db(clean.samples(), &scaled) - 7.5).abs() < 1e-6);
    }

    #[test]
    fn utterance_contract() {
        let a = synth_utterance(42, 1.0, 16_000).unwrap();
        let b = synth_utterance(42, 1.0, 16_000).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 16_000);
        assert!((a.peak() - 0.9).abs() < 1e-9);
        assert_ne!(a, synth_utterance(43, 1.0, 16_000).unwrap());
        assert!(synth_utterance(1, 0.0, 16_000).is_err());
    }

    #[test]
    fn noise_contract() {
        for kind in [NoiseKind::White, NoiseKind::BandLimited] {
            let a = synth_noise(5, 0.5, kind, 16_000).unwrap();
            assert_eq!(a, synth_noise(5, 0.5, kind, 16_000).unwrap());
            assert!((power(a.samples()).sqrt() - 0.1).abs() < 1e-6);
        }
        assert!(matches!("pink".parse::<NoiseKind>(), Err(Error::Config(_))));
    }

    #[test]
    fn white_noise_is_uncorrelated() {
        let w = synth_noise(77, 10.0, NoiseKind::White, 16_000).unwrap();
        let s = w.samples();
        assert_eq!(s.len(), 160_000);
        let lag1: f64 = s.windows(2).map(|p| p[0] * p[1]).sum::<f64>() / (s.len() - 1) as f64;
        let r = lag1 / power(s);
        assert!(r.abs() < 0.02, "lag-1 autocorrelation {r}");
    }

    #[test]
    fn wav_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let ramp = wave((0..100).map(|i| -0.99 + 1.98 * i as f64 / 99.0).collect());
        let p = dir.path().join("ramp.wav");
        save_wav(&p, &ramp).unwrap();
        let back = load_wav(&p).unwrap();
        assert_eq!(back.sample_rate(), DEFAULT_SAMPLE_RATE);
        let worst = ramp
            .samples()
            .iter()
            .zip(back.samples())
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(worst <= 1.0 / 32768.0);

        let loud = wave(vec![1.5, -2.25, 0.1]);
        let f = dir.path().join("loud.wav");
        save_wav_float(&f, &loud).unwrap();
        let back = load_wav(&f).unwrap();
        assert_eq!(back.samples()[..2], [1.5, -2.25]);
        assert!((back.samples()[2] - 0.1).abs() < 1e-8);

        let stereo = dir.path().join("stereo.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16_000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&stereo, spec).unwrap();
        for _ in 0..20 {
            w.write_sample(0i16).unwrap();
        }
        w.finalize().unwrap();
        assert!(matches!(load_wav(&stereo), Err(Error::Format(_))));

        let wide = dir.path().join("wide.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16_000,
            bits_per_sample: 24,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&wide, spec).unwrap();
        w.write_sample(0i32).unwrap();
        w.finalize().unwrap();
        assert!(matches!(load_wav(&wide), Err(Error::Format(_))));

        let empty = dir.path().join("empty.wav");
        std::fs::write(&empty, b"").unwrap();
        assert!(matches!(load_wav(&empty), Err(Error::Format(_))));
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("manifest.txt");
        write_manifest(&p, &["a.wav".into(), "sub/b.wav".into()]).unwrap();
        let entries = read_manifest(&p).unwrap();
        assert_eq!(entries, vec![dir.path().join("a.wav"), dir.path().join("sub/b.wav")]);
    }
}
