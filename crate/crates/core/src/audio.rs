//! Audio sources: WAV I/O, sample-rate conversion, synthetic speakers, and
//! noise generators.
//!
//! Everything downstream assumes 16 kHz mono f64 samples in [-1, 1];
//! `load_wav` normalizes any 16-bit PCM RIFF file to that form. Synthetic
//! speakers are source-filter voices: a harmonic source with per-voice
//! spectral tilt and vibrato ("jitter"), filtered through a Lorentzian
//! formant envelope that tracks a random vowel trajectory, gated into
//! voiced bursts separated by near-silence. Identity sits in the tract
//! ratios, tilt, breath, and pitch range; the vowel content and pitch
//! glides are per-utterance randomness shared by all voices.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Sample rate every buffer is normalized to.
pub const SAMPLE_RATE: u32 = 16_000;

/// Bumped whenever generated audio changes for the same inputs, so cached
/// datasets built by an older synthesizer are never silently reused.
pub const SYNTH_VERSION: u32 = 6;

const PCM_SCALE: f64 = 32_767.0;
const RESAMPLE_TAPS: f64 = 24.0;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArg("sample_rate must be positive".into()));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |p, &s| p.max(s.abs()))
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let e: f64 = self.samples.iter().map(|s| s * s).sum();
        (e / self.samples.len() as f64).sqrt()
    }

    /// Scale so the largest |sample| is exactly 1. Silence is left unchanged.
    pub fn peak_normalize(&mut self) {
        let p = self.peak();
        if p > 0.0 {
            for s in &mut self.samples {
                *s /= p;
            }
        }
    }
}

/// Read a 16-bit PCM RIFF file, mix channels down to mono, and resample to
/// 16 kHz.
pub fn load_wav<P: AsRef<Path>>(path: P) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let wav_err = |msg: String| Error::Wav { path: path.to_path_buf(), msg };
    let mut reader = hound::WavReader::open(path).map_err(|e| wav_err(e.to_string()))?;
    let spec = reader.spec();
    if spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(wav_err(format!(
            "expected 16-bit integer PCM, got {}-bit {:?}",
            spec.bits_per_sample, spec.sample_format
        )));
    }
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(wav_err("zero channels".into()));
    }
    let raw: std::result::Result<Vec<i16>, _> = reader.samples::<i16>().collect();
    let raw = raw.map_err(|e| wav_err(e.to_string()))?;
    if raw.is_empty() {
        return Err(Error::EmptyInput(format!("{} holds no samples", path.display())));
    }
    let frames = raw.len() / channels;
    let mut samples = Vec::with_capacity(frames);
    for f in 0..frames {
        let sum: f64 = (0..channels).map(|c| raw[f * channels + c] as f64).sum();
        samples.push(sum / channels as f64 / PCM_SCALE);
    }
    resample(&AudioBuffer::new(samples, spec.sample_rate)?, SAMPLE_RATE)
}

/// Write a buffer as mono 16-bit PCM at its own sample rate.
pub fn save_wav<P: AsRef<Path>>(path: P, buf: &AudioBuffer) -> Result<()> {
    let path = path.as_ref();
    if buf.samples.is_empty() {
        return Err(Error::EmptyInput("refusing to write a wav with no samples".into()));
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: buf.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wav_err = |msg: String| Error::Wav { path: path.to_path_buf(), msg };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_err(e.to_string()))?;
    for &s in &buf.samples {
        let q = (s * PCM_SCALE).round().clamp(-32_768.0, 32_767.0) as i16;
        writer.write_sample(q).map_err(|e| wav_err(e.to_string()))?;
    }
    writer.finalize().map_err(|e| wav_err(e.to_string()))
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Windowed-sinc sample-rate conversion. The low-pass cutoff tracks the
/// smaller of the two Nyquist frequencies, so both up- and downsampling
/// keep tones below the common band intact.
pub fn resample(buf: &AudioBuffer, target_rate: u32) -> Result<AudioBuffer> {
    if target_rate == 0 {
        return Err(Error::InvalidArg("target_rate must be positive".into()));
    }
    if target_rate == buf.sample_rate {
        return Ok(buf.clone());
    }
    let n = buf.samples.len();
    let n_out = ((n as u64 * target_rate as u64 + buf.sample_rate as u64 / 2)
        / buf.sample_rate as u64) as usize;
    let ratio = target_rate as f64 / buf.sample_rate as f64;
    let fc = ratio.min(1.0);
    let half = RESAMPLE_TAPS / fc;
    let mut out = Vec::with_capacity(n_out);
    for j in 0..n_out {
        let t = j as f64 / ratio;
        let lo = (t - half).ceil().max(0.0) as usize;
        let hi = ((t + half).floor() as isize).min(n as isize - 1);
        let mut acc = 0.0;
        let mut i = lo as isize;
        while i <= hi {
            let d = i as f64 - t;
            let u = d / half;
            let w = 0.5 * (1.0 + (PI * u).cos());
            acc += buf.samples[i as usize] * fc * sinc(fc * d) * w;
            i += 1;
        }
        out.push(acc);
    }
    AudioBuffer::new(out, target_rate)
}

/// Hann-windowed FFT peak of a whole buffer, in Hz. Bin 0 is skipped.
pub fn dominant_frequency(samples: &[f64], sample_rate: u32) -> f64 {
    let n = samples.len();
    if n < 2 {
        return 0.0;
    }
    let mut buf: Vec<Complex<f64>> = samples
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let w = 0.5 * (1.0 - (2.0 * PI * i as f64 / n as f64).cos());
            Complex::new(s * w, 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let mut best = (1, 0.0);
    for (k, v) in buf.iter().enumerate().take(n / 2 + 1).skip(1) {
        let m = v.norm_sqr();
        if m > best.1 {
            best = (k, m);
        }
    }
    best.0 as f64 * sample_rate as f64 / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Formant {
    pub center_hz: f64,
    pub bandwidth_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerProfile {
    pub pitch_hz: f64,
    pub formants: Vec<Formant>,
    /// Relative depth of the slow pitch vibrato, 0..=0.1.
    pub jitter: f64,
    /// Spectral tilt: harmonic k is attenuated by (k+1)^-tilt, 1..=4.
    #[serde(default = "default_tilt")]
    pub tilt: f64,
    /// Aspiration-noise level mixed into voiced bursts, 0..=0.01.
    #[serde(default = "default_breath")]
    pub breath: f64,
    pub seed: u64,
}

fn default_tilt() -> f64 {
    2.0
}

fn default_breath() -> f64 {
    4e-4
}

impl SpeakerProfile {
    pub fn new(pitch_hz: f64, formants: Vec<Formant>, jitter: f64, seed: u64) -> Result<Self> {
        let p = Self {
            pitch_hz,
            formants,
            jitter,
            tilt: default_tilt(),
            breath: default_breath(),
            seed,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(60.0..=400.0).contains(&self.pitch_hz) {
            return Err(Error::InvalidArg(format!(
                "pitch_hz {} outside 60..=400",
                self.pitch_hz
            )));
        }
        if self.formants.is_empty() {
            return Err(Error::InvalidArg("profile needs at least one formant".into()));
        }
        let mut prev = 0.0;
        for f in &self.formants {
            if f.center_hz <= prev {
                return Err(Error::InvalidArg(
                    "formant centers must be strictly increasing and positive".into(),
                ));
            }
            if f.bandwidth_hz <= 0.0 {
                return Err(Error::InvalidArg("formant bandwidth must be positive".into()));
            }
            prev = f.center_hz;
        }
        if !(0.0..=0.1).contains(&self.jitter) {
            return Err(Error::InvalidArg(format!("jitter {} outside 0..=0.1", self.jitter)));
        }
        if !(1.0..=4.0).contains(&self.tilt) {
            return Err(Error::InvalidArg(format!("tilt {} outside 1..=4", self.tilt)));
        }
        if !(0.0..=0.01).contains(&self.breath) {
            return Err(Error::InvalidArg(format!("breath {} outside 0..=0.01", self.breath)));
        }
        Ok(())
    }

}

#[derive(Deserialize)]
struct ProfileFile {
    speaker: Vec<SpeakerProfile>,
}

/// Load speaker profiles from a TOML file with one `[[speaker]]` table per
/// voice.
pub fn load_profiles<P: AsRef<Path>>(path: P) -> Result<Vec<SpeakerProfile>> {
    let text = std::fs::read_to_string(path.as_ref())?;
    let parsed: ProfileFile =
        toml::from_str(&text).map_err(|e| Error::Config(format!("profile file: {e}")))?;
    if parsed.speaker.is_empty() {
        return Err(Error::EmptyInput("profile file lists no speakers".into()));
    }
    for p in &parsed.speaker {
        p.validate()?;
    }
    Ok(parsed.speaker)
}

/// Neutral vocal-tract formant centers; a profile's formants are read as
/// deviations from these, so voices are ratios, not absolute positions.
const NEUTRAL_FORMANTS: [f64; 3] = [500.0, 1500.0, 2500.0];

/// Deterministically derive `n` distinct voices from one master seed.
/// Pitch, tract scale, spectral tilt, and breathiness are independently
/// stratified shuffled grids with enough wobble that neighboring voices
/// overlap on any one axis: no single raw feature identifies a speaker,
/// only the joint signature does — and a joint-separation floor keeps
/// every pair of voices distinguishable in principle.
pub fn generate_profiles(n: usize, master_seed: u64) -> Vec<SpeakerProfile> {
    let mut rng = ChaCha8Rng::from_seed(mix_seed(master_seed, 0x9e3779b97f4a7c15));
    // Slot ranks per axis: four independent shuffles, redrawn (bounded, so
    // still deterministic) until every pair of voices is far apart in the
    // joint rank space. Without the joint-gap floor some pair can land
    // adjacent on most axes at once and be irrecoverably confusable.
    let shuffle = |rng: &mut ChaCha8Rng| -> Vec<usize> {
        let mut v: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            v.swap(i, rng.random_range(0..=i));
        }
        v
    };
    let min_joint_gap = |axes: &[Vec<usize>; 4]| -> usize {
        let mut min = usize::MAX;
        for a in 0..n {
            for b in a + 1..n {
                let d: usize = axes.iter().map(|ranks| ranks[a].abs_diff(ranks[b])).sum();
                min = min.min(d);
            }
        }
        min
    };
    let mut best = [shuffle(&mut rng), shuffle(&mut rng), shuffle(&mut rng), shuffle(&mut rng)];
    let mut best_gap = min_joint_gap(&best);
    let target = (n / 2).max(1);
    for _ in 0..50 {
        if best_gap >= target {
            break;
        }
        let ranks =
            [shuffle(&mut rng), shuffle(&mut rng), shuffle(&mut rng), shuffle(&mut rng)];
        let gap = min_joint_gap(&ranks);
        if gap > best_gap {
            best_gap = gap;
            best = ranks;
        }
    }
    let grid = |lo: f64, hi: f64, ranks: &[usize]| -> Vec<f64> {
        ranks.iter().map(|&r| lo + (hi - lo) * (r as f64 + 0.5) / n as f64).collect()
    };
    let pitch_slots = grid(100.0, 190.0, &best[0]);
    let scale_slots = grid(0.78, 1.22, &best[1]);
    let tilt_slots = grid(1.3, 2.8, &best[2]);
    let breath_slots = grid(1e-4, 1.2e-3, &best[3]);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let pitch = (pitch_slots[i] + rng.random_range(-3.0..3.0)).clamp(60.0, 400.0);
        let scale = scale_slots[i] + rng.random_range(-0.008..0.008);
        let widths = [
            rng.random_range(70.0..110.0),
            rng.random_range(90.0..160.0),
            rng.random_range(150.0..250.0),
        ];
        let formants = NEUTRAL_FORMANTS
            .iter()
            .zip(widths)
            .map(|(&c, bandwidth_hz)| Formant {
                center_hz: c * scale * rng.random_range(0.985..1.015),
                bandwidth_hz,
            })
            .collect();
        let jitter = rng.random_range(0.005..0.02);
        let tilt = tilt_slots[i] + rng.random_range(-0.05..0.05);
        let breath = (breath_slots[i] + rng.random_range(-4e-5..4e-5)).max(1e-5);
        let seed = rng.random::<u64>();
        out.push(SpeakerProfile { pitch_hz: pitch, formants, jitter, tilt, breath, seed });
    }
    out
}

fn mix_seed(a: u64, b: u64) -> [u8; 32] {
    let mut s = [0u8; 32];
    s[0..8].copy_from_slice(&a.to_le_bytes());
    s[8..16].copy_from_slice(&b.to_le_bytes());
    s[16..24].copy_from_slice(&a.wrapping_mul(0x9e3779b97f4a7c15).to_le_bytes());
    s[24..32].copy_from_slice(&(b.rotate_left(32) ^ a).to_le_bytes());
    s
}

/// Vowel formant targets (F1, F2, F3) in the neutral tract — the shared
/// "content" inventory every voice articulates. Within-speaker variation
/// from moving across these dwarfs the between-speaker tract ratios, so
/// speaker identity is not readable from any single frame's raw layout.
const VOWELS: [[f64; 3]; 8] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [300.0, 870.0, 2240.0],
    [530.0, 1840.0, 2480.0],
    [570.0, 840.0, 2410.0],
    [660.0, 1720.0, 2410.0],
    [490.0, 1350.0, 1690.0],
    [440.0, 1020.0, 2240.0],
];

struct Burst {
    start_s: f64,
    len_s: f64,
    vib_rate: f64,
    vib_phase: f64,
    /// Pitch multipliers at burst start/end; f0 glides between them.
    pitch_rise: (f64, f64),
    /// Vowel sequence with per-vowel hold lengths in seconds.
    plan: Vec<(usize, f64)>,
}

/// Piecewise vowel trajectory: holds with raised-cosine glides between
/// consecutive targets. Returns interpolation weights (index a, index b,
/// mix in [0,1]).
fn vowel_at(plan: &[(usize, f64)], t: f64, glide_s: f64) -> (usize, usize, f64) {
    let mut acc = 0.0;
    for (i, &(v, hold)) in plan.iter().enumerate() {
        if t < acc + hold || i == plan.len() - 1 {
            let next = plan.get(i + 1).map_or(v, |&(nv, _)| nv);
            let into_glide = t - (acc + hold - glide_s);
            if into_glide > 0.0 && next != v {
                let u = (into_glide / glide_s).clamp(0.0, 1.0);
                return (v, next, 0.5 * (1.0 - (PI * u).cos()));
            }
            return (v, v, 0.0);
        }
        acc += hold;
    }
    let last = plan.last().map_or(0, |&(v, _)| v);
    (last, last, 0.0)
}

/// Synthesize one utterance: voiced bursts of 1.1-1.6 s separated by
/// 0.3-0.6 s gaps. Each burst is a harmonic stack following a random
/// pitch glide, shaped by a vowel trajectory rendered through the voice's
/// tract ratios, with the voice's spectral tilt and breath noise on top,
/// 10 ms raised-cosine edges, and a -80 dB floor. Peak-normalized.
///
/// Deterministic in (profile, seed).
pub fn synth_utterance(profile: &SpeakerProfile, duration_s: f64, seed: u64) -> Result<AudioBuffer> {
    profile.validate()?;
    if duration_s <= 0.0 {
        return Err(Error::InvalidArg("duration must be positive".into()));
    }
    let sr = SAMPLE_RATE as f64;
    let n = (duration_s * sr).round() as usize;
    let mut rng = ChaCha8Rng::from_seed(mix_seed(profile.seed, seed));

    let rolloff = profile.tilt;
    let breath = profile.breath;
    // Tract ratios: how this voice scales the neutral vowel space.
    let ratios: Vec<f64> = profile
        .formants
        .iter()
        .zip(NEUTRAL_FORMANTS)
        .map(|(f, neutral)| f.center_hz / neutral)
        .collect();

    let mut bursts = Vec::new();
    let mut t = 0.05;
    while t < duration_s {
        let len_s = rng.random_range(1.1..1.6);
        let gap = rng.random_range(0.3..0.6);
        let mut plan = Vec::new();
        let mut planned = 0.0;
        while planned < len_s {
            let hold = rng.random_range(0.12..0.30);
            plan.push((rng.random_range(0..VOWELS.len()), hold));
            planned += hold;
        }
        bursts.push(Burst {
            start_s: t,
            len_s,
            vib_rate: rng.random_range(2.5..4.5),
            vib_phase: rng.random_range(0.0..2.0 * PI),
            pitch_rise: (rng.random_range(0.9..1.15), rng.random_range(0.9..1.15)),
            plan,
        });
        t += len_s + gap;
    }

    // Highest harmonic that stays below Nyquist at the top of the glide.
    let max_f0 = profile.pitch_hz * 1.15 * (1.0 + profile.jitter);
    let k_max = ((0.95 * sr / 2.0 / max_f0).floor() as usize).clamp(1, 64);
    let glide_s = 0.06;
    const AMP_BLOCK: usize = 32;

    let fade = (0.010 * sr).round() as usize;
    let mut y = vec![0.0f64; n];
    let mut amps = vec![0.0f64; k_max];
    for b in &bursts {
        let s0 = (b.start_s * sr).round() as usize;
        let s1 = (((b.start_s + b.len_s) * sr).round() as usize).min(n);
        if s0 >= s1 {
            continue;
        }
        let phase0: Vec<(f64, f64)> = (0..k_max)
            .map(|_| {
                let p = rng.random_range(0.0..2.0 * PI);
                (p.cos(), p.sin())
            })
            .collect();
        let mut phi = 0.0f64;
        for idx in s0..s1 {
            let tt = (idx - s0) as f64 / sr;
            if (idx - s0) % AMP_BLOCK == 0 {
                // Re-render the spectral envelope for the current vowel.
                let (va, vb, mix) = vowel_at(&b.plan, tt, glide_s);
                let centers: Vec<f64> = (0..ratios.len())
                    .map(|f| {
                        let a = VOWELS[va][f.min(2)];
                        let c = VOWELS[vb][f.min(2)];
                        ratios[f] * (a + (c - a) * mix)
                    })
                    .collect();
                for (k, a) in amps.iter_mut().enumerate() {
                    let f = (k + 1) as f64 * profile.pitch_hz;
                    let mut e = 0.1;
                    for (c, fo) in centers.iter().zip(&profile.formants) {
                        let d = (f - c) / (fo.bandwidth_hz / 2.0);
                        e += 1.0 / (1.0 + d * d);
                    }
                    *a = e / ((k + 1) as f64).powf(rolloff);
                }
            }
            let glide = b.pitch_rise.0 + (b.pitch_rise.1 - b.pitch_rise.0) * (tt / b.len_s);
            let f0 = profile.pitch_hz
                * glide
                * (1.0 + profile.jitter * (2.0 * PI * b.vib_rate * tt + b.vib_phase).sin());
            phi += 2.0 * PI * f0 / sr;
            // sin/cos of k*phi by recurrence; per-harmonic random phase is
            // folded in through the angle-sum identity.
            let (s1p, c1p) = phi.sin_cos();
            let mut sk = s1p;
            let mut ck = c1p;
            let mut acc = 0.0;
            for k in 0..k_max {
                let (c0, s0p) = phase0[k];
                acc += amps[k] * (sk * c0 + ck * s0p);
                let ns = sk * c1p + ck * s1p;
                let nc = ck * c1p - sk * s1p;
                sk = ns;
                ck = nc;
            }
            acc += breath * rng.random_range(-1.0..1.0);
            let head = (idx - s0) as f64 / fade as f64;
            let tail = (s1 - 1 - idx) as f64 / fade as f64;
            let u = head.min(tail).min(1.0);
            let w = 0.5 * (1.0 - (PI * u.clamp(0.0, 1.0)).cos());
            y[idx] = acc * w;
        }
    }
    for v in &mut y {
        *v += rng.random_range(-1e-4..1e-4);
    }
    let mut buf = AudioBuffer::new(y, SAMPLE_RATE)?;
    buf.peak_normalize();
    Ok(buf)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    White,
    Pink,
    Babble,
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "white" => Ok(Self::White),
            "pink" => Ok(Self::Pink),
            "babble" => Ok(Self::Babble),
            other => Err(Error::InvalidArg(format!("unknown noise kind '{other}'"))),
        }
    }
}

/// Deterministic noise generator. All kinds come back zero-mean and
/// peak-normalized to 1.
///
/// White is iid uniform; pink is synthesized in the frequency domain with
/// 1/sqrt(f) magnitudes (so power falls 3 dB per octave); babble is
/// speech-band-shaped noise with a slow 2-6 Hz amplitude wobble.
pub fn gen_noise(kind: NoiseKind, duration_s: f64, seed: u64) -> Result<AudioBuffer> {
    if duration_s <= 0.0 {
        return Err(Error::InvalidArg("duration must be positive".into()));
    }
    let sr = SAMPLE_RATE as f64;
    let n = (duration_s * sr).round() as usize;
    if n == 0 {
        return Err(Error::InvalidArg("duration rounds to zero samples".into()));
    }
    let mut rng = ChaCha8Rng::from_seed(mix_seed(seed, kind as u64 + 1));
    let mut y = match kind {
        NoiseKind::White => (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>(),
        NoiseKind::Pink => spectral_noise(n, &mut rng, |f| 1.0 / f.sqrt()),
        NoiseKind::Babble => {
            let mut base = spectral_noise(n, &mut rng, |f| {
                let rise = f * f / (f * f + 150.0 * 150.0);
                let fall = 1.0 / (1.0 + (f / 1200.0).powi(3));
                rise * fall
            });
            let r1 = rng.random_range(2.0..6.0);
            let r2 = rng.random_range(2.0..6.0);
            let p1 = rng.random_range(0.0..2.0 * PI);
            let p2 = rng.random_range(0.0..2.0 * PI);
            for (i, v) in base.iter_mut().enumerate() {
                let t = i as f64 / sr;
                let s = 0.5 * ((2.0 * PI * r1 * t + p1).sin() + (2.0 * PI * r2 * t + p2).sin());
                *v *= 1.0 + 0.45 * s;
            }
            base
        }
    };
    let mean = y.iter().sum::<f64>() / n as f64;
    for v in &mut y {
        *v -= mean;
    }
    let mut buf = AudioBuffer::new(y, SAMPLE_RATE)?;
    buf.peak_normalize();
    Ok(buf)
}

/// Random-phase inverse-FFT synthesis with the given magnitude envelope
/// (argument in Hz). DC stays zero, so the output is exactly zero-mean.
fn spectral_noise<R: Rng>(n: usize, rng: &mut R, mag: impl Fn(f64) -> f64) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    let mut spec = vec![Complex::new(0.0, 0.0); n];
    let half = n / 2;
    for k in 1..=half {
        let f = k as f64 * sr / n as f64;
        let a = mag(f);
        if n % 2 == 0 && k == half {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            spec[k] = Complex::new(a * sign, 0.0);
        } else {
            let phase = rng.random_range(0.0..2.0 * PI);
            spec[k] = Complex::from_polar(a, phase);
            spec[n - k] = spec[k].conj();
        }
    }
    FftPlanner::new().plan_fft_inverse(n).process(&mut spec);
    spec.into_iter().map(|c| c.re / n as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, duration_s: f64, rate: u32) -> AudioBuffer {
        let n = (duration_s * rate as f64).round() as usize;
        let samples = (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / rate as f64).sin() * 0.8)
            .collect();
        AudioBuffer::new(samples, rate).unwrap()
    }

    fn test_profile(pitch: f64, jitter: f64, seed: u64) -> SpeakerProfile {
        SpeakerProfile::new(
            pitch,
            vec![
                Formant { center_hz: 600.0, bandwidth_hz: 90.0 },
                Formant { center_hz: 1200.0, bandwidth_hz: 130.0 },
                Formant { center_hz: 2500.0, bandwidth_hz: 220.0 },
            ],
            jitter,
            seed,
        )
        .unwrap()
    }

    #[test]
    fn wav_round_trip_within_one_quantization_step() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let buf = tone(440.0, 0.25, SAMPLE_RATE);
        save_wav(&path, &buf).unwrap();
        let back = load_wav(&path).unwrap();
        assert_eq!(back.sample_rate, SAMPLE_RATE);
        assert_eq!(back.samples.len(), buf.samples.len());
        let step = 1.0 / PCM_SCALE;
        for (a, b) in buf.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() <= step, "{a} vs {b}");
        }
        // A second pass through quantization must be lossless.
        let path2 = dir.path().join("t2.wav");
        save_wav(&path2, &back).unwrap();
        let back2 = load_wav(&path2).unwrap();
        assert_eq!(back.samples, back2.samples);
    }

    #[test]
    fn load_wav_rejects_empty_and_missing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: SAMPLE_RATE,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        hound::WavWriter::create(&path, spec).unwrap().finalize().unwrap();
        assert!(matches!(load_wav(&path), Err(Error::EmptyInput(_))));
        assert!(load_wav(dir.path().join("missing.wav")).is_err());
    }

    #[test]
    fn stereo_mixes_to_mono() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("st.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: SAMPLE_RATE,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for _ in 0..100 {
            w.write_sample(10_000i16).unwrap();
            w.write_sample(-10_000i16).unwrap();
        }
        w.finalize().unwrap();
        let buf = load_wav(&path).unwrap();
        assert_eq!(buf.samples.len(), 100);
        assert!(buf.samples.iter().all(|s| s.abs() < 1e-9));
    }

    #[test]
    fn resample_same_rate_is_identity() {
        let buf = tone(440.0, 0.1, SAMPLE_RATE);
        let out = resample(&buf, SAMPLE_RATE).unwrap();
        assert_eq!(out, buf);
    }

    #[test]
    fn resample_doubles_length_and_keeps_tone() {
        let buf = tone(440.0, 1.0, 8_000);
        let out = resample(&buf, 16_000).unwrap();
        assert_eq!(out.samples.len(), 16_000);
        let peak = dominant_frequency(&out.samples, out.sample_rate);
        assert!((peak - 440.0).abs() <= 1.0, "peak {peak}");
    }

    #[test]
    fn resample_downsamples_tone_within_one_hz() {
        let buf = tone(1000.0, 1.0, 44_100);
        let out = resample(&buf, 16_000).unwrap();
        assert_eq!(out.samples.len(), 16_000);
        let peak = dominant_frequency(&out.samples, out.sample_rate);
        assert!((peak - 1000.0).abs() <= 1.0, "peak {peak}");
    }

    #[test]
    fn synth_is_deterministic_and_normalized() {
        let p = test_profile(150.0, 0.01, 7);
        let a = synth_utterance(&p, 3.0, 42).unwrap();
        let b = synth_utterance(&p, 3.0, 42).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.samples.len(), 48_000);
        assert!((a.peak() - 1.0).abs() < 1e-12);
        assert!(a.samples.iter().all(|s| s.abs() <= 1.0));
        let c = synth_utterance(&p, 3.0, 43).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn synth_pitch_sets_dominant_spectral_peak() {
        // Glides move f0 by up to +-20%, so the dominant component lands
        // inside the prosody band around the profile pitch, and scales
        // with it.
        for pitch in [110.0, 220.0] {
            let p = test_profile(pitch, 0.0, 11);
            let buf = synth_utterance(&p, 2.0, 5).unwrap();
            // 0.2..1.0 s sits inside the first voiced burst.
            let slice = &buf.samples[(0.2 * SAMPLE_RATE as f64) as usize
                ..(1.0 * SAMPLE_RATE as f64) as usize];
            let peak = dominant_frequency(slice, SAMPLE_RATE);
            assert!(
                (0.80 * pitch..=1.25 * pitch).contains(&peak),
                "pitch {pitch} -> peak {peak}"
            );
        }
    }

    #[test]
    fn synth_voiced_exceeds_silence_by_20_db() {
        let p = test_profile(130.0, 0.015, 3);
        let buf = synth_utterance(&p, 6.0, 9).unwrap();
        let win = (0.025 * SAMPLE_RATE as f64) as usize;
        let mut rms: Vec<f64> = buf
            .samples
            .chunks_exact(win)
            .map(|c| (c.iter().map(|s| s * s).sum::<f64>() / win as f64).sqrt())
            .collect();
        rms.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let low = rms[rms.len() / 10].max(1e-12);
        let high = rms[rms.len() * 9 / 10];
        assert!(20.0 * (high / low).log10() >= 20.0);
    }

    #[test]
    fn profile_validation_rejects_bad_inputs() {
        assert!(SpeakerProfile::new(30.0, vec![Formant { center_hz: 500.0, bandwidth_hz: 80.0 }], 0.0, 0).is_err());
        assert!(SpeakerProfile::new(500.0, vec![Formant { center_hz: 500.0, bandwidth_hz: 80.0 }], 0.0, 0).is_err());
        let decreasing = vec![
            Formant { center_hz: 1200.0, bandwidth_hz: 80.0 },
            Formant { center_hz: 600.0, bandwidth_hz: 80.0 },
        ];
        assert!(SpeakerProfile::new(120.0, decreasing, 0.0, 0).is_err());
        assert!(SpeakerProfile::new(120.0, vec![], 0.0, 0).is_err());
        assert!(SpeakerProfile::new(120.0, vec![Formant { center_hz: 500.0, bandwidth_hz: 80.0 }], 0.5, 0).is_err());
    }

    #[test]
    fn profiles_load_from_toml() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("voices.toml");
        std::fs::write(
            &path,
            r#"
[[speaker]]
pitch_hz = 110.0
formants = [
  { center_hz = 600.0, bandwidth_hz = 90.0 },
  { center_hz = 1400.0, bandwidth_hz = 120.0 },
]
jitter = 0.01
seed = 1

[[speaker]]
pitch_hz = 220.0
formants = [{ center_hz = 700.0, bandwidth_hz = 100.0 }]
jitter = 0.0
seed = 2
"#,
        )
        .unwrap();
        let profiles = load_profiles(&path).unwrap();
        assert_eq!(profiles.len(), 2);
        assert_eq!(profiles[0].pitch_hz, 110.0);
        assert_eq!(profiles[1].formants.len(), 1);
    }

    #[test]
    fn generated_profiles_are_valid_and_distinct() {
        let ps = generate_profiles(25, 99);
        assert_eq!(ps.len(), 25);
        for p in &ps {
            p.validate().unwrap();
        }
        let again = generate_profiles(25, 99);
        assert_eq!(ps, again);
        let other = generate_profiles(25, 100);
        assert_ne!(ps, other);
        // Voices overlap on any one axis but stay jointly distinct: the
        // stratified grids guarantee minimum separation before wobble.
        for (i, a) in ps.iter().enumerate() {
            for b in &ps[i + 1..] {
                let dp = (a.pitch_hz - b.pitch_hz).abs();
                let df = (a.formants[0].center_hz - b.formants[0].center_hz).abs();
                assert!(dp > 1e-9 || df > 1e-9, "two voices coincide");
            }
        }
        let lo = ps.iter().map(|p| p.pitch_hz).fold(f64::INFINITY, f64::min);
        let hi = ps.iter().map(|p| p.pitch_hz).fold(0.0, f64::max);
        assert!(lo >= 97.0 && hi <= 193.0, "pitch band {lo}..{hi}");
        assert!(hi - lo > 30.0, "stratification should cover the band");
        let t_lo = ps.iter().map(|p| p.tilt).fold(f64::INFINITY, f64::min);
        let t_hi = ps.iter().map(|p| p.tilt).fold(0.0, f64::max);
        assert!(t_lo >= 1.0 && t_hi <= 2.9 && t_hi - t_lo > 0.5, "tilt band {t_lo}..{t_hi}");
    }

    #[test]
    fn generated_voices_keep_a_joint_separation_floor() {
        // Approximate per-axis slot ranks from the values (wobble is well
        // under one slot at n=10) and check no pair of voices is close on
        // every identity axis at once.
        let n = 10;
        for seed in 0..8u64 {
            let ps = generate_profiles(n, seed);
            let rank = |vals: Vec<f64>| -> Vec<f64> {
                vals.iter()
                    .map(|v| {
                        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        (v - lo) / ((hi - lo) / (n as f64 - 1.0))
                    })
                    .collect()
            };
            let axes = [
                rank(ps.iter().map(|p| p.pitch_hz).collect()),
                rank(ps.iter().map(|p| p.formants[0].center_hz).collect()),
                rank(ps.iter().map(|p| p.tilt).collect()),
                rank(ps.iter().map(|p| p.breath).collect()),
            ];
            for a in 0..n {
                for b in a + 1..n {
                    let d: f64 = axes.iter().map(|r| (r[a] - r[b]).abs()).sum();
                    assert!(d > 2.5, "seed {seed}: voices {a} and {b} nearly coincide (joint rank distance {d:.2})");
                }
            }
        }
    }

    #[test]
    fn white_noise_is_zero_mean_flat_and_normalized() {
        let buf = gen_noise(NoiseKind::White, 2.0, 123).unwrap();
        assert_eq!(buf.samples.len(), 32_000);
        let mean = buf.samples.iter().sum::<f64>() / buf.samples.len() as f64;
        assert!(mean.abs() < 0.01);
        assert!((buf.peak() - 1.0).abs() < 1e-12);
        let p_low = band_power(&buf, 200.0, 2_000.0);
        let p_high = band_power(&buf, 4_000.0, 7_000.0);
        let ratio_db = 10.0 * (p_low / p_high).log10();
        assert!(ratio_db.abs() < 3.0, "white spectrum tilt {ratio_db} dB");
        let again = gen_noise(NoiseKind::White, 2.0, 123).unwrap();
        assert_eq!(buf.samples, again.samples);
    }

    #[test]
    fn pink_noise_falls_three_db_per_octave() {
        let buf = gen_noise(NoiseKind::Pink, 2.0, 7).unwrap();
        let slope = spectral_slope_db_per_octave(&buf, 60.0, 6_000.0);
        assert!((slope + 3.0).abs() <= 1.0, "slope {slope} dB/octave");
    }

    #[test]
    fn babble_noise_has_speech_band_energy() {
        let buf = gen_noise(NoiseKind::Babble, 2.0, 21).unwrap();
        let mean = buf.samples.iter().sum::<f64>() / buf.samples.len() as f64;
        assert!(mean.abs() < 0.01);
        assert!(band_power(&buf, 100.0, 4_000.0) > 0.0);
        // Band emphasis: mid band should carry far more power than 6 kHz+.
        let mid = band_power(&buf, 200.0, 2_000.0);
        let top = band_power(&buf, 6_000.0, 7_900.0);
        assert!(mid > 10.0 * top);
    }

    #[test]
    fn noise_kind_parses_from_str() {
        assert_eq!("white".parse::<NoiseKind>().unwrap(), NoiseKind::White);
        assert_eq!("Pink".parse::<NoiseKind>().unwrap(), NoiseKind::Pink);
        assert!("brown".parse::<NoiseKind>().is_err());
    }

    fn band_power(buf: &AudioBuffer, lo_hz: f64, hi_hz: f64) -> f64 {
        let n = buf.samples.len();
        let mut spec: Vec<Complex<f64>> =
            buf.samples.iter().map(|&s| Complex::new(s, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut spec);
        let df = buf.sample_rate as f64 / n as f64;
        spec.iter()
            .enumerate()
            .take(n / 2)
            .filter(|(k, _)| {
                let f = *k as f64 * df;
                f >= lo_hz && f < hi_hz
            })
            .map(|(_, c)| c.norm_sqr())
            .sum()
    }

    /// Least-squares fit of 10*log10(power) against log2(frequency) over
    /// Welch-averaged periodogram bins.
    fn spectral_slope_db_per_octave(buf: &AudioBuffer, lo_hz: f64, hi_hz: f64) -> f64 {
        let seg = 4096;
        let hop = 2048;
        let n = buf.samples.len();
        let mut power = vec![0.0f64; seg / 2];
        let mut count = 0;
        let fft = FftPlanner::new().plan_fft_forward(seg);
        let mut start = 0;
        while start + seg <= n {
            let mut b: Vec<Complex<f64>> = (0..seg)
                .map(|i| {
                    let w = 0.5 * (1.0 - (2.0 * PI * i as f64 / seg as f64).cos());
                    Complex::new(buf.samples[start + i] * w, 0.0)
                })
                .collect();
            fft.process(&mut b);
            for (k, c) in b.iter().enumerate().take(seg / 2) {
                power[k] += c.norm_sqr();
            }
            count += 1;
            start += hop;
        }
        assert!(count > 0);
        let df = buf.sample_rate as f64 / seg as f64;
        let pts: Vec<(f64, f64)> = power
            .iter()
            .enumerate()
            .skip(1)
            .filter_map(|(k, &p)| {
                let f = k as f64 * df;
                if f >= lo_hz && f <= hi_hz && p > 0.0 {
                    Some((f.log2(), 10.0 * (p / count as f64).log10()))
                } else {
                    None
                }
            })
            .collect();
        let n_pts = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        (n_pts * sxy - sx * sy) / (n_pts * sxx - sx * sx)
    }
}
