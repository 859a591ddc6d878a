//! Log-mel feature maps: short-time Fourier analysis of audio frames
//! followed by a triangular mel filterbank and log(1+x) compression.
//!
//! The filterbank has more rows (100) than the 191-point transform has
//! one-sided bins (96), so filter weights are computed as the analytic
//! integral of each triangle over each bin's frequency interval instead of
//! point samples at bin centers. That keeps every row non-empty and every
//! pair of neighbours overlapping even where triangles are narrower than a
//! bin.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use rustfft::{num_complex::Complex, Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub fft_size: usize,
    pub window_size: usize,
    pub stride: usize,
    pub n_mels: usize,
    pub sample_rate: u32,
    /// Apply an orthonormal DCT-II over the mel axis of each column.
    pub apply_dct: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            fft_size: 191,
            window_size: 128,
            stride: 34,
            n_mels: 100,
            sample_rate: 16_000,
            apply_dct: false,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_size == 0 || self.stride == 0 || self.n_mels == 0 || self.fft_size == 0 {
            return Err(Error::Config("feature sizes must be positive".into()));
        }
        if self.window_size > self.fft_size {
            return Err(Error::Config(format!(
                "window_size {} exceeds fft_size {}",
                self.window_size, self.fft_size
            )));
        }
        if self.sample_rate == 0 {
            return Err(Error::Config("sample_rate must be positive".into()));
        }
        Ok(())
    }

    /// One-sided bin count (DC included, mirror bins dropped).
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Number of analysis steps for an input of `len` samples.
    pub fn n_steps(&self, len: usize) -> usize {
        if len < self.window_size {
            0
        } else {
            (len - self.window_size) / self.stride + 1
        }
    }
}

/// One-sided complex spectrogram, `bins x steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub data: Array2<Complex<f64>>,
}

impl Spectrogram {
    pub fn bins(&self) -> usize {
        self.data.nrows()
    }
    pub fn n_steps(&self) -> usize {
        self.data.ncols()
    }
}

/// Mel (or mel-cepstral) map, `n_mels x steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub data: Array2<f64>,
}

impl FeatureMap {
    pub fn shape(&self) -> (usize, usize) {
        let s = self.data.dim();
        (s.0, s.1)
    }
}

thread_local! {
    static PLANS: std::cell::RefCell<std::collections::HashMap<usize, Arc<dyn Fft<f64>>>> =
        std::cell::RefCell::new(std::collections::HashMap::new());
}

fn plan_fft(n: usize) -> Arc<dyn Fft<f64>> {
    PLANS.with(|cell| {
        cell.borrow_mut()
            .entry(n)
            .or_insert_with(|| FftPlanner::new().plan_fft_forward(n))
            .clone()
    })
}

/// Hann-windowed, zero-padded short-time transform. Input must hold at
/// least one full window.
pub fn stft(samples: &[f64], cfg: &FeatureConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    if samples.len() < cfg.window_size {
        return Err(Error::ShapeMismatch(format!(
            "input of {} samples is shorter than the {}-sample window",
            samples.len(),
            cfg.window_size
        )));
    }
    let steps = cfg.n_steps(samples.len());
    let bins = cfg.bins();
    let window: Vec<f64> = (0..cfg.window_size)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / cfg.window_size as f64).cos()))
        .collect();
    let fft = plan_fft(cfg.fft_size);
    let mut data = Array2::from_elem((bins, steps), Complex::new(0.0, 0.0));
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_size];
    for s in 0..steps {
        let off = s * cfg.stride;
        for (i, c) in buf.iter_mut().enumerate() {
            *c = if i < cfg.window_size {
                Complex::new(samples[off + i] * window[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        for k in 0..bins {
            data[(k, s)] = buf[k];
        }
    }
    Ok(Spectrogram { data })
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Integral of the rising ramp (0 at `p0`, 1 at `p1`) over [a, b].
fn ramp_up_integral(a: f64, b: f64, p0: f64, p1: f64) -> f64 {
    let lo = a.max(p0);
    let hi = b.min(p1);
    if hi <= lo {
        return 0.0;
    }
    ((hi - p0).powi(2) - (lo - p0).powi(2)) / (2.0 * (p1 - p0))
}

/// Triangular filterbank, `n_mels x bins`, with rows integrated over bin
/// intervals. Every row sums to a positive value and neighbouring rows
/// overlap.
pub fn mel_filterbank(cfg: &FeatureConfig) -> Result<Array2<f64>> {
    cfg.validate()?;
    let bins = cfg.bins();
    let nyquist = cfg.sample_rate as f64 / 2.0;
    let df = cfg.sample_rate as f64 / cfg.fft_size as f64;
    let m_hi = hz_to_mel(nyquist);
    let points: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|j| mel_to_hz(m_hi * j as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let mut fb = Array2::zeros((cfg.n_mels, bins));
    for m in 0..cfg.n_mels {
        let (pl, pc, pr) = (points[m], points[m + 1], points[m + 2]);
        for k in 0..bins {
            let a = ((k as f64 - 0.5) * df).max(0.0);
            let b = ((k as f64 + 0.5) * df).min(nyquist);
            if b <= a {
                continue;
            }
            let up = ramp_up_integral(a, b, pl, pc);
            // The falling ramp is the rising ramp mirrored around pc..pr.
            let down = ramp_up_integral(-b, -a, -pr, -pc);
            fb[(m, k)] = (up + down) / df;
        }
    }
    Ok(fb)
}

/// Project power onto the mel filterbank and compress with log(1+x).
/// With `apply_dct` set, an orthonormal DCT-II runs over the mel axis.
pub fn mel_project(spec: &Spectrogram, cfg: &FeatureConfig) -> Result<FeatureMap> {
    if spec.bins() != cfg.bins() {
        return Err(Error::ShapeMismatch(format!(
            "spectrogram has {} bins, config expects {}",
            spec.bins(),
            cfg.bins()
        )));
    }
    let fb = mel_filterbank(cfg)?;
    let power = spec.data.mapv(|c| c.norm_sqr());
    let mut mel = fb.dot(&power);
    mel.mapv_inplace(|e| (1.0 + e).ln());
    if cfg.apply_dct {
        mel = dct_rows(&mel);
    }
    Ok(FeatureMap { data: mel })
}

fn dct_rows(x: &Array2<f64>) -> Array2<f64> {
    let m = x.nrows();
    let mut out = Array2::zeros(x.raw_dim());
    let scale0 = (1.0 / m as f64).sqrt();
    let scale = (2.0 / m as f64).sqrt();
    for t in 0..x.ncols() {
        for j in 0..m {
            let mut acc = 0.0;
            for i in 0..m {
                acc += x[(i, t)]
                    * (std::f64::consts::PI * (2 * i + 1) as f64 * j as f64 / (2 * m) as f64).cos();
            }
            out[(j, t)] = acc * if j == 0 { scale0 } else { scale };
        }
    }
    out
}

/// stft + mel_project in one call.
pub fn featurize(samples: &[f64], cfg: &FeatureConfig) -> Result<FeatureMap> {
    mel_project(&stft(samples, cfg)?, cfg)
}

const CACHE_MAGIC: &[u8; 4] = b"UVFM";
const DTYPE_F64_LE: u8 = 1;

/// Write a feature map as a flat binary file.
///
/// Layout, little-endian: magic "UVFM", version u32 (=1), dtype u8
/// (1 = f64 LE), rows u32, cols u32, then rows*cols f64 values in
/// row-major order.
pub fn save_feature_map<P: AsRef<Path>>(path: P, fm: &FeatureMap) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
    out.write_all(CACHE_MAGIC)?;
    out.write_all(&1u32.to_le_bytes())?;
    out.write_all(&[DTYPE_F64_LE])?;
    let (rows, cols) = fm.shape();
    out.write_all(&(rows as u32).to_le_bytes())?;
    out.write_all(&(cols as u32).to_le_bytes())?;
    for v in fm.data.iter() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_feature_map<P: AsRef<Path>>(path: P) -> Result<FeatureMap> {
    let path = path.as_ref();
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let bad = |msg: &str| Error::ShapeMismatch(format!("{}: {msg}", path.display()));
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != CACHE_MAGIC {
        return Err(bad("bad magic"));
    }
    let mut u32buf = [0u8; 4];
    file.read_exact(&mut u32buf).map_err(|_| bad("truncated header"))?;
    if u32::from_le_bytes(u32buf) != 1 {
        return Err(bad("unsupported version"));
    }
    let mut dtype = [0u8; 1];
    file.read_exact(&mut dtype).map_err(|_| bad("truncated header"))?;
    if dtype[0] != DTYPE_F64_LE {
        return Err(bad("unsupported dtype"));
    }
    file.read_exact(&mut u32buf).map_err(|_| bad("truncated header"))?;
    let rows = u32::from_le_bytes(u32buf) as usize;
    file.read_exact(&mut u32buf).map_err(|_| bad("truncated header"))?;
    let cols = u32::from_le_bytes(u32buf) as usize;
    let mut values = Vec::with_capacity(rows * cols);
    let mut f64buf = [0u8; 8];
    for _ in 0..rows * cols {
        file.read_exact(&mut f64buf).map_err(|_| bad("truncated payload"))?;
        values.push(f64::from_le_bytes(f64buf));
    }
    if file.read(&mut [0u8; 1])? != 0 {
        return Err(bad("trailing bytes"));
    }
    let data = Array2::from_shape_vec((rows, cols), values)
        .map_err(|e| bad(&format!("shape: {e}")))?;
    Ok(FeatureMap { data })
}
