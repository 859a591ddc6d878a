//! Experiment configuration: a TOML file with sections for data synthesis,
//! segmentation, features, training, and evaluation. Every field has a
//! default, so an empty file is a valid experiment.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audio::{NoiseKind, SAMPLE_RATE};
use crate::embedder::NetConfig;
use crate::features::FeatureConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Directory of WAV files, one speaker per file. When unset, speakers
    /// are synthesized.
    pub wav_dir: Option<PathBuf>,
    pub n_speakers: usize,
    pub master_seed: u64,
    /// Seconds of kept speech per speaker in the training split.
    pub train_seconds: f64,
    /// Seconds of kept speech per speaker in the held-out split.
    pub eval_seconds: f64,
    pub noise_kinds: Vec<NoiseKind>,
    /// Length of each generated noise buffer in the augmentation pool.
    pub noise_seconds: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            wav_dir: None,
            n_speakers: 5,
            master_seed: 0,
            train_seconds: 10.0,
            eval_seconds: 2.0,
            noise_kinds: vec![NoiseKind::White, NoiseKind::Pink, NoiseKind::Babble],
            noise_seconds: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentationConfig {
    pub vad_threshold_db: f64,
    pub segment_len_s: f64,
    pub frame_len_s: f64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self { vad_threshold_db: 16.0, segment_len_s: 1.0, frame_len_s: 0.2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Pairwise,
    Triplet,
}

impl FromStr for TrainMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pairwise" => Ok(TrainMode::Pairwise),
            "triplet" => Ok(TrainMode::Triplet),
            other => Err(Error::Config(format!("unknown training mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TrainMode::Pairwise => "pairwise",
            TrainMode::Triplet => "triplet",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mode: TrainMode,
    /// Distance saturation point and cannot-link target.
    pub alpha: f64,
    /// Triplet hinge margin.
    pub margin: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Hard cap on training epochs (one epoch = enough batches to cover
    /// the training frames once).
    pub max_epochs: u64,
    /// Stop when the best held-out accuracy has not improved for this many
    /// epochs. 0 stops right after the initial evaluation.
    pub patience_epochs: u64,
    /// Evaluate every this many epochs (and always at epoch 0).
    pub eval_every: u64,
    pub augment: bool,
    pub thres_lo: f64,
    pub thres_hi: f64,
    /// Fraction of training segments whose pseudo labels get scrambled.
    pub impurity: f64,
    pub net: NetConfig,
    pub net_seed: u64,
    pub sample_seed: u64,
    pub impurity_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Pairwise,
            alpha: 1.0,
            margin: 0.2,
            batch_size: 128,
            learning_rate: 0.0005,
            max_epochs: 400,
            patience_epochs: 1500,
            eval_every: 10,
            augment: true,
            thres_lo: 0.0,
            thres_hi: 0.07,
            impurity: 0.0,
            net: NetConfig::default(),
            net_seed: 0,
            sample_seed: 0,
            impurity_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub kmeans_seed: u64,
    pub kmeans_max_iter: usize,
    pub kmeans_restarts: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { kmeans_seed: 0, kmeans_max_iter: 300, kmeans_restarts: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Run directory name; derived from mode/speakers/impurity/seed when
    /// unset.
    pub name: Option<String>,
    /// Output root; overridden by the UVECTOR_OUT environment variable and
    /// defaulting to ./runs.
    pub out_dir: Option<PathBuf>,
    pub data: DataConfig,
    pub segmentation: SegmentationConfig,
    pub features: FeatureConfig,
    pub train: TrainConfig,
    pub eval: EvalSection,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.wav_dir.is_none() && d.n_speakers < 2 {
            return Err(Error::Config("need at least two synthetic speakers".into()));
        }
        if !(d.train_seconds > 0.0) || !(d.eval_seconds > 0.0) {
            return Err(Error::Config("split durations must be positive".into()));
        }
        if !(d.noise_seconds > 0.0) {
            return Err(Error::Config("noise buffers must have positive length".into()));
        }
        let s = &self.segmentation;
        if !(s.vad_threshold_db > 0.0) {
            return Err(Error::Config("the VAD threshold must be positive decibels".into()));
        }
        let seg = (s.segment_len_s * SAMPLE_RATE as f64).round() as i64;
        let frame = (s.frame_len_s * SAMPLE_RATE as f64).round() as i64;
        if frame <= 0 || seg <= 0 {
            return Err(Error::Config("segment and frame lengths must be positive".into()));
        }
        if seg % frame != 0 {
            return Err(Error::Config(format!(
                "segment length {}s is not a whole number of {}s frames",
                s.segment_len_s, s.frame_len_s
            )));
        }
        self.features.validate()?;
        let t = &self.train;
        if !(t.alpha > 0.0) {
            return Err(Error::Config("alpha must be positive".into()));
        }
        if !(t.margin > 0.0) {
            return Err(Error::Config("margin must be positive".into()));
        }
        if !(t.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if t.batch_size < 2 || t.batch_size % 2 != 0 {
            return Err(Error::Config(format!(
                "batch size {} must be even and at least 2",
                t.batch_size
            )));
        }
        if t.eval_every == 0 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&t.impurity) {
            return Err(Error::Config(format!("impurity {} outside 0..=1", t.impurity)));
        }
        if !(0.0..=1.0).contains(&t.thres_lo)
            || !(0.0..=1.0).contains(&t.thres_hi)
            || t.thres_lo > t.thres_hi
        {
            return Err(Error::Config(format!(
                "augmentation range [{}, {}] must satisfy 0 <= lo <= hi <= 1",
                t.thres_lo, t.thres_hi
            )));
        }
        t.net.validate()?;
        if self.eval.kmeans_max_iter == 0 {
            return Err(Error::Config("k-means needs at least one iteration".into()));
        }
        if self.eval.kmeans_restarts == 0 {
            return Err(Error::Config("k-means needs at least one restart".into()));
        }
        Ok(())
    }

    /// Run directory name for this configuration.
    pub fn run_name(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        format!(
            "{}_spk{}_imp{}_seed{}",
            self.train.mode, self.data.n_speakers, self.train.impurity, self.train.sample_seed
        )
    }

    /// Output root: UVECTOR_OUT, else the configured directory, else
    /// ./runs.
    pub fn out_root(&self) -> PathBuf {
        if let Ok(v) = std::env::var("UVECTOR_OUT") {
            if !v.is_empty() {
                return PathBuf::from(v);
            }
        }
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("runs"))
    }
}

pub fn load_config<P: AsRef<Path>>(path: P) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path.as_ref())?;
    let cfg: ExperimentConfig =
        toml::from_str(&text).map_err(|e| Error::Config(format!("config parse error: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn save_config<P: AsRef<Path>>(path: P, cfg: &ExperimentConfig) -> Result<()> {
    let text = toml::to_string_pretty(cfg)
        .map_err(|e| Error::Config(format!("config serialization error: {e}")))?;
    std::fs::write(path.as_ref(), text)?;
    Ok(())
}
