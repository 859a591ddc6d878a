//! Experiment orchestration: dataset synthesis and persistence, the
//! training loop with periodic evaluation and patience stopping, run
//! manifests, and aggregate reporting.
//!
//! Stages hand off through files. `ensure_dataset` writes WAVs plus
//! segment manifests under `<out>/data/...` and always reads the dataset
//! back from those files, so a run started from a fresh directory and a
//! run reusing an existing one see byte-identical inputs.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::{gen_noise, generate_profiles, load_wav, save_wav, synth_utterance, AudioBuffer, SAMPLE_RATE};
use crate::config::{ExperimentConfig, TrainMode};
use crate::constraints::{write_relabel_csv, ClusterSet, RelabelRecord};
use crate::embedder::{
    load_checkpoint, pairwise_step, save_checkpoint, triplet_step, AdamConfig, AdamState,
    NetConfig, Network,
};
use crate::eval::{evaluate, EvalConfig, EvalReport};
use crate::segmentation::{read_manifest, vad_segment, write_manifest, ManifestRow, Segment};
use crate::{Error, Result};

/// Cheap well-spread per-step seed derivation (SplitMix64 over the pair).
fn step_seed(base: u64, step: u64) -> u64 {
    let mut z = base ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Re-id a speaker's segments into the global numbering. Every segment
/// starts as its own pseudo cluster (label == id); impurity injection
/// later merges a fraction into other segments' clusters.
fn shift_ids(segments: &mut [Segment], id_base: u32, speaker: u32) {
    for (i, s) in segments.iter_mut().enumerate() {
        s.segment_id = id_base + i as u32;
        s.pseudo_label = s.segment_id;
        s.ground_speaker = Some(speaker);
    }
}

fn rows_for(segments: &[Segment], file: &str) -> Vec<ManifestRow> {
    segments
        .iter()
        .map(|s| ManifestRow {
            file: file.to_string(),
            segment_id: s.segment_id,
            start: s.start,
            duration: s.duration,
            pseudo_label: s.pseudo_label,
            ground_speaker: s.ground_speaker,
        })
        .collect()
}

/// Synthesize one utterance long enough that VAD yields at least `needed`
/// segments, growing the duration a few times if necessary.
fn synth_with_enough_segments(
    cfg: &ExperimentConfig,
    profile_idx: usize,
    seed: u64,
    needed: usize,
) -> Result<(AudioBuffer, Vec<Segment>)> {
    let profiles = generate_profiles(cfg.data.n_speakers, cfg.data.master_seed);
    let profile = &profiles[profile_idx];
    let seg = &cfg.segmentation;
    let mut duration = needed as f64 * (seg.segment_len_s + 0.9) * 1.35 + 2.0;
    for _ in 0..5 {
        let buf = synth_utterance(profile, duration, seed)?;
        let segments = vad_segment(&buf, seg.vad_threshold_db, seg.segment_len_s)?;
        if segments.len() >= needed {
            return Ok((buf, segments.into_iter().take(needed).collect()));
        }
        duration *= 1.5;
    }
    Err(Error::SamplingExhausted {
        what: format!("{needed} voiced segments from synthetic speaker {profile_idx}"),
        retries: 5,
    })
}

struct BuiltDataset {
    wavs: Vec<(String, AudioBuffer)>,
    train_rows: Vec<ManifestRow>,
    eval_rows: Vec<ManifestRow>,
}

fn build_dataset(cfg: &ExperimentConfig) -> Result<BuiltDataset> {
    let seg_len = cfg.segmentation.segment_len_s;
    let needed_train = (cfg.data.train_seconds / seg_len).round() as usize;
    let needed_eval = (cfg.data.eval_seconds / seg_len).round() as usize;
    if needed_train == 0 || needed_eval == 0 {
        return Err(Error::Config("each split needs at least one segment per speaker".into()));
    }
    let mut wavs = Vec::new();
    let mut train_rows = Vec::new();
    let mut eval_rows = Vec::new();
    let (mut train_id, mut eval_id) = (0u32, 0u32);

    if let Some(dir) = &cfg.data.wav_dir {
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::EmptyInput(format!("no WAV files under {}", dir.display())));
        }
        for (spk, path) in files.iter().enumerate() {
            let buf = load_wav(path)?;
            let segments =
                vad_segment(&buf, cfg.segmentation.vad_threshold_db, seg_len)?;
            if segments.len() < needed_train + needed_eval {
                return Err(Error::InvalidArg(format!(
                    "{} yields {} segments, need {}",
                    path.display(),
                    segments.len(),
                    needed_train + needed_eval
                )));
            }
            let name = format!("spk{spk:03}.wav");
            let mut train: Vec<Segment> =
                segments.iter().take(needed_train).cloned().collect();
            let mut eval: Vec<Segment> =
                segments.iter().skip(needed_train).take(needed_eval).cloned().collect();
            shift_ids(&mut train, train_id, spk as u32);
            shift_ids(&mut eval, eval_id, spk as u32);
            train_id += needed_train as u32;
            eval_id += needed_eval as u32;
            train_rows.extend(rows_for(&train, &name));
            eval_rows.extend(rows_for(&eval, &name));
            wavs.push((name, buf));
        }
    } else {
        for spk in 0..cfg.data.n_speakers {
            for (split, needed) in [("train", needed_train), ("eval", needed_eval)] {
                let seed = step_seed(cfg.data.master_seed, (spk * 2 + usize::from(split == "eval")) as u64);
                let (buf, mut segments) = synth_with_enough_segments(
                    cfg,
                    spk,
                    seed,
                    needed,
                )?;
                let name = format!("{split}_spk{spk:03}.wav");
                if split == "train" {
                    shift_ids(&mut segments, train_id, spk as u32);
                    train_id += needed as u32;
                    train_rows.extend(rows_for(&segments, &name));
                } else {
                    shift_ids(&mut segments, eval_id, spk as u32);
                    eval_id += needed as u32;
                    eval_rows.extend(rows_for(&segments, &name));
                }
                wavs.push((name, buf));
            }
        }
    }
    Ok(BuiltDataset { wavs, train_rows, eval_rows })
}

/// Directory key identifying a dataset: every parameter that changes the
/// emitted segments appears in the name.
fn dataset_key(cfg: &ExperimentConfig) -> String {
    let d = &cfg.data;
    let s = &cfg.segmentation;
    let src = match &d.wav_dir {
        Some(p) => format!(
            "ext-{}",
            p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "dir".into())
        ),
        None => format!("spk{}-seed{}-sv{}", d.n_speakers, d.master_seed, crate::audio::SYNTH_VERSION),
    };
    format!(
        "{src}-tr{}-ev{}-seg{}-vad{}",
        d.train_seconds, d.eval_seconds, s.segment_len_s, s.vad_threshold_db
    )
}

/// Segment manifests plus the directory they live in.
pub struct DatasetFiles {
    pub dir: PathBuf,
    pub train_manifest: PathBuf,
    pub eval_manifest: PathBuf,
}

/// Create (if absent) and locate the dataset for a config: WAV files plus
/// train/eval segment manifests.
pub fn ensure_dataset(cfg: &ExperimentConfig) -> Result<DatasetFiles> {
    let dir = cfg.out_root().join("data").join(dataset_key(cfg));
    let files = DatasetFiles {
        train_manifest: dir.join("train_manifest.csv"),
        eval_manifest: dir.join("eval_manifest.csv"),
        dir: dir.clone(),
    };
    if files.train_manifest.exists() && files.eval_manifest.exists() {
        return Ok(files);
    }
    let built = build_dataset(cfg)?;
    std::fs::create_dir_all(dir.join("wav"))?;
    for (name, buf) in &built.wavs {
        save_wav(dir.join("wav").join(name), buf)?;
    }
    write_manifest(&files.train_manifest, &built.train_rows)?;
    write_manifest(&files.eval_manifest, &built.eval_rows)?;
    Ok(files)
}

/// Reconstruct segments by slicing manifest rows out of their WAV files.
fn load_split(dir: &Path, manifest: &Path) -> Result<Vec<Segment>> {
    let rows = read_manifest(manifest)?;
    if rows.is_empty() {
        return Err(Error::EmptyInput(format!("{} lists no segments", manifest.display())));
    }
    let mut cache: std::collections::BTreeMap<String, AudioBuffer> = Default::default();
    let mut segments = Vec::with_capacity(rows.len());
    for r in &rows {
        if !cache.contains_key(&r.file) {
            cache.insert(r.file.clone(), load_wav(dir.join("wav").join(&r.file))?);
        }
        let buf = &cache[&r.file];
        let start = (r.start * buf.sample_rate as f64).round() as usize;
        let len = (r.duration * buf.sample_rate as f64).round() as usize;
        if start + len > buf.samples.len() {
            return Err(Error::Manifest(format!(
                "segment {} runs past the end of {}",
                r.segment_id, r.file
            )));
        }
        segments.push(Segment {
            samples: buf.samples[start..start + len].to_vec(),
            start: r.start,
            duration: r.duration,
            segment_id: r.segment_id,
            pseudo_label: r.pseudo_label,
            ground_speaker: r.ground_speaker,
        });
    }
    Ok(segments)
}

/// Everything the training loop needs, loaded from the dataset files.
pub struct PreparedRun {
    pub train: ClusterSet,
    pub held_out: ClusterSet,
    pub noise_pool: Vec<AudioBuffer>,
    pub relabels: Vec<RelabelRecord>,
    pub content_hash: String,
    pub must_link_impurity: f64,
    pub cannot_link_error: f64,
}

/// Input shape the network must accept for this config.
pub fn derived_input(cfg: &ExperimentConfig) -> (usize, usize) {
    let frame_samples =
        (cfg.segmentation.frame_len_s * SAMPLE_RATE as f64).round() as usize;
    (cfg.features.n_mels, cfg.features.n_steps(frame_samples))
}

/// Network config with the input shape derived from the feature settings.
pub fn effective_net_config(cfg: &ExperimentConfig) -> NetConfig {
    NetConfig { input: derived_input(cfg), ..cfg.train.net.clone() }
}

pub fn prepare_run(cfg: &ExperimentConfig) -> Result<PreparedRun> {
    cfg.validate()?;
    let files = ensure_dataset(cfg)?;
    let train_segments = load_split(&files.dir, &files.train_manifest)?;
    let eval_segments = load_split(&files.dir, &files.eval_manifest)?;

    // Hash what the run computes, not where it lives: the output paths are
    // blanked so relocated reruns of one experiment hash identically.
    let mut content_cfg = cfg.clone();
    content_cfg.name = None;
    content_cfg.out_dir = None;
    let mut hasher = Sha256::new();
    hasher.update(
        toml::to_string_pretty(&content_cfg)
            .map_err(|e| Error::Config(format!("config serialization error: {e}")))?,
    );
    hasher.update(std::fs::read(&files.train_manifest)?);
    hasher.update(std::fs::read(&files.eval_manifest)?);
    let content_hash: String = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();

    let frame_len = cfg.segmentation.frame_len_s;
    let clean =
        ClusterSet::from_segments(&train_segments, frame_len, SAMPLE_RATE, &cfg.features)?;
    let (train, relabels) = clean.inject_impurity(cfg.train.impurity, cfg.train.impurity_seed)?;
    let held_out =
        ClusterSet::from_segments(&eval_segments, frame_len, SAMPLE_RATE, &cfg.features)?;
    let (must_link_impurity, cannot_link_error) = train.error_rates();

    let noise_pool = cfg
        .data
        .noise_kinds
        .iter()
        .enumerate()
        .map(|(k, kind)| {
            gen_noise(*kind, cfg.data.noise_seconds, step_seed(cfg.data.master_seed, 9000 + k as u64))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(PreparedRun {
        train,
        held_out,
        noise_pool,
        relabels,
        content_hash,
        must_link_impurity,
        cannot_link_error,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub split: String,
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    pub status: String,
    pub content_hash: String,
    pub epochs_run: u64,
    pub best_epoch: u64,
    pub best_ground_acc: f64,
    pub elapsed_s: f64,
    pub n_train_frames: usize,
    pub n_eval_frames: usize,
    pub must_link_impurity: f64,
    pub cannot_link_error: f64,
    pub final_train: Option<MetricsRow>,
    pub final_ground: Option<MetricsRow>,
    pub config: ExperimentConfig,
}

pub struct RunArtifacts {
    pub dir: PathBuf,
    pub manifest: RunManifest,
}

fn eval_config(cfg: &ExperimentConfig) -> EvalConfig {
    EvalConfig {
        kmeans_seed: cfg.eval.kmeans_seed,
        kmeans_max_iter: cfg.eval.kmeans_max_iter,
        kmeans_restarts: cfg.eval.kmeans_restarts,
        // Triplet training optimizes normalized embeddings, so cluster in
        // that geometry too.
        normalize: cfg.train.mode == TrainMode::Triplet,
    }
}

fn fmt6(x: f64) -> String {
    format!("{x:.6}")
}

/// Write the two-row metrics CSV (train-pseudo row, ground row).
pub fn write_metrics_csv(path: &Path, cfg: &ExperimentConfig, report: &EvalReport) -> Result<()> {
    let mut out = String::from("speakers,impurity,split,acc,nmi,ari\n");
    let spk = cfg.data.n_speakers;
    let imp = cfg.train.impurity;
    let t = report.train_pseudo.scores;
    let g = report.eval_ground.scores;
    out.push_str(&format!("{spk},{imp},train,{},{},{}\n", fmt6(t.acc), fmt6(t.nmi), fmt6(t.ari)));
    out.push_str(&format!("{spk},{imp},ground,{},{},{}\n", fmt6(g.acc), fmt6(g.nmi), fmt6(g.ari)));
    std::fs::write(path, out)?;
    Ok(())
}

fn history_line(epoch: u64, r: &EvalReport) -> String {
    let t = r.train_pseudo.scores;
    let g = r.eval_ground.scores;
    format!(
        "{epoch},{},{},{},{},{},{}\n",
        fmt6(t.acc),
        fmt6(t.nmi),
        fmt6(t.ari),
        fmt6(g.acc),
        fmt6(g.nmi),
        fmt6(g.ari)
    )
}

/// Train a prepared run inside `run_dir`, writing loss.csv, history.csv,
/// relabel.csv, checkpoint.uvck, metrics.csv, and manifest.json.
pub fn train_prepared(
    cfg: &ExperimentConfig,
    prep: &PreparedRun,
    run_dir: &Path,
) -> Result<RunArtifacts> {
    std::fs::create_dir_all(run_dir)?;
    let started = Instant::now();
    crate::config::save_config(run_dir.join("config.toml"), cfg)?;
    write_relabel_csv(run_dir.join("relabel.csv"), &prep.relabels)?;

    let net_cfg = effective_net_config(cfg);
    let mut net = Network::new(&net_cfg, cfg.train.net_seed)?;
    let mut adam =
        AdamState::new(net.n_params(), AdamConfig::with_lr(cfg.train.learning_rate))?;
    let ecfg = eval_config(cfg);
    let checkpoint_path = run_dir.join("checkpoint.uvck");

    let mut loss_csv = std::io::BufWriter::new(std::fs::File::create(run_dir.join("loss.csv"))?);
    writeln!(loss_csv, "epoch,mean_loss")?;
    let mut hist_csv =
        std::io::BufWriter::new(std::fs::File::create(run_dir.join("history.csv"))?);
    writeln!(hist_csv, "epoch,train_acc,train_nmi,train_ari,ground_acc,ground_nmi,ground_ari")?;

    let steps_per_epoch =
        (prep.train.n_frames() + cfg.train.batch_size - 1) / cfg.train.batch_size;
    let t = &cfg.train;
    let mut best_epoch = 0u64;
    let mut epochs_run = 0u64;

    // Evaluation at epoch 0 (untrained network) seeds the best checkpoint.
    let report = evaluate(&net, &prep.train, &prep.held_out, &ecfg)?;
    hist_csv.write_all(history_line(0, &report).as_bytes())?;
    let mut best_acc = report.eval_ground.scores.acc;
    save_checkpoint(&checkpoint_path, &net, &adam)?;

    let mut status = String::from("complete");
    'train: for epoch in 1..=t.max_epochs {
        if t.patience_epochs == 0 {
            break;
        }
        let mut epoch_loss = 0.0;
        for s in 0..steps_per_epoch {
            let global = (epoch - 1) * steps_per_epoch as u64 + s as u64;
            let seed = step_seed(t.sample_seed, global);
            let step = match t.mode {
                TrainMode::Pairwise => {
                    let batch = if t.augment && !prep.noise_pool.is_empty() {
                        prep.train.sample_pair_batch_augmented(
                            t.batch_size,
                            t.alpha,
                            seed,
                            &prep.noise_pool,
                            (t.thres_lo, t.thres_hi),
                        )?
                    } else {
                        prep.train.sample_pair_batch(t.batch_size, t.alpha, seed)?
                    };
                    pairwise_step(&mut net, &batch, t.alpha, &mut adam)
                }
                TrainMode::Triplet => {
                    let batch = prep.train.sample_triplet_batch(t.batch_size, seed)?;
                    triplet_step(&mut net, &batch, t.margin, &mut adam)
                }
            };
            match step {
                Ok(l) => epoch_loss += l,
                Err(e @ Error::NonFiniteLoss { .. }) => {
                    status = format!("aborted: {e}");
                    epochs_run = epoch;
                    writeln!(loss_csv, "{epoch},nan")?;
                    break 'train;
                }
                Err(e) => return Err(e),
            }
        }
        epochs_run = epoch;
        writeln!(loss_csv, "{epoch},{}", fmt6(epoch_loss / steps_per_epoch as f64))?;

        if epoch % t.eval_every == 0 {
            let report = evaluate(&net, &prep.train, &prep.held_out, &ecfg)?;
            hist_csv.write_all(history_line(epoch, &report).as_bytes())?;
            if report.eval_ground.scores.acc > best_acc {
                best_acc = report.eval_ground.scores.acc;
                best_epoch = epoch;
                save_checkpoint(&checkpoint_path, &net, &adam)?;
            }
            if epoch - best_epoch >= t.patience_epochs {
                break;
            }
        }
    }
    loss_csv.flush()?;
    hist_csv.flush()?;

    // Final metrics come from the best checkpoint, not the last state.
    let (best_net, _) = load_checkpoint(&checkpoint_path)?;
    let report = evaluate(&best_net, &prep.train, &prep.held_out, &ecfg)?;
    write_metrics_csv(&run_dir.join("metrics.csv"), cfg, &report)?;

    let manifest = RunManifest {
        name: cfg.run_name(),
        status,
        content_hash: prep.content_hash.clone(),
        epochs_run,
        best_epoch,
        best_ground_acc: best_acc,
        elapsed_s: started.elapsed().as_secs_f64(),
        n_train_frames: prep.train.n_frames(),
        n_eval_frames: prep.held_out.n_frames(),
        must_link_impurity: prep.must_link_impurity,
        cannot_link_error: prep.cannot_link_error,
        final_train: Some(MetricsRow {
            split: "train".into(),
            acc: report.train_pseudo.scores.acc,
            nmi: report.train_pseudo.scores.nmi,
            ari: report.train_pseudo.scores.ari,
        }),
        final_ground: Some(MetricsRow {
            split: "ground".into(),
            acc: report.eval_ground.scores.acc,
            nmi: report.eval_ground.scores.nmi,
            ari: report.eval_ground.scores.ari,
        }),
        config: cfg.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Manifest(format!("manifest serialization failed: {e}")))?;
    std::fs::write(run_dir.join("manifest.json"), json)?;
    Ok(RunArtifacts { dir: run_dir.to_path_buf(), manifest })
}

/// Full training entry point: prepare the dataset, train, persist
/// artifacts under `<out>/<run name>/`.
pub fn train_run(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    let prep = prepare_run(cfg)?;
    let run_dir = cfg.out_root().join(cfg.run_name());
    train_prepared(cfg, &prep, &run_dir)
}

/// Score an existing checkpoint against the config's dataset and write the
/// metrics CSV next to it (or to `out_csv`).
pub fn evaluate_run(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    out_csv: Option<&Path>,
) -> Result<EvalReport> {
    let prep = prepare_run(cfg)?;
    let (net, _) = load_checkpoint(checkpoint)?;
    let want = derived_input(cfg);
    if net.config().input != want {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint expects {:?} inputs, config produces {:?}",
            net.config().input,
            want
        )));
    }
    let report = evaluate(&net, &prep.train, &prep.held_out, &eval_config(cfg))?;
    let default_path = checkpoint.with_file_name("metrics.csv");
    write_metrics_csv(out_csv.unwrap_or(&default_path), cfg, &report)?;
    Ok(report)
}

/// Aggregate every run directory under `root` into a summary table.
/// Metric values are copied verbatim from each run's metrics.csv, never
/// recomputed. Incomplete runs are listed at the end.
pub fn report(root: &Path) -> Result<String> {
    let mut complete: Vec<(usize, String, f64, u64, String)> = Vec::new();
    let mut incomplete = Vec::new();
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.join("manifest.json").exists())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Manifest(format!("no run manifests under {}", root.display())));
    }
    for dir in dirs {
        let name = dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let manifest: RunManifest =
            match std::fs::read_to_string(dir.join("manifest.json"))
                .ok()
                .and_then(|s| serde_json::from_str(&s).ok())
            {
                Some(m) => m,
                None => {
                    incomplete.push(format!("{name}: unreadable manifest"));
                    continue;
                }
            };
        if manifest.status != "complete" {
            incomplete.push(format!("{name}: {}", manifest.status));
            continue;
        }
        let metrics = dir.join("metrics.csv");
        let Ok(text) = std::fs::read_to_string(&metrics) else {
            incomplete.push(format!("{name}: missing metrics.csv"));
            continue;
        };
        for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
            complete.push((
                manifest.config.data.n_speakers,
                manifest.config.train.mode.to_string(),
                manifest.config.train.impurity,
                manifest.config.train.sample_seed,
                format!("{name},{},{line}\n", manifest.config.train.mode),
            ));
        }
    }
    complete.sort_by(|a, b| {
        (a.0, &a.1, a.2, a.3, &a.4)
            .partial_cmp(&(b.0, &b.1, b.2, b.3, &b.4))
            .expect("sort keys are finite")
    });
    let mut out = String::from("run,mode,speakers,impurity,split,acc,nmi,ari\n");
    for (.., line) in &complete {
        out.push_str(line);
    }
    if !incomplete.is_empty() {
        out.push_str("\n# incomplete runs\n");
        for line in &incomplete {
            out.push_str(&format!("# {line}\n"));
        }
    }
    Ok(out)
}
