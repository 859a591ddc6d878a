//! Energy-gated segmentation: find voiced stretches by short-time RMS, cut
//! them into fixed-length segments, split segments into equal frames.
//!
//! The gate is relative: a 25 ms / 10 ms RMS track is compared against the
//! utterance's own maximum minus `threshold_db`, so uniform gain changes do
//! not move any boundary.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::audio::AudioBuffer;
use crate::{Error, Result};

const RMS_WIN_S: f64 = 0.025;
const RMS_HOP_S: f64 = 0.010;

/// A voiced run in samples, before any fixed-length slicing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VoicedRun {
    pub start: usize,
    pub len: usize,
}

impl VoicedRun {
    pub fn duration(&self, sample_rate: u32) -> f64 {
        self.len as f64 / sample_rate as f64
    }
}

/// A fixed-length slice of voiced audio. `segment_id` doubles as the
/// initial pseudo label; `ground_speaker` is only known for synthetic or
/// otherwise annotated sources.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub samples: Vec<f64>,
    /// Offset of the slice inside its source buffer, in seconds.
    pub start: f64,
    pub duration: f64,
    pub segment_id: u32,
    pub pseudo_label: u32,
    pub ground_speaker: Option<u32>,
}

/// One equal-length piece of a segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub samples: Vec<f64>,
    pub parent_segment: u32,
    pub index_in_segment: u32,
}

/// Voiced runs where short-time RMS exceeds (max RMS - threshold_db).
/// Empty or silent input yields no runs.
pub fn vad_runs(audio: &AudioBuffer, threshold_db: f64) -> Vec<VoicedRun> {
    let n = audio.samples.len();
    if n == 0 {
        return Vec::new();
    }
    let sr = audio.sample_rate as f64;
    let win = ((RMS_WIN_S * sr).round() as usize).max(1).min(n);
    let hop = ((RMS_HOP_S * sr).round() as usize).max(1);
    let mut rms = Vec::new();
    let mut i = 0;
    while i + win <= n {
        let e: f64 = audio.samples[i..i + win].iter().map(|s| s * s).sum();
        rms.push((e / win as f64).sqrt());
        i += hop;
    }
    if rms.is_empty() {
        let e: f64 = audio.samples.iter().map(|s| s * s).sum();
        rms.push((e / n as f64).sqrt());
    }
    let max = rms.iter().cloned().fold(0.0f64, f64::max);
    if max <= 0.0 {
        return Vec::new();
    }
    let gate = max * 10f64.powf(-threshold_db / 20.0);
    let voiced: Vec<bool> = rms.iter().map(|&r| r > gate).collect();

    let mut runs = Vec::new();
    let mut start_frame = None;
    for (f, &v) in voiced.iter().enumerate() {
        match (v, start_frame) {
            (true, None) => start_frame = Some(f),
            (false, Some(s)) => {
                runs.push(frames_to_run(s, f - 1, win, hop, n));
                start_frame = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start_frame {
        runs.push(frames_to_run(s, voiced.len() - 1, win, hop, n));
    }
    runs
}

fn frames_to_run(first: usize, last: usize, win: usize, hop: usize, n: usize) -> VoicedRun {
    let start = first * hop;
    let end = (last * hop + win).min(n);
    VoicedRun { start, len: end - start }
}

/// Gate the audio and chop each voiced run into consecutive segments of
/// exactly `target_len_s`. Runs shorter than the target are dropped, and
/// the remainder of longer runs is discarded. Segment ids are assigned
/// sequentially from 0 and seed the pseudo labels.
pub fn vad_segment(audio: &AudioBuffer, threshold_db: f64, target_len_s: f64) -> Result<Vec<Segment>> {
    let sr = audio.sample_rate as f64;
    let target = (target_len_s * sr).round() as usize;
    if target == 0 {
        return Err(Error::InvalidArg("target_len must be positive".into()));
    }
    let mut segments = Vec::new();
    let mut next_id = 0u32;
    for run in vad_runs(audio, threshold_db) {
        let mut offset = run.start;
        while offset + target <= run.start + run.len {
            segments.push(Segment {
                samples: audio.samples[offset..offset + target].to_vec(),
                start: offset as f64 / sr,
                duration: target as f64 / sr,
                segment_id: next_id,
                pseudo_label: next_id,
                ground_speaker: None,
            });
            next_id += 1;
            offset += target;
        }
    }
    Ok(segments)
}

/// Split a segment into non-overlapping frames of `frame_len_s`. The frame
/// length must divide the segment exactly.
pub fn frame_segment(segment: &Segment, frame_len_s: f64, sample_rate: u32) -> Result<Vec<Frame>> {
    let flen = (frame_len_s * sample_rate as f64).round() as usize;
    if flen == 0 {
        return Err(Error::InvalidArg("frame_len must be positive".into()));
    }
    let n = segment.samples.len();
    if n % flen != 0 {
        return Err(Error::InvalidArg(format!(
            "frame length {flen} does not divide segment length {n} exactly"
        )));
    }
    Ok(segment
        .samples
        .chunks_exact(flen)
        .enumerate()
        .map(|(i, c)| Frame {
            samples: c.to_vec(),
            parent_segment: segment.segment_id,
            index_in_segment: i as u32,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentStats {
    pub mean: f64,
    pub median: f64,
    pub std: f64,
}

/// Mean / median / population standard deviation of a duration list.
pub fn segment_stats(durations: &[f64]) -> Result<SegmentStats> {
    if durations.is_empty() {
        return Err(Error::EmptyInput("segment_stats needs at least one duration".into()));
    }
    let n = durations.len() as f64;
    let mean = durations.iter().sum::<f64>() / n;
    let var = durations.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
    let mut sorted = durations.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    };
    Ok(SegmentStats { mean, median, std: var.sqrt() })
}

/// Zero-impurity condition for a frame length against segment-duration
/// stats of the target corpus (`l`) and a reference corpus (`j`):
/// the frame must sit below l.mean - l.std, which in turn must sit below
/// j.mean - j.std. Both comparisons are strict.
pub fn purity_condition(frame_len_s: f64, l: &SegmentStats, j: &SegmentStats) -> bool {
    let l_floor = l.mean - l.std;
    let j_floor = j.mean - j.std;
    frame_len_s < l_floor && l_floor < j_floor
}

/// One row of a segment manifest CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub file: String,
    pub segment_id: u32,
    pub start: f64,
    pub duration: f64,
    pub pseudo_label: u32,
    pub ground_speaker: Option<u32>,
}

/// Write manifest rows as CSV with the fixed header
/// `file,segment_id,start,duration,pseudo_label,ground_speaker`.
/// `ground_speaker` is left empty when unknown. File names with commas are
/// rejected rather than quoted.
pub fn write_manifest<P: AsRef<Path>>(path: P, rows: &[ManifestRow]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
    writeln!(out, "file,segment_id,start,duration,pseudo_label,ground_speaker")?;
    for r in rows {
        if r.file.contains(',') {
            return Err(Error::Manifest(format!("file name '{}' contains a comma", r.file)));
        }
        let ground = r.ground_speaker.map(|g| g.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{:.6},{:.6},{},{}",
            r.file, r.segment_id, r.start, r.duration, r.pseudo_label, ground
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_manifest<P: AsRef<Path>>(path: P) -> Result<Vec<ManifestRow>> {
    let path = path.as_ref();
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Manifest(format!("{}: empty manifest", path.display())))??;
    if header.trim() != "file,segment_id,start,duration,pseudo_label,ground_speaker" {
        return Err(Error::Manifest(format!("{}: unexpected header '{header}'", path.display())));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Manifest(format!(
                "{}: line {} has {} fields, expected 6",
                path.display(),
                i + 2,
                fields.len()
            )));
        }
        let parse_err = |what: &str| {
            Error::Manifest(format!("{}: line {}: bad {what}", path.display(), i + 2))
        };
        rows.push(ManifestRow {
            file: fields[0].to_string(),
            segment_id: fields[1].parse().map_err(|_| parse_err("segment_id"))?,
            start: fields[2].parse().map_err(|_| parse_err("start"))?,
            duration: fields[3].parse().map_err(|_| parse_err("duration"))?,
            pseudo_label: fields[4].parse().map_err(|_| parse_err("pseudo_label"))?,
            ground_speaker: if fields[5].is_empty() {
                None
            } else {
                Some(fields[5].parse().map_err(|_| parse_err("ground_speaker"))?)
            },
        });
    }
    Ok(rows)
}
