//! Pseudo-label constraint machinery: cluster sets built from segments,
//! segment-level label scrambling, pair/triplet batch sampling, and noise
//! augmentation.
//!
//! Every frame inherits its segment's pseudo label. A pair drawn from one
//! cluster is a must-link (target 0); a pair drawn across clusters is a
//! cannot-link (target alpha). Augmentation blends raw audio frames with
//! noise before feature extraction, so sampled batches carry feature maps
//! of possibly-augmented audio.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::AudioBuffer;
use crate::features::{featurize, FeatureConfig, FeatureMap};
use crate::segmentation::{frame_segment, Segment};
use crate::{Error, Result};

const MAX_RETRIES: u32 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentInfo {
    pub segment_id: u32,
    pub pseudo_label: u32,
    pub ground_speaker: Option<u32>,
}

#[derive(Debug, Clone)]
struct FrameEntry {
    samples: Vec<f64>,
    segment_idx: usize,
}

/// Frames grouped by pseudo label, with cached feature maps of the raw
/// (un-augmented) audio.
#[derive(Debug, Clone)]
pub struct ClusterSet {
    frames: Vec<FrameEntry>,
    segments: Vec<SegmentInfo>,
    feature_cfg: FeatureConfig,
    features: Vec<FeatureMap>,
    by_label: BTreeMap<u32, Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RelabelRecord {
    pub segment_id: u32,
    pub old_label: u32,
    pub new_label: u32,
}

impl ClusterSet {
    /// Frame every segment and featurize the raw frames. Pseudo labels are
    /// taken from the segments as-is.
    pub fn from_segments(
        segments: &[Segment],
        frame_len_s: f64,
        sample_rate: u32,
        feature_cfg: &FeatureConfig,
    ) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::EmptyInput("cluster set needs at least one segment".into()));
        }
        feature_cfg.validate()?;
        let mut frames = Vec::new();
        let mut infos = Vec::new();
        for (si, seg) in segments.iter().enumerate() {
            infos.push(SegmentInfo {
                segment_id: seg.segment_id,
                pseudo_label: seg.pseudo_label,
                ground_speaker: seg.ground_speaker,
            });
            for f in frame_segment(seg, frame_len_s, sample_rate)? {
                frames.push(FrameEntry { samples: f.samples, segment_idx: si });
            }
        }
        let features = frames
            .iter()
            .map(|f| featurize(&f.samples, feature_cfg))
            .collect::<Result<Vec<_>>>()?;
        let mut cs = Self {
            frames,
            segments: infos,
            feature_cfg: feature_cfg.clone(),
            features,
            by_label: BTreeMap::new(),
        };
        cs.rebuild_index();
        Ok(cs)
    }

    fn rebuild_index(&mut self) {
        self.by_label.clear();
        for (i, f) in self.frames.iter().enumerate() {
            let label = self.segments[f.segment_idx].pseudo_label;
            self.by_label.entry(label).or_default().push(i);
        }
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn n_segments(&self) -> usize {
        self.segments.len()
    }

    /// Number of pseudo clusters (distinct pseudo labels).
    pub fn n_clusters(&self) -> usize {
        self.by_label.len()
    }

    /// Number of distinct annotated speakers.
    pub fn n_true_speakers(&self) -> usize {
        let mut set: Vec<u32> = self.segments.iter().filter_map(|s| s.ground_speaker).collect();
        set.sort_unstable();
        set.dedup();
        set.len()
    }

    pub fn segments(&self) -> &[SegmentInfo] {
        &self.segments
    }

    pub fn feature_cfg(&self) -> &FeatureConfig {
        &self.feature_cfg
    }

    pub fn frame_audio(&self, i: usize) -> &[f64] {
        &self.frames[i].samples
    }

    pub fn feature(&self, i: usize) -> &FeatureMap {
        &self.features[i]
    }

    pub fn features(&self) -> &[FeatureMap] {
        &self.features
    }

    pub fn pseudo_label(&self, i: usize) -> u32 {
        self.segments[self.frames[i].segment_idx].pseudo_label
    }

    pub fn ground_speaker(&self, i: usize) -> Option<u32> {
        self.segments[self.frames[i].segment_idx].ground_speaker
    }

    pub fn pseudo_labels(&self) -> Vec<u32> {
        (0..self.n_frames()).map(|i| self.pseudo_label(i)).collect()
    }

    /// Per-frame ground labels; fails if any frame is unannotated.
    pub fn ground_labels(&self) -> Result<Vec<u32>> {
        (0..self.n_frames())
            .map(|i| {
                self.ground_speaker(i).ok_or_else(|| {
                    Error::InvalidArg(format!("frame {i} has no ground speaker"))
                })
            })
            .collect()
    }

    /// Audit hook: overwrite every ground label. Training must be entirely
    /// unaffected by this (the loss trajectory only sees pseudo labels);
    /// tests poison the labels and assert identical loss curves.
    pub fn poison_ground(&mut self, value: u32) {
        for s in &mut self.segments {
            s.ground_speaker = Some(value);
        }
    }

    /// 0 for a must-link pair (same pseudo cluster), alpha otherwise.
    pub fn pairwise_target(&self, i: usize, j: usize, alpha: f64) -> f64 {
        if self.pseudo_label(i) == self.pseudo_label(j) {
            0.0
        } else {
            alpha
        }
    }

    /// Scramble pseudo labels of `round(ratio * n_segments)` uniformly
    /// chosen segments; each victim takes a different label drawn uniformly
    /// from the labels present before scrambling. Frames move with their
    /// segment. Returns the scrambled copy plus the relabel map.
    pub fn inject_impurity(&self, ratio: f64, seed: u64) -> Result<(Self, Vec<RelabelRecord>)> {
        if !(0.0..=1.0).contains(&ratio) {
            return Err(Error::InvalidArg(format!("impurity ratio {ratio} outside 0..=1")));
        }
        let count = (ratio * self.segments.len() as f64).round() as usize;
        let mut out = self.clone();
        if count == 0 {
            return Ok((out, Vec::new()));
        }
        if self.segments.len() < 2 {
            return Err(Error::InvalidArg(
                "cannot scramble labels with fewer than two segments".into(),
            ));
        }
        let mut labels: Vec<u32> = self.segments.iter().map(|s| s.pseudo_label).collect();
        labels.sort_unstable();
        labels.dedup();
        if labels.len() < 2 {
            return Err(Error::InvalidArg(
                "cannot scramble labels when only one label exists".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Partial Fisher-Yates: the first `count` slots end up holding a
        // uniform draw of distinct segment indices.
        let mut order: Vec<usize> = (0..self.segments.len()).collect();
        for k in 0..count {
            let pick = rng.random_range(k..order.len());
            order.swap(k, pick);
        }
        let mut records = Vec::with_capacity(count);
        for &si in order.iter().take(count) {
            let old = out.segments[si].pseudo_label;
            let pos = labels.binary_search(&old);
            let new = match pos {
                Ok(p) => {
                    let r = rng.random_range(0..labels.len() - 1);
                    labels[if r >= p { r + 1 } else { r }]
                }
                // The old label vanished from the snapshot only if labels
                // were not unique per segment; any uniform draw is fine.
                Err(_) => labels[rng.random_range(0..labels.len())],
            };
            out.segments[si].pseudo_label = new;
            records.push(RelabelRecord { segment_id: out.segments[si].segment_id, old_label: old, new_label: new });
        }
        out.rebuild_index();
        Ok((out, records))
    }

    /// Fraction of must-link frame pairs whose true speakers differ, and
    /// fraction of cannot-link frame pairs whose true speakers agree.
    /// Unannotated segments are left out of both counts.
    pub fn error_rates(&self) -> (f64, f64) {
        let mut must = (0u64, 0u64);
        let mut cannot = (0u64, 0u64);
        let frames_in: Vec<u64> = self
            .segments
            .iter()
            .enumerate()
            .map(|(si, _)| self.frames.iter().filter(|f| f.segment_idx == si).count() as u64)
            .collect();
        for a in 0..self.segments.len() {
            let sa = &self.segments[a];
            let (Some(ga), ma) = (sa.ground_speaker, frames_in[a]) else { continue };
            if ma >= 2 {
                must.0 += ma * (ma - 1) / 2;
            }
            for b in a + 1..self.segments.len() {
                let sb = &self.segments[b];
                let Some(gb) = sb.ground_speaker else { continue };
                let pairs = ma * frames_in[b];
                if sa.pseudo_label == sb.pseudo_label {
                    must.0 += pairs;
                    if ga != gb {
                        must.1 += pairs;
                    }
                } else {
                    cannot.0 += pairs;
                    if ga == gb {
                        cannot.1 += pairs;
                    }
                }
            }
        }
        let rate = |x: (u64, u64)| if x.0 == 0 { 0.0 } else { x.1 as f64 / x.0 as f64 };
        (rate(must), rate(cannot))
    }

    fn check_pair_preconditions(&self, batch_size: usize) -> Result<()> {
        if batch_size == 0 || batch_size % 2 != 0 {
            return Err(Error::InvalidArg(format!(
                "batch_size {batch_size} must be positive and even"
            )));
        }
        if self.n_clusters() < 2 {
            return Err(Error::InvalidArg("pair sampling needs at least two clusters".into()));
        }
        if !self.by_label.values().any(|v| v.len() >= 2) {
            return Err(Error::InvalidArg(
                "pair sampling needs a cluster with at least two frames".into(),
            ));
        }
        Ok(())
    }

    fn draw_pairs(
        &self,
        batch_size: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Vec<(usize, usize)>, Vec<bool>)> {
        let n = self.n_frames();
        let mut pairs = Vec::with_capacity(batch_size);
        let mut can_link = Vec::with_capacity(batch_size);
        for b in 0..batch_size {
            let can = b < batch_size / 2;
            if can {
                let i = self.retry(rng, "a frame whose cluster has a partner", |rng| {
                    let i = rng.random_range(0..n);
                    (self.by_label[&self.pseudo_label(i)].len() >= 2).then_some(i)
                })?;
                let mates = &self.by_label[&self.pseudo_label(i)];
                let j = self.retry(rng, "a distinct partner in the same cluster", |rng| {
                    let j = mates[rng.random_range(0..mates.len())];
                    (j != i).then_some(j)
                })?;
                pairs.push((i, j));
            } else {
                let i = rng.random_range(0..n);
                let li = self.pseudo_label(i);
                let j = self.retry(rng, "a frame from a different cluster", |rng| {
                    let j = rng.random_range(0..n);
                    (self.pseudo_label(j) != li).then_some(j)
                })?;
                pairs.push((i, j));
            }
            can_link.push(can);
        }
        Ok((pairs, can_link))
    }

    fn retry(
        &self,
        rng: &mut ChaCha8Rng,
        what: &str,
        mut draw: impl FnMut(&mut ChaCha8Rng) -> Option<usize>,
    ) -> Result<usize> {
        for _ in 0..MAX_RETRIES {
            if let Some(v) = draw(rng) {
                return Ok(v);
            }
        }
        Err(Error::SamplingExhausted { what: what.into(), retries: MAX_RETRIES })
    }

    /// Balanced pair batch from the raw frames: the first half are
    /// must-link pairs with target 0, the second half cannot-link pairs
    /// with target `alpha`.
    pub fn sample_pair_batch(&self, batch_size: usize, alpha: f64, seed: u64) -> Result<PairBatch> {
        self.check_pair_preconditions(batch_size)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (pairs, can_link) = self.draw_pairs(batch_size, &mut rng)?;
        let mut batch = PairBatch::default();
        for ((i, j), can) in pairs.into_iter().zip(can_link) {
            batch.left.push(self.features[i].clone());
            batch.right.push(self.features[j].clone());
            batch.targets.push(if can { 0.0 } else { alpha });
            batch.left_idx.push(i);
            batch.right_idx.push(j);
        }
        Ok(batch)
    }

    /// Like `sample_pair_batch`, but half of the left frames and half of
    /// the right frames (chosen at random) are blended with noise slices
    /// before feature extraction.
    pub fn sample_pair_batch_augmented(
        &self,
        batch_size: usize,
        alpha: f64,
        seed: u64,
        noise_pool: &[AudioBuffer],
        thres_range: (f64, f64),
    ) -> Result<PairBatch> {
        self.check_pair_preconditions(batch_size)?;
        validate_thres_range(thres_range)?;
        if noise_pool.is_empty() {
            return Err(Error::EmptyInput("augmentation needs a non-empty noise pool".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (pairs, can_link) = self.draw_pairs(batch_size, &mut rng)?;
        let left_seed = rng.random::<u64>();
        let right_seed = rng.random::<u64>();
        let gather = |side: &dyn Fn(&(usize, usize)) -> usize| -> Vec<Vec<f64>> {
            pairs.iter().map(|p| self.frames[side(p)].samples.clone()).collect()
        };
        let left_audio =
            augment_half_batch(&gather(&|p| p.0), noise_pool, thres_range, left_seed)?;
        let right_audio =
            augment_half_batch(&gather(&|p| p.1), noise_pool, thres_range, right_seed)?;

        let mut batch = PairBatch::default();
        for (b, ((i, j), can)) in pairs.iter().zip(can_link).enumerate() {
            // Untouched frames reuse the cached feature maps.
            let lf = if left_audio[b] == self.frames[*i].samples {
                self.features[*i].clone()
            } else {
                featurize(&left_audio[b], &self.feature_cfg)?
            };
            let rf = if right_audio[b] == self.frames[*j].samples {
                self.features[*j].clone()
            } else {
                featurize(&right_audio[b], &self.feature_cfg)?
            };
            batch.left.push(lf);
            batch.right.push(rf);
            batch.targets.push(if can { 0.0 } else { alpha });
            batch.left_idx.push(*i);
            batch.right_idx.push(*j);
        }
        Ok(batch)
    }

    /// Anchor/positive from one cluster, negative from another.
    pub fn sample_triplet_batch(&self, batch_size: usize, seed: u64) -> Result<TripletBatch> {
        if batch_size == 0 {
            return Err(Error::InvalidArg("batch_size must be positive".into()));
        }
        if self.n_clusters() < 2 {
            return Err(Error::InvalidArg("triplet sampling needs at least two clusters".into()));
        }
        if !self.by_label.values().any(|v| v.len() >= 2) {
            return Err(Error::InvalidArg(
                "triplet sampling needs a cluster with at least two frames".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.n_frames();
        let mut batch = TripletBatch::default();
        for _ in 0..batch_size {
            let a = self.retry(&mut rng, "an anchor whose cluster has a positive", |rng| {
                let a = rng.random_range(0..n);
                (self.by_label[&self.pseudo_label(a)].len() >= 2).then_some(a)
            })?;
            let la = self.pseudo_label(a);
            let mates = &self.by_label[&la];
            let p = self.retry(&mut rng, "a positive distinct from the anchor", |rng| {
                let p = mates[rng.random_range(0..mates.len())];
                (p != a).then_some(p)
            })?;
            let neg = self.retry(&mut rng, "a negative from a different cluster", |rng| {
                let j = rng.random_range(0..n);
                (self.pseudo_label(j) != la).then_some(j)
            })?;
            batch.anchor.push(self.features[a].clone());
            batch.positive.push(self.features[p].clone());
            batch.negative.push(self.features[neg].clone());
            batch.anchor_label.push(la);
            batch.negative_label.push(self.pseudo_label(neg));
            batch.anchor_idx.push(a);
            batch.positive_idx.push(p);
            batch.negative_idx.push(neg);
        }
        Ok(batch)
    }
}

#[derive(Debug, Clone, Default)]
pub struct PairBatch {
    pub left: Vec<FeatureMap>,
    pub right: Vec<FeatureMap>,
    pub targets: Vec<f64>,
    pub left_idx: Vec<usize>,
    pub right_idx: Vec<usize>,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.targets.len()
    }
    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

#[derive(Debug, Clone, Default)]
pub struct TripletBatch {
    pub anchor: Vec<FeatureMap>,
    pub positive: Vec<FeatureMap>,
    pub negative: Vec<FeatureMap>,
    pub anchor_label: Vec<u32>,
    pub negative_label: Vec<u32>,
    pub anchor_idx: Vec<usize>,
    pub positive_idx: Vec<usize>,
    pub negative_idx: Vec<usize>,
}

impl TripletBatch {
    pub fn len(&self) -> usize {
        self.anchor.len()
    }
    pub fn is_empty(&self) -> bool {
        self.anchor.is_empty()
    }
}

fn validate_thres_range(r: (f64, f64)) -> Result<()> {
    if !(0.0..=1.0).contains(&r.0) || !(0.0..=1.0).contains(&r.1) || r.0 > r.1 {
        return Err(Error::InvalidArg(format!(
            "thres range [{}, {}] must satisfy 0 <= lo <= hi <= 1",
            r.0, r.1
        )));
    }
    Ok(())
}

/// Convex blend of a frame with a noise slice of the same length:
/// x*(1-thres) + noise*thres.
pub fn augment(x: &[f64], noise: &[f64], thres: f64) -> Result<Vec<f64>> {
    if x.len() != noise.len() {
        return Err(Error::ShapeMismatch(format!(
            "frame has {} samples, noise slice has {}",
            x.len(),
            noise.len()
        )));
    }
    if !(0.0..=1.0).contains(&thres) {
        return Err(Error::InvalidArg(format!("thres {thres} outside 0..=1")));
    }
    Ok(x.iter().zip(noise).map(|(&a, &b)| a * (1.0 - thres) + b * thres).collect())
}

/// Blend a uniformly chosen half (rounded down) of the frames with random
/// slices of random pool buffers, each at a blend level drawn from
/// `thres_range`. The untouched frames come back unchanged.
pub fn augment_half_batch(
    frames: &[Vec<f64>],
    noise_pool: &[AudioBuffer],
    thres_range: (f64, f64),
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    validate_thres_range(thres_range)?;
    if noise_pool.is_empty() {
        return Err(Error::EmptyInput("augmentation needs a non-empty noise pool".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<Vec<f64>> = frames.to_vec();
    let k = frames.len() / 2;
    let mut order: Vec<usize> = (0..frames.len()).collect();
    for i in 0..k {
        let pick = rng.random_range(i..order.len());
        order.swap(i, pick);
    }
    let mut chosen: Vec<usize> = order[..k].to_vec();
    chosen.sort_unstable();
    for idx in chosen {
        let flen = frames[idx].len();
        let buf = &noise_pool[rng.random_range(0..noise_pool.len())];
        if buf.samples.len() < flen {
            return Err(Error::ShapeMismatch(format!(
                "noise buffer of {} samples is shorter than the {}-sample frame",
                buf.samples.len(),
                flen
            )));
        }
        let off = rng.random_range(0..=buf.samples.len() - flen);
        let thres = if thres_range.0 == thres_range.1 {
            thres_range.0
        } else {
            rng.random_range(thres_range.0..thres_range.1)
        };
        out[idx] = augment(&frames[idx], &buf.samples[off..off + flen], thres)?;
    }
    Ok(out)
}

/// Write a relabel map as CSV with header `segment_id,old_label,new_label`.
pub fn write_relabel_csv<P: AsRef<Path>>(path: P, records: &[RelabelRecord]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
    writeln!(out, "segment_id,old_label,new_label")?;
    for r in records {
        writeln!(out, "{},{},{}", r.segment_id, r.old_label, r.new_label)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{gen_noise, NoiseKind, SAMPLE_RATE};
    use proptest::prelude::*;

    fn tone_segment(freq: f64, id: u32, ground: u32) -> Segment {
        let n = SAMPLE_RATE as usize;
        let samples = (0..n)
            .map(|i| {
                0.7 * (2.0 * std::f64::consts::PI * freq * i as f64 / SAMPLE_RATE as f64).sin()
            })
            .collect();
        Segment {
            samples,
            start: 0.0,
            duration: 1.0,
            segment_id: id,
            pseudo_label: id,
            ground_speaker: Some(ground),
        }
    }

    fn mini_set(speakers: u32, segs_per: u32) -> ClusterSet {
        let mut segs = Vec::new();
        let mut id = 0;
        for spk in 0..speakers {
            for _ in 0..segs_per {
                segs.push(tone_segment(250.0 + 130.0 * spk as f64, id, spk));
                id += 1;
            }
        }
        ClusterSet::from_segments(&segs, 0.2, SAMPLE_RATE, &FeatureConfig::default()).unwrap()
    }

    #[test]
    fn builds_with_expected_counts() {
        let cs = mini_set(3, 4);
        assert_eq!(cs.n_segments(), 12);
        assert_eq!(cs.n_clusters(), 12);
        assert_eq!(cs.n_frames(), 60);
        assert_eq!(cs.n_true_speakers(), 3);
        assert_eq!(cs.feature(0).shape(), (100, 91));
        for i in 0..5 {
            assert_eq!(cs.pseudo_label(i), 0);
            assert_eq!(cs.ground_speaker(i), Some(0));
        }
        assert_eq!(cs.pseudo_label(5), 1);
    }

    #[test]
    fn pairwise_target_follows_cluster_membership() {
        let cs = mini_set(2, 2);
        assert_eq!(cs.pairwise_target(0, 1, 1.0), 0.0);
        assert_eq!(cs.pairwise_target(0, 5, 1.0), 1.0);
        assert_eq!(cs.pairwise_target(0, 5, 0.7), 0.7);
    }

    #[test]
    fn zero_impurity_changes_nothing() {
        let cs = mini_set(3, 4);
        let (out, records) = cs.inject_impurity(0.0, 5).unwrap();
        assert!(records.is_empty());
        assert_eq!(out.pseudo_labels(), cs.pseudo_labels());
    }

    #[test]
    fn impurity_scrambles_exactly_rounded_count() {
        let cs = mini_set(3, 4);
        let originals: Vec<u32> = cs.segments().iter().map(|s| s.pseudo_label).collect();
        let (out, records) = cs.inject_impurity(0.25, 7).unwrap();
        assert_eq!(records.len(), 3);
        let mut touched: Vec<u32> = records.iter().map(|r| r.segment_id).collect();
        touched.sort_unstable();
        touched.dedup();
        assert_eq!(touched.len(), 3, "victims must be distinct");
        for r in &records {
            assert_ne!(r.old_label, r.new_label);
            assert!(originals.contains(&r.new_label));
        }
        // Frames moved with their segments.
        for (si, info) in out.segments().iter().enumerate() {
            for i in 0..out.n_frames() {
                if out.frames[i].segment_idx == si {
                    assert_eq!(out.pseudo_label(i), info.pseudo_label);
                }
            }
        }
        // round() decides the count: 0.1*12 = 1.2 -> 1, 0.125*12 = 1.5 -> 2.
        assert_eq!(cs.inject_impurity(0.1, 1).unwrap().1.len(), 1);
        assert_eq!(cs.inject_impurity(0.125, 1).unwrap().1.len(), 2);
        assert!(cs.inject_impurity(1.1, 1).is_err());
    }

    #[test]
    fn impurity_is_seed_deterministic() {
        let cs = mini_set(3, 4);
        let (a, ra) = cs.inject_impurity(0.25, 11).unwrap();
        let (b, rb) = cs.inject_impurity(0.25, 11).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a.pseudo_labels(), b.pseudo_labels());
        let (_, rc) = cs.inject_impurity(0.25, 12).unwrap();
        assert_ne!(ra, rc);
    }

    #[test]
    fn error_rates_match_hand_counts() {
        // Two speakers, two segments each, 5 frames per segment.
        let segs = vec![
            tone_segment(250.0, 0, 0),
            tone_segment(250.0, 1, 0),
            tone_segment(380.0, 2, 1),
            tone_segment(380.0, 3, 1),
        ];
        let cs =
            ClusterSet::from_segments(&segs, 0.2, SAMPLE_RATE, &FeatureConfig::default()).unwrap();
        let (must, cannot) = cs.error_rates();
        assert_eq!(must, 0.0);
        // Cross-label frame pairs: 6 segment pairs * 25; same-speaker: 2 * 25.
        assert!((cannot - 50.0 / 150.0).abs() < 1e-12);

        // Relabel segment 1 onto segment 2's cluster.
        let mut segs2 = segs;
        segs2[1].pseudo_label = 2;
        let cs2 =
            ClusterSet::from_segments(&segs2, 0.2, SAMPLE_RATE, &FeatureConfig::default()).unwrap();
        let (must2, cannot2) = cs2.error_rates();
        assert!((must2 - 25.0 / 65.0).abs() < 1e-12);
        assert!((cannot2 - 50.0 / 125.0).abs() < 1e-12);
    }

    #[test]
    fn pair_batches_are_balanced_and_labeled() {
        let cs = mini_set(3, 2);
        let alpha = 1.0;
        let batch = cs.sample_pair_batch(32, alpha, 99).unwrap();
        assert_eq!(batch.len(), 32);
        assert!(batch.targets[..16].iter().all(|&t| t == 0.0));
        assert!(batch.targets[16..].iter().all(|&t| t == alpha));
        for b in 0..32 {
            let (i, j) = (batch.left_idx[b], batch.right_idx[b]);
            assert_ne!(i, j);
            if batch.targets[b] == 0.0 {
                assert_eq!(cs.pseudo_label(i), cs.pseudo_label(j));
            } else {
                assert_ne!(cs.pseudo_label(i), cs.pseudo_label(j));
            }
            assert_eq!(batch.left[b], *cs.feature(i));
            assert_eq!(batch.right[b], *cs.feature(j));
        }
        let again = cs.sample_pair_batch(32, alpha, 99).unwrap();
        assert_eq!(batch.left_idx, again.left_idx);
        assert_eq!(batch.right_idx, again.right_idx);
        let other = cs.sample_pair_batch(32, alpha, 100).unwrap();
        assert_ne!(batch.left_idx, other.left_idx);
    }

    #[test]
    fn pair_sampling_rejects_bad_inputs() {
        let cs = mini_set(3, 2);
        assert!(cs.sample_pair_batch(33, 1.0, 0).is_err());
        assert!(cs.sample_pair_batch(0, 1.0, 0).is_err());
        let single = ClusterSet::from_segments(
            &[tone_segment(300.0, 0, 0)],
            0.2,
            SAMPLE_RATE,
            &FeatureConfig::default(),
        )
        .unwrap();
        assert!(single.sample_pair_batch(4, 1.0, 0).is_err());
    }

    #[test]
    fn augmented_batches_touch_exactly_half_of_each_side() {
        let cs = mini_set(2, 2);
        let pool = vec![gen_noise(NoiseKind::White, 1.0, 3).unwrap()];
        let batch = cs
            .sample_pair_batch_augmented(16, 1.0, 42, &pool, (0.02, 0.07))
            .unwrap();
        let changed_left = (0..16)
            .filter(|&b| batch.left[b] != *cs.feature(batch.left_idx[b]))
            .count();
        let changed_right = (0..16)
            .filter(|&b| batch.right[b] != *cs.feature(batch.right_idx[b]))
            .count();
        assert_eq!(changed_left, 8);
        assert_eq!(changed_right, 8);
        let again = cs
            .sample_pair_batch_augmented(16, 1.0, 42, &pool, (0.02, 0.07))
            .unwrap();
        assert_eq!(batch.left[0], again.left[0]);
        assert_eq!(batch.targets, again.targets);
    }

    #[test]
    fn augmented_batch_validates_pool_and_range() {
        let cs = mini_set(2, 2);
        let short = vec![gen_noise(NoiseKind::White, 0.1, 3).unwrap()];
        assert!(cs.sample_pair_batch_augmented(4, 1.0, 0, &short, (0.0, 0.07)).is_err());
        let pool = vec![gen_noise(NoiseKind::White, 1.0, 3).unwrap()];
        assert!(cs.sample_pair_batch_augmented(4, 1.0, 0, &pool, (0.5, 0.2)).is_err());
        assert!(cs.sample_pair_batch_augmented(4, 1.0, 0, &pool, (-0.1, 0.2)).is_err());
        assert!(cs.sample_pair_batch_augmented(4, 1.0, 0, &[], (0.0, 0.07)).is_err());
    }

    #[test]
    fn augment_boundary_identities_are_bit_exact() {
        let x: Vec<f64> = (0..100).map(|i| (i as f64 * 0.17).sin() * 0.3).collect();
        let n: Vec<f64> = (0..100).map(|i| (i as f64 * 0.05).cos() * 0.9).collect();
        assert_eq!(augment(&x, &n, 0.0).unwrap(), x);
        assert_eq!(augment(&x, &n, 1.0).unwrap(), n);
    }

    #[test]
    fn augment_is_the_stated_blend() {
        let x: Vec<f64> = (0..64).map(|i| (i as f64 * 0.3).sin()).collect();
        let n: Vec<f64> = (0..64).map(|i| (i as f64 * 0.7).cos()).collect();
        for thres in [0.03, 0.25, 0.5, 0.9] {
            let out = augment(&x, &n, thres).unwrap();
            for k in 0..64 {
                let reference = x[k] - thres * x[k] + thres * n[k];
                assert!((out[k] - reference).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn augment_rejects_bad_args() {
        let x = vec![0.0; 10];
        let n = vec![0.0; 11];
        assert!(matches!(augment(&x, &n, 0.5), Err(Error::ShapeMismatch(_))));
        let n = vec![0.0; 10];
        assert!(augment(&x, &n, -0.1).is_err());
        assert!(augment(&x, &n, 1.2).is_err());
    }

    #[test]
    fn augment_half_batch_changes_floor_half() {
        let frames: Vec<Vec<f64>> =
            (0..7).map(|k| (0..160).map(|i| ((i + k * 7) as f64 * 0.21).sin()).collect()).collect();
        let pool = vec![gen_noise(NoiseKind::Pink, 0.5, 9).unwrap()];
        let out = augment_half_batch(&frames, &pool, (0.05, 0.07), 4).unwrap();
        assert_eq!(out.len(), 7);
        let changed = frames.iter().zip(&out).filter(|(a, b)| a != b).count();
        assert_eq!(changed, 3);
        for f in &out {
            assert_eq!(f.len(), 160);
        }
        let again = augment_half_batch(&frames, &pool, (0.05, 0.07), 4).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn triplet_batches_obey_label_contract() {
        let cs = mini_set(3, 2);
        let batch = cs.sample_triplet_batch(24, 17).unwrap();
        assert_eq!(batch.len(), 24);
        for b in 0..24 {
            let (a, p, n) = (batch.anchor_idx[b], batch.positive_idx[b], batch.negative_idx[b]);
            assert_ne!(a, p);
            assert_eq!(cs.pseudo_label(a), cs.pseudo_label(p));
            assert_ne!(cs.pseudo_label(a), cs.pseudo_label(n));
            assert_eq!(batch.anchor_label[b], cs.pseudo_label(a));
            assert_eq!(batch.negative_label[b], cs.pseudo_label(n));
        }
        let again = cs.sample_triplet_batch(24, 17).unwrap();
        assert_eq!(batch.anchor_idx, again.anchor_idx);
    }

    #[test]
    fn relabel_csv_is_written_verbatim() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("relabel.csv");
        let records = vec![
            RelabelRecord { segment_id: 4, old_label: 4, new_label: 9 },
            RelabelRecord { segment_id: 7, old_label: 7, new_label: 0 },
        ];
        write_relabel_csv(&path, &records).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "segment_id,old_label,new_label\n4,4,9\n7,7,0\n");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn pair_targets_are_exactly_zero_or_alpha(seed in 0u64..1000, alpha in 0.1f64..3.0) {
            let cs = mini_set(2, 2);
            let batch = cs.sample_pair_batch(8, alpha, seed).unwrap();
            let zeros = batch.targets.iter().filter(|&&t| t == 0.0).count();
            let alphas = batch.targets.iter().filter(|&&t| t == alpha).count();
            prop_assert_eq!(zeros, 4);
            prop_assert_eq!(alphas, 4);
            for b in 0..batch.len() {
                let same = cs.pseudo_label(batch.left_idx[b]) == cs.pseudo_label(batch.right_idx[b]);
                prop_assert_eq!(batch.targets[b] == 0.0, same);
            }
        }
    }
}
