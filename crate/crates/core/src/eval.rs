//! Clustering of embeddings and agreement scores against reference labels.
//!
//! Embeddings are clustered with seeded k-means++ and Lloyd iterations.
//! Agreement uses three standard scores: best-match accuracy (optimal
//! one-to-one cluster/label assignment), normalized mutual information
//! (arithmetic-mean normalization), and the adjusted Rand index.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::constraints::ClusterSet;
use crate::embedder::Network;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct KmeansResult {
    pub assignments: Vec<u32>,
    /// k x d centroid matrix.
    pub centroids: Array2<f64>,
    /// Final within-cluster sum of squared distances.
    pub wcss: f64,
    /// One entry per Lloyd iteration, measured at assignment time.
    pub wcss_history: Vec<f64>,
    pub iterations: usize,
}

/// Seeded k-means++ initialization followed by at most `max_iter` Lloyd
/// iterations. A cluster that loses all points keeps its previous centroid.
pub fn kmeans_with(data: &Array2<f64>, k: usize, seed: u64, max_iter: usize) -> Result<KmeansResult> {
    let (n, d) = data.dim();
    if n == 0 || d == 0 {
        return Err(Error::EmptyInput("k-means needs a non-empty data matrix".into()));
    }
    if k == 0 || k > n {
        return Err(Error::InvalidArg(format!("k = {k} outside 1..={n} for {n} points")));
    }
    if max_iter == 0 {
        return Err(Error::InvalidArg("k-means needs at least one iteration".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sq_dist = |a: usize, c: &Array2<f64>, row: usize| -> f64 {
        data.row(a)
            .iter()
            .zip(c.row(row))
            .map(|(x, y)| (x - y) * (x - y))
            .sum()
    };

    // k-means++ seeding: first centroid uniform, then distance-squared
    // weighted draws.
    let mut centroids = Array2::zeros((k, d));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&data.row(first));
    let mut best_d2: Vec<f64> = (0..n).map(|i| sq_dist(i, &centroids, 0)).collect();
    for c in 1..k {
        let total: f64 = best_d2.iter().sum();
        let pick = if total > 0.0 {
            let r = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, w) in best_d2.iter().enumerate() {
                acc += w;
                if r < acc {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).assign(&data.row(pick));
        for (i, slot) in best_d2.iter_mut().enumerate() {
            let nd = sq_dist(i, &centroids, c);
            if nd < *slot {
                *slot = nd;
            }
        }
    }

    let mut assignments = vec![0u32; n];
    let mut wcss_history = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iter {
        iterations += 1;
        let mut wcss = 0.0;
        let mut changed = false;
        for i in 0..n {
            let mut best = 0u32;
            let mut best_val = f64::INFINITY;
            for c in 0..k {
                let v = sq_dist(i, &centroids, c);
                if v < best_val {
                    best_val = v;
                    best = c as u32;
                }
            }
            wcss += best_val;
            if assignments[i] != best {
                assignments[i] = best;
                changed = true;
            }
        }
        wcss_history.push(wcss);
        if !changed && iterations > 1 {
            break;
        }
        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0u64; k];
        for i in 0..n {
            let c = assignments[i] as usize;
            counts[c] += 1;
            let mut row = sums.row_mut(c);
            for (slot, v) in row.iter_mut().zip(data.row(i)) {
                *slot += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                let mut row = centroids.row_mut(c);
                for (slot, s) in row.iter_mut().zip(sums.row(c)) {
                    *slot = s * inv;
                }
            }
        }
    }
    let wcss = *wcss_history.last().expect("at least one iteration ran");
    Ok(KmeansResult { assignments, centroids, wcss, wcss_history, iterations })
}

pub fn kmeans(data: &Array2<f64>, k: usize, seed: u64) -> Result<KmeansResult> {
    kmeans_with(data, k, seed, 300)
}

/// Lowest-inertia result over `restarts` seeded k-means runs. Lloyd only
/// finds local optima, so evaluation quality is the best of several
/// initializations, deterministic in `seed`.
pub fn kmeans_best_of(
    data: &Array2<f64>,
    k: usize,
    seed: u64,
    max_iter: usize,
    restarts: usize,
) -> Result<KmeansResult> {
    if restarts == 0 {
        return Err(Error::InvalidArg("k-means needs at least one restart".into()));
    }
    let mut best: Option<KmeansResult> = None;
    for r in 0..restarts {
        let sub = seed.wrapping_add((r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let run = kmeans_with(data, k, sub, max_iter)?;
        if best.as_ref().is_none_or(|b| run.wcss < b.wcss) {
            best = Some(run);
        }
    }
    Ok(best.expect("restarts >= 1"))
}

/// Dense contingency table between two labelings plus the compacted label
/// sets, in sorted order.
fn contingency(a: &[u32], b: &[u32]) -> Result<(Vec<Vec<u64>>, Vec<u32>, Vec<u32>)> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "labelings disagree in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::EmptyInput("agreement scores need at least one sample".into()));
    }
    let compact = |xs: &[u32]| -> Vec<u32> {
        let mut v = xs.to_vec();
        v.sort_unstable();
        v.dedup();
        v
    };
    let la = compact(a);
    let lb = compact(b);
    let mut table = vec![vec![0u64; lb.len()]; la.len()];
    for (&x, &y) in a.iter().zip(b) {
        let i = la.binary_search(&x).expect("value came from the same slice");
        let j = lb.binary_search(&y).expect("value came from the same slice");
        table[i][j] += 1;
    }
    Ok((table, la, lb))
}

/// Minimum-cost assignment on a rectangular cost matrix (rows <= cols),
/// returning for each row its assigned column.
fn hungarian_min(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let m = cost[0].len();
    debug_assert!(n <= m);
    // Potentials-based shortest augmenting path method, 1-indexed.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![usize::MAX; n];
    for j in 1..=m {
        if p[j] != 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// Fraction of samples explained by the best one-to-one matching between
/// predicted clusters and reference labels.
pub fn accuracy(pred: &[u32], truth: &[u32]) -> Result<f64> {
    let (table, la, lb) = contingency(pred, truth)?;
    let n = pred.len() as f64;
    // Orient so rows are the smaller side, then minimize (max - count).
    let flip = la.len() > lb.len();
    let (rows, cols) = if flip { (lb.len(), la.len()) } else { (la.len(), lb.len()) };
    let get = |r: usize, c: usize| if flip { table[c][r] } else { table[r][c] };
    let maxval = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (r, c)))
        .map(|(r, c)| get(r, c))
        .max()
        .unwrap_or(0) as f64;
    let cost: Vec<Vec<f64>> =
        (0..rows).map(|r| (0..cols).map(|c| maxval - get(r, c) as f64).collect()).collect();
    let assign = hungarian_min(&cost);
    let matched: u64 = assign.iter().enumerate().map(|(r, &c)| get(r, c)).sum();
    Ok(matched as f64 / n)
}

/// Mutual information normalized by the arithmetic mean of the two label
/// entropies. Returns 0 when both partitions are single clusters.
pub fn nmi_score(pred: &[u32], truth: &[u32]) -> Result<f64> {
    let (table, _la, lb) = contingency(pred, truth)?;
    let n = pred.len() as f64;
    let a_sums: Vec<u64> = table.iter().map(|row| row.iter().sum()).collect();
    let mut b_sums = vec![0u64; lb.len()];
    for row in &table {
        for (j, v) in row.iter().enumerate() {
            b_sums[j] += v;
        }
    }
    let entropy = |sums: &[u64]| -> f64 {
        sums.iter()
            .filter(|&&s| s > 0)
            .map(|&s| {
                let p = s as f64 / n;
                -p * p.ln()
            })
            .sum()
    };
    let ha = entropy(&a_sums);
    let hb = entropy(&b_sums);
    let denom = 0.5 * (ha + hb);
    if denom == 0.0 {
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if v == 0 {
                continue;
            }
            let pij = v as f64 / n;
            mi += pij * (n * v as f64 / (a_sums[i] as f64 * b_sums[j] as f64)).ln();
        }
    }
    Ok((mi / denom).clamp(0.0, 1.0))
}

/// Adjusted Rand index. Returns 1 when the correction denominator is zero
/// (both partitions trivially identical in pair structure).
pub fn ari_score(pred: &[u32], truth: &[u32]) -> Result<f64> {
    let (table, _, lb) = contingency(pred, truth)?;
    let choose2 = |x: u64| -> f64 { (x as f64) * (x as f64 - 1.0) / 2.0 };
    let a_sums: Vec<u64> = table.iter().map(|row| row.iter().sum()).collect();
    let mut b_sums = vec![0u64; lb.len()];
    for row in &table {
        for (j, v) in row.iter().enumerate() {
            b_sums[j] += v;
        }
    }
    let index: f64 = table.iter().flatten().map(|&v| choose2(v)).sum();
    let sum_a: f64 = a_sums.iter().map(|&v| choose2(v)).sum();
    let sum_b: f64 = b_sums.iter().map(|&v| choose2(v)).sum();
    let total = choose2(pred.len() as u64);
    if total == 0.0 {
        // A single point has no pairs for the partitions to disagree on.
        return Ok(1.0);
    }
    let expected = sum_a * sum_b / total;
    let max_index = 0.5 * (sum_a + sum_b);
    if (max_index - expected).abs() == 0.0 {
        return Ok(1.0);
    }
    Ok((index - expected) / (max_index - expected))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterScores {
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
}

pub fn cluster_scores(pred: &[u32], truth: &[u32]) -> Result<ClusterScores> {
    Ok(ClusterScores {
        acc: accuracy(pred, truth)?,
        nmi: nmi_score(pred, truth)?,
        ari: ari_score(pred, truth)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub kmeans_seed: u64,
    pub kmeans_max_iter: usize,
    /// Number of k-means initializations; the lowest-inertia run scores.
    pub kmeans_restarts: usize,
    /// L2-normalize embeddings before clustering (matches the geometry the
    /// triplet loss trains in).
    pub normalize: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { kmeans_seed: 0, kmeans_max_iter: 300, kmeans_restarts: 10, normalize: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitScores {
    pub scores: ClusterScores,
    pub k: usize,
    pub n_frames: usize,
}

/// Scores for one training run: how well embeddings of the training frames
/// recover the pseudo clusters, and how well embeddings of held-out frames
/// recover the true speakers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub train_pseudo: SplitScores,
    pub eval_ground: SplitScores,
}

fn embed_for_clustering(net: &Network, cs: &ClusterSet, normalize: bool) -> Result<Array2<f64>> {
    let mut e = net.forward_batch(cs.features())?;
    if normalize {
        for mut row in e.rows_mut() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm >= 1e-12 {
                row.mapv_inplace(|v| v / norm);
            }
        }
    }
    Ok(e)
}

pub fn evaluate(
    net: &Network,
    train: &ClusterSet,
    held_out: &ClusterSet,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let train_emb = embed_for_clustering(net, train, cfg.normalize)?;
    let k_train = train.n_clusters();
    let km = kmeans_best_of(
        &train_emb,
        k_train,
        cfg.kmeans_seed,
        cfg.kmeans_max_iter,
        cfg.kmeans_restarts,
    )?;
    let train_pseudo = SplitScores {
        scores: cluster_scores(&km.assignments, &train.pseudo_labels())?,
        k: k_train,
        n_frames: train.n_frames(),
    };

    let held_emb = embed_for_clustering(net, held_out, cfg.normalize)?;
    let k_true = held_out.n_true_speakers();
    let truth = held_out.ground_labels()?;
    let km = kmeans_best_of(
        &held_emb,
        k_true,
        cfg.kmeans_seed,
        cfg.kmeans_max_iter,
        cfg.kmeans_restarts,
    )?;
    let eval_ground = SplitScores {
        scores: cluster_scores(&km.assignments, &truth)?,
        k: k_true,
        n_frames: held_out.n_frames(),
    };
    Ok(EvalReport { train_pseudo, eval_ground })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn blob_data(centers: &[(f64, f64)], per: usize, spread: f64, seed: u64) -> (Array2<f64>, Vec<u32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = centers.len() * per;
        let mut data = Array2::zeros((n, 2));
        let mut labels = Vec::with_capacity(n);
        for (c, &(cx, cy)) in centers.iter().enumerate() {
            for i in 0..per {
                let r = c * per + i;
                data[(r, 0)] = cx + rng.random_range(-spread..spread);
                data[(r, 1)] = cy + rng.random_range(-spread..spread);
                labels.push(c as u32);
            }
        }
        (data, labels)
    }

    #[test]
    fn recovers_planted_separable_clusters() {
        let (data, truth) = blob_data(&[(0.0, 0.0), (10.0, 0.0), (0.0, 10.0)], 20, 0.5, 3);
        let km = kmeans(&data, 3, 7).unwrap();
        let s = cluster_scores(&km.assignments, &truth).unwrap();
        assert_eq!(s.acc, 1.0);
        assert!((s.nmi - 1.0).abs() < 1e-12);
        assert!((s.ari - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wcss_history_never_increases() {
        let (data, _) = blob_data(&[(0.0, 0.0), (3.0, 1.0), (1.0, 4.0), (5.0, 5.0)], 15, 2.0, 11);
        let km = kmeans(&data, 4, 5).unwrap();
        for w in km.wcss_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "wcss went up: {} -> {}", w[0], w[1]);
        }
        assert_eq!(km.wcss, *km.wcss_history.last().unwrap());
    }

    #[test]
    fn degenerate_inputs_are_handled() {
        // All points identical: zero spread, any k works, wcss 0.
        let data = Array2::from_shape_vec((6, 2), vec![1.0; 12]).unwrap();
        let km = kmeans(&data, 3, 0).unwrap();
        assert_eq!(km.wcss, 0.0);
        assert_eq!(km.assignments.len(), 6);
        // k = 1 puts everything in cluster 0.
        let (data, _) = blob_data(&[(0.0, 0.0), (5.0, 5.0)], 10, 1.0, 2);
        let km = kmeans(&data, 1, 0).unwrap();
        assert!(km.assignments.iter().all(|&a| a == 0));
        // Errors: k of 0, k > n, empty data.
        assert!(kmeans(&data, 0, 0).is_err());
        assert!(kmeans(&data, 21, 0).is_err());
        assert!(kmeans(&Array2::zeros((0, 2)), 1, 0).is_err());
    }

    #[test]
    fn kmeans_is_seed_deterministic() {
        let (data, _) = blob_data(&[(0.0, 0.0), (4.0, 0.0), (2.0, 3.0)], 12, 1.5, 9);
        let a = kmeans(&data, 3, 42).unwrap();
        let b = kmeans(&data, 3, 42).unwrap();
        assert_eq!(a.assignments, b.assignments);
        assert_eq!(a.centroids, b.centroids);
    }

    /// Exhaustive best one-to-one matching for small label sets.
    fn brute_force_accuracy(pred: &[u32], truth: &[u32]) -> f64 {
        use itertools::Itertools;
        let (table, la, lb) = contingency(pred, truth).unwrap();
        let (rows, cols) = (la.len(), lb.len());
        let best: u64 = if rows <= cols {
            (0..cols)
                .permutations(rows)
                .map(|perm| (0..rows).map(|r| table[r][perm[r]]).sum())
                .max()
                .unwrap()
        } else {
            (0..rows)
                .permutations(cols)
                .map(|perm| (0..cols).map(|c| table[perm[c]][c]).sum())
                .max()
                .unwrap()
        };
        best as f64 / pred.len() as f64
    }

    #[test]
    fn accuracy_matches_exhaustive_matching() {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        for case in 0..200 {
            let n = rng.random_range(2..60);
            let ka = rng.random_range(1..=6u32);
            let kb = rng.random_range(1..=6u32);
            let pred: Vec<u32> = (0..n).map(|_| rng.random_range(0..ka)).collect();
            let truth: Vec<u32> = (0..n).map(|_| rng.random_range(0..kb)).collect();
            let fast = accuracy(&pred, &truth).unwrap();
            let slow = brute_force_accuracy(&pred, &truth);
            assert!((fast - slow).abs() < 1e-12, "case {case}: {fast} vs {slow}");
        }
    }

    #[test]
    fn accuracy_known_values() {
        // A relabeled copy scores 1.
        let truth = vec![0, 0, 1, 1, 2, 2];
        let pred = vec![5, 5, 9, 9, 7, 7];
        assert_eq!(accuracy(&pred, &truth).unwrap(), 1.0);
        // One sample out of ten misplaced.
        let truth = vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1];
        let pred = vec![0, 0, 0, 0, 1, 1, 1, 1, 1, 1];
        assert_eq!(accuracy(&pred, &truth).unwrap(), 0.9);
    }

    /// Direct-formula mutual information oracle.
    fn nmi_oracle(pred: &[u32], truth: &[u32]) -> f64 {
        let n = pred.len() as f64;
        let count = |xs: &[u32], v: u32| xs.iter().filter(|&&x| x == v).count() as f64;
        let uniq = |xs: &[u32]| {
            let mut v = xs.to_vec();
            v.sort_unstable();
            v.dedup();
            v
        };
        let mut mi = 0.0;
        for &a in &uniq(pred) {
            for &b in &uniq(truth) {
                let nij = pred
                    .iter()
                    .zip(truth)
                    .filter(|&(&x, &y)| x == a && y == b)
                    .count() as f64;
                if nij > 0.0 {
                    mi += nij / n * ((n * nij) / (count(pred, a) * count(truth, b))).ln();
                }
            }
        }
        let h = |xs: &[u32]| -> f64 {
            uniq(xs)
                .iter()
                .map(|&v| {
                    let p = count(xs, v) / n;
                    -p * p.ln()
                })
                .sum()
        };
        let denom = 0.5 * (h(pred) + h(truth));
        if denom == 0.0 {
            0.0
        } else {
            mi / denom
        }
    }

    /// Direct pair-counting adjusted Rand oracle.
    fn ari_oracle(pred: &[u32], truth: &[u32]) -> f64 {
        let n = pred.len();
        let (mut both, mut pred_same, mut truth_same) = (0.0f64, 0.0f64, 0.0f64);
        let mut total = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                total += 1.0;
                let p = pred[i] == pred[j];
                let t = truth[i] == truth[j];
                if p {
                    pred_same += 1.0;
                }
                if t {
                    truth_same += 1.0;
                }
                if p && t {
                    both += 1.0;
                }
            }
        }
        let expected = pred_same * truth_same / total;
        let max_index = 0.5 * (pred_same + truth_same);
        if (max_index - expected).abs() == 0.0 {
            1.0
        } else {
            (both - expected) / (max_index - expected)
        }
    }

    #[test]
    fn nmi_and_ari_match_direct_formulas() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..60 {
            let n = rng.random_range(2..40);
            let ka = rng.random_range(1..=5u32);
            let kb = rng.random_range(1..=5u32);
            let pred: Vec<u32> = (0..n).map(|_| rng.random_range(0..ka)).collect();
            let truth: Vec<u32> = (0..n).map(|_| rng.random_range(0..kb)).collect();
            assert!((nmi_score(&pred, &truth).unwrap() - nmi_oracle(&pred, &truth)).abs() < 1e-12);
            assert!((ari_score(&pred, &truth).unwrap() - ari_oracle(&pred, &truth)).abs() < 1e-12);
        }
    }

    #[test]
    fn score_conventions_at_degenerate_partitions() {
        // Both sides a single cluster: NMI 0 by convention, ARI 1.
        let ones = vec![0u32; 8];
        assert_eq!(nmi_score(&ones, &ones).unwrap(), 0.0);
        assert_eq!(ari_score(&ones, &ones).unwrap(), 1.0);
        // Identical non-trivial partitions score 1 on all three.
        let labels = vec![0, 0, 1, 1, 2, 2, 2];
        let s = cluster_scores(&labels, &labels).unwrap();
        assert_eq!(s.acc, 1.0);
        assert!((s.nmi - 1.0).abs() < 1e-12);
        assert!((s.ari - 1.0).abs() < 1e-12);
        // Crossed two-by-two case has a known negative ARI.
        let pred = vec![0, 0, 1, 1];
        let truth = vec![0, 1, 0, 1];
        assert!((ari_score(&pred, &truth).unwrap() + 0.5).abs() < 1e-12);
        // Mismatched lengths are an error.
        assert!(accuracy(&[0, 1], &[0]).is_err());
        assert!(nmi_score(&[], &[]).is_err());
    }

    #[test]
    fn scores_are_invariant_under_relabeling() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pred: Vec<u32> = (0..50).map(|_| rng.random_range(0..4)).collect();
        let truth: Vec<u32> = (0..50).map(|_| rng.random_range(0..3)).collect();
        let remap = [13u32, 2, 40, 7];
        let renamed: Vec<u32> = pred.iter().map(|&p| remap[p as usize]).collect();
        let a = cluster_scores(&pred, &truth).unwrap();
        let b = cluster_scores(&renamed, &truth).unwrap();
        // Renaming permutes summation order, so allow last-ulp wiggle.
        assert_eq!(a.acc, b.acc);
        assert!((a.nmi - b.nmi).abs() < 1e-12);
        assert!((a.ari - b.ari).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn wcss_is_monotone_for_random_data(seed in 0u64..500, k in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 20;
            let data = Array2::from_shape_vec(
                (n, 3),
                (0..n * 3).map(|_| rng.random_range(-5.0..5.0)).collect(),
            )
            .unwrap();
            let km = kmeans(&data, k, seed ^ 0xabc).unwrap();
            for w in km.wcss_history.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9);
            }
        }
    }
}
