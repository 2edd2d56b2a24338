//! Connectivity states: k-means over vectorized correlation matrices from all
//! subjects and time points, elbow selection of k, and Markov-chain summaries
//! of the per-subject state sequences.
//!
//! State labels exposed by this module are 1-based (`1..=k`).

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dyncorr::DynCorrSeries;
use crate::error::{Error, Result};
use crate::rng;

pub const SYMMETRY_TOLERANCE: f64 = 1e-9;
pub const DEFAULT_MAX_ITERATIONS: usize = 300;
pub const DEFAULT_MOVE_TOLERANCE: f64 = 1e-6;
pub const ELBOW_SLOPE_RATIO: f64 = 10.0;

/// Upper triangle of a symmetric matrix, entries `(i, j)` with `i < j` in row-major order.
pub fn vectorize_upper(c: &[Vec<f64>]) -> Result<Vec<f64>> {
    let p = c.len();
    if let Some(r) = c.iter().position(|row| row.len() != p) {
        return Err(Error::InvalidInput(format!(
            "row {r} has length {}, expected {p}",
            c[r].len()
        )));
    }
    let mut out = Vec::with_capacity(p * p.saturating_sub(1) / 2);
    for i in 0..p {
        for j in i + 1..p {
            let gap = (c[i][j] - c[j][i]).abs();
            if !(gap <= SYMMETRY_TOLERANCE) {
                return Err(Error::AsymmetricInput { i, j, gap });
            }
            out.push(c[i][j]);
        }
    }
    Ok(out)
}

/// Inverse of [`vectorize_upper`] with the given diagonal value.
pub fn unvectorize_upper(v: &[f64], diagonal: f64) -> Result<Vec<Vec<f64>>> {
    // p(p-1)/2 = len
    let p = ((1.0 + (1.0 + 8.0 * v.len() as f64).sqrt()) / 2.0).round() as usize;
    if p * (p - 1) / 2 != v.len() {
        return Err(Error::InvalidInput(format!(
            "{} is not a triangular number of edges",
            v.len()
        )));
    }
    let mut c = vec![vec![0.0; p]; p];
    let mut k = 0;
    for i in 0..p {
        c[i][i] = diagonal;
        for j in i + 1..p {
            c[i][j] = v[k];
            c[j][i] = v[k];
            k += 1;
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub restarts: usize,
    pub seed: u64,
    pub max_iterations: usize,
    pub move_tolerance: f64,
}

impl KMeansConfig {
    pub fn new(k: usize, restarts: usize, seed: u64) -> Self {
        Self {
            k,
            restarts,
            seed,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            move_tolerance: DEFAULT_MOVE_TOLERANCE,
        }
    }
}

/// Best-of-restarts clustering result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansFit {
    pub k: usize,
    pub dim: usize,
    /// Row-major `k x dim`.
    pub centroids: Vec<f64>,
    /// 1-based label per point.
    pub labels: Vec<usize>,
    pub sse_within: f64,
    pub sse_between: f64,
    pub sse_total: f64,
    pub iterations: usize,
    pub best_restart: usize,
}

impl KMeansFit {
    pub fn centroid(&self, label: usize) -> &[f64] {
        &self.centroids[(label - 1) * self.dim..label * self.dim]
    }

    pub fn ratio(&self) -> f64 {
        if self.sse_between > 0.0 {
            self.sse_within / self.sse_between
        } else if self.sse_within > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(point, centroid);
        // strict comparison keeps the lowest index on ties
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_plus_plus<R: Rng>(points: &[f64], dim: usize, k: usize, rng: &mut R) -> Vec<f64> {
    let n = points.len() / dim;
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.gen_range(0..n);
    centroids.extend_from_slice(&points[first * dim..(first + 1) * dim]);
    let mut d2: Vec<f64> = points
        .chunks_exact(dim)
        .map(|p| sq_dist(p, &centroids[..dim]))
        .collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let start = centroids.len();
        centroids.extend_from_slice(&points[pick * dim..(pick + 1) * dim]);
        let newest = centroids[start..].to_vec();
        for (d, p) in d2.iter_mut().zip(points.chunks_exact(dim)) {
            *d = d.min(sq_dist(p, &newest));
        }
    }
    centroids
}

struct LloydRun {
    centroids: Vec<f64>,
    labels: Vec<usize>,
    sse: f64,
    iterations: usize,
}

fn lloyd(points: &[f64], dim: usize, config: &KMeansConfig, restart: usize) -> LloydRun {
    let n = points.len() / dim;
    let k = config.k;
    let mut rng = rng::stream(config.seed, "kmeans", &[k as u64, restart as u64]);
    let mut centroids = kmeans_plus_plus(points, dim, k, &mut rng);
    let mut labels = vec![0usize; n];
    let mut dists = vec![0.0f64; n];
    let mut previous_sse = f64::INFINITY;
    let mut iterations = 0;

    for iter in 0..config.max_iterations.max(1) {
        iterations = iter + 1;
        let mut sse = 0.0;
        for (i, p) in points.chunks_exact(dim).enumerate() {
            let (c, d) = nearest(p, &centroids, dim);
            labels[i] = c;
            dists[i] = d;
            sse += d;
        }
        assert!(
            sse <= previous_sse * (1.0 + 1e-12) + 1e-12,
            "k-means SSE increased from {previous_sse} to {sse}"
        );
        previous_sse = sse;

        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (i, p) in points.chunks_exact(dim).enumerate() {
            counts[labels[i]] += 1;
            for (s, v) in sums[labels[i] * dim..(labels[i] + 1) * dim].iter_mut().zip(p) {
                *s += v;
            }
        }
        // re-seed empty clusters with the points farthest from their centroid
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| counts[labels[i]] > 1)
                .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)));
            if let Some(i) = far {
                let p = &points[i * dim..(i + 1) * dim];
                let old = labels[i];
                counts[old] -= 1;
                for (s, v) in sums[old * dim..(old + 1) * dim].iter_mut().zip(p) {
                    *s -= v;
                }
                labels[i] = c;
                dists[i] = 0.0;
                counts[c] = 1;
                sums[c * dim..(c + 1) * dim].copy_from_slice(p);
            }
        }
        let mut movement = 0.0f64;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let inv = 1.0 / counts[c] as f64;
            let mut shift = 0.0;
            for d in 0..dim {
                let updated = sums[c * dim + d] * inv;
                shift += (updated - centroids[c * dim + d]).powi(2);
                centroids[c * dim + d] = updated;
            }
            movement = movement.max(shift.sqrt());
        }
        if movement < config.move_tolerance {
            break;
        }
    }
    let sse = points
        .chunks_exact(dim)
        .zip(&labels)
        .map(|(p, &c)| sq_dist(p, &centroids[c * dim..(c + 1) * dim]))
        .sum();
    LloydRun {
        centroids,
        labels,
        sse,
        iterations,
    }
}

/// Lloyd's algorithm with k-means++ seeding, best of `restarts` runs by
/// within-cluster SSE. `points` is row-major `N x dim`.
pub fn kmeans(points: &[f64], dim: usize, config: &KMeansConfig) -> Result<KMeansFit> {
    if dim == 0 || points.is_empty() {
        return Err(Error::EmptyInput);
    }
    if points.len() % dim != 0 {
        return Err(Error::InvalidInput(format!(
            "{} values do not form rows of length {dim}",
            points.len()
        )));
    }
    let n = points.len() / dim;
    if config.k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    if config.k > n {
        return Err(Error::TooManyClusters { k: config.k, n });
    }
    if config.restarts == 0 {
        return Err(Error::InvalidInput("restarts must be at least 1".into()));
    }
    let runs: Vec<LloydRun> = (0..config.restarts)
        .into_par_iter()
        .map(|r| lloyd(points, dim, config, r))
        .collect();
    // ordered reduction: lowest SSE, earliest restart on ties
    let (best_restart, best) = runs
        .into_iter()
        .enumerate()
        .reduce(|a, b| if b.1.sse < a.1.sse { b } else { a })
        .expect("at least one restart");

    let mut grand = vec![0.0; dim];
    for p in points.chunks_exact(dim) {
        for (g, v) in grand.iter_mut().zip(p) {
            *g += v;
        }
    }
    grand.iter_mut().for_each(|g| *g /= n as f64);
    let sse_total = points.chunks_exact(dim).map(|p| sq_dist(p, &grand)).sum();
    let mut counts = vec![0usize; config.k];
    for &l in &best.labels {
        counts[l] += 1;
    }
    let sse_between = best
        .centroids
        .chunks_exact(dim)
        .zip(&counts)
        .map(|(c, &m)| m as f64 * sq_dist(c, &grand))
        .sum();

    Ok(KMeansFit {
        k: config.k,
        dim,
        centroids: best.centroids,
        labels: best.labels.iter().map(|l| l + 1).collect(),
        sse_within: best.sse,
        sse_between,
        sse_total,
        iterations: best.iterations,
        best_restart,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElbowResult {
    pub ks: Vec<usize>,
    pub within: Vec<f64>,
    pub between: Vec<f64>,
    pub ratios: Vec<f64>,
    pub chosen_k: usize,
    /// The curve does not flatten at the chosen k: the drop into it is less
    /// than `ELBOW_SLOPE_RATIO` times the drop out of it.
    pub weak_elbow: bool,
    /// Ratio curve increased somewhere (restart noise).
    pub non_monotone: bool,
    #[serde(skip)]
    pub fits: Vec<KMeansFit>,
}

impl ElbowResult {
    pub fn chosen_fit(&self) -> &KMeansFit {
        let idx = self.ks.iter().position(|&k| k == self.chosen_k).expect("chosen k in range");
        &self.fits[idx]
    }
}

/// Fits every k in `ks` and picks the one with the largest discrete second
/// difference `ratio(k-1) - 2 ratio(k) + ratio(k+1)` of the within/between
/// SSE ratio.
pub fn elbow_select(
    points: &[f64],
    dim: usize,
    ks: std::ops::RangeInclusive<usize>,
    restarts: usize,
    seed: u64,
) -> Result<ElbowResult> {
    let ks: Vec<usize> = ks.collect();
    if ks.is_empty() {
        return Err(Error::InvalidInput("empty k range".into()));
    }
    let fits = ks
        .iter()
        .map(|&k| kmeans(points, dim, &KMeansConfig::new(k, restarts, seed)))
        .collect::<Result<Vec<_>>>()?;
    let ratios: Vec<f64> = fits.iter().map(KMeansFit::ratio).collect();
    let non_monotone = ratios.windows(2).any(|w| w[1] > w[0] * (1.0 + 1e-9));

    let (chosen_k, weak_elbow) = if ks.len() < 3 {
        let idx = ratios
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map_or(0, |(i, _)| i);
        (ks[idx], true)
    } else {
        let second: Vec<f64> = (1..ks.len() - 1)
            .map(|i| ratios[i - 1] - 2.0 * ratios[i] + ratios[i + 1])
            .collect();
        let best = (0..second.len())
            .reduce(|a, b| if second[b] > second[a] { b } else { a })
            .expect("interior k");
        let before = ratios[best] - ratios[best + 1];
        let after = ratios[best + 1] - ratios[best + 2];
        let weak = !(second[best] > 0.0 && before >= ELBOW_SLOPE_RATIO * after.max(0.0));
        (ks[best + 1], weak)
    };
    Ok(ElbowResult {
        within: fits.iter().map(|f| f.sse_within).collect(),
        between: fits.iter().map(|f| f.sse_between).collect(),
        ks,
        ratios,
        chosen_k,
        weak_elbow,
        non_monotone,
        fits,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub k: usize,
    pub probs: Vec<Vec<f64>>,
    pub counts: Vec<Vec<u64>>,
}

impl TransitionMatrix {
    fn from_counts(k: usize, counts: Vec<Vec<u64>>) -> Self {
        let probs = counts
            .iter()
            .map(|row| {
                let total: u64 = row.iter().sum();
                if total == 0 {
                    vec![1.0 / k as f64; k]
                } else {
                    row.iter().map(|&c| c as f64 / total as f64).collect()
                }
            })
            .collect();
        Self { k, probs, counts }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.k).map(|i| self.probs[i][i]).collect()
    }

    /// Same chain with states renamed: new label `perm[old - 1]`.
    pub fn relabeled(&self, perm: &[usize]) -> Self {
        let mut counts = vec![vec![0; self.k]; self.k];
        for a in 0..self.k {
            for b in 0..self.k {
                counts[perm[a] - 1][perm[b] - 1] = self.counts[a][b];
            }
        }
        Self::from_counts(self.k, counts)
    }
}

fn check_labels(seq: &[usize], k: usize) -> Result<()> {
    match seq.iter().find(|&&l| l == 0 || l > k) {
        Some(&label) => Err(Error::LabelOutOfRange { label, k }),
        None => Ok(()),
    }
}

pub fn transition_matrix(seq: &[usize], k: usize) -> Result<TransitionMatrix> {
    transition_matrix_pooled(std::slice::from_ref(&seq.to_vec()), k)
}

/// Transition probabilities from step counts pooled over several sequences.
/// Rows of states that were never departed are uniform.
pub fn transition_matrix_pooled(seqs: &[Vec<usize>], k: usize) -> Result<TransitionMatrix> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    let mut counts = vec![vec![0u64; k]; k];
    for seq in seqs {
        if seq.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "state sequence needs at least 2 entries, got {}",
                seq.len()
            )));
        }
        check_labels(seq, k)?;
        for w in seq.windows(2) {
            counts[w[0] - 1][w[1] - 1] += 1;
        }
    }
    Ok(TransitionMatrix::from_counts(k, counts))
}

/// Fraction of all (subject, time) points spent in each state.
pub fn occupancy(assignments: &[Vec<usize>], k: usize) -> Result<Vec<f64>> {
    let mut counts = vec![0u64; k];
    let mut total = 0u64;
    for seq in assignments {
        check_labels(seq, k)?;
        for &l in seq {
            counts[l - 1] += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::EmptyInput);
    }
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}

pub fn state_switches(seq: &[usize]) -> usize {
    seq.windows(2).filter(|w| w[0] != w[1]).count()
}

/// Per state: the sample standard deviation of each edge over all
/// (subject, time) points in that state, averaged over edges.
pub fn within_state_dispersion(
    series: &[DynCorrSeries],
    assignments: &[Vec<usize>],
    k: usize,
) -> Result<Vec<f64>> {
    if series.len() != assignments.len() {
        return Err(Error::InvalidInput(format!(
            "{} series but {} assignment sequences",
            series.len(),
            assignments.len()
        )));
    }
    let edges = series.first().map_or(0, DynCorrSeries::edge_count);
    if edges == 0 {
        return Err(Error::EmptyInput);
    }
    let mut counts = vec![0usize; k];
    let mut sums = vec![vec![0.0; edges]; k];
    for (s, seq) in series.iter().zip(assignments) {
        if seq.len() != s.time_points || s.edge_count() != edges {
            return Err(Error::InvalidInput(format!(
                "subject {} does not align with its assignment sequence",
                s.subject_id
            )));
        }
        check_labels(seq, k)?;
        for (t, &l) in seq.iter().enumerate() {
            counts[l - 1] += 1;
            for (acc, v) in sums[l - 1].iter_mut().zip(s.row(t)) {
                *acc += v;
            }
        }
    }
    if let Some(state) = counts.iter().position(|&c| c < 2) {
        return Err(Error::EmptyState { state: state + 1 });
    }
    let means: Vec<Vec<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(row, &c)| row.iter().map(|v| v / c as f64).collect())
        .collect();
    let mut squares = vec![vec![0.0; edges]; k];
    for (s, seq) in series.iter().zip(assignments) {
        for (t, &l) in seq.iter().enumerate() {
            for ((acc, v), m) in squares[l - 1].iter_mut().zip(s.row(t)).zip(&means[l - 1]) {
                *acc += (v - m) * (v - m);
            }
        }
    }
    Ok(squares
        .iter()
        .zip(&counts)
        .map(|(row, &c)| {
            row.iter().map(|ss| (ss / (c - 1) as f64).sqrt()).sum::<f64>() / edges as f64
        })
        .collect())
}

/// Greedy centroid matching: repeatedly pairs the closest unmatched
/// (reference, candidate) centroids. Returns `perm` with `perm[c - 1]` the
/// reference label assigned to candidate label `c`.
pub fn align_labels(reference: &KMeansFit, candidate: &KMeansFit) -> Result<Vec<usize>> {
    if reference.k != candidate.k || reference.dim != candidate.dim {
        return Err(Error::InvalidInput(
            "cannot align clusterings with different k or dimension".into(),
        ));
    }
    let k = reference.k;
    let mut pairs: Vec<(f64, usize, usize)> = (1..=k)
        .flat_map(|r| (1..=k).map(move |c| (r, c)))
        .map(|(r, c)| (sq_dist(reference.centroid(r), candidate.centroid(c)), r, c))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut perm = vec![0usize; k];
    let mut used = vec![false; k];
    for (_, r, c) in pairs {
        if perm[c - 1] == 0 && !used[r - 1] {
            perm[c - 1] = r;
            used[r - 1] = true;
        }
    }
    Ok(perm)
}

/// Applies a label permutation (`perm[old - 1]` = new label) to a fit.
pub fn relabel_fit(fit: &KMeansFit, perm: &[usize]) -> KMeansFit {
    let mut centroids = vec![0.0; fit.centroids.len()];
    for old in 1..=fit.k {
        let new = perm[old - 1];
        centroids[(new - 1) * fit.dim..new * fit.dim].copy_from_slice(fit.centroid(old));
    }
    KMeansFit {
        centroids,
        labels: fit.labels.iter().map(|&l| perm[l - 1]).collect(),
        ..fit.clone()
    }
}

/// Relabeling of `predicted` that agrees with `truth` most often, as
/// `perm[c - 1]` = truth label for predicted label `c`, with the fraction of
/// agreeing points. Ties keep the first permutation found.
pub fn best_permutation(truth: &[usize], predicted: &[usize], k: usize) -> Result<(Vec<usize>, f64)> {
    if truth.len() != predicted.len() || truth.is_empty() {
        return Err(Error::InvalidInput("label sequences must be nonempty and aligned".into()));
    }
    check_labels(truth, k)?;
    check_labels(predicted, k)?;
    let mut confusion = vec![vec![0u64; k]; k];
    for (&t, &p) in truth.iter().zip(predicted) {
        confusion[p - 1][t - 1] += 1;
    }
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = (0u64, perm.clone());
    permute(&mut perm, 0, &mut |p| {
        let hits = (0..k).map(|i| confusion[i][p[i]]).sum::<u64>();
        if hits > best.0 || best.0 == 0 {
            best = (hits, p.to_vec());
        }
    });
    let mapping = best.1.iter().map(|t| t + 1).collect();
    Ok((mapping, best.0 as f64 / truth.len() as f64))
}

/// Fraction of points whose predicted label matches the truth, maximised
/// over all relabelings of the prediction.
pub fn best_permutation_accuracy(truth: &[usize], predicted: &[usize], k: usize) -> Result<f64> {
    best_permutation(truth, predicted, k).map(|(_, acc)| acc)
}

fn permute(items: &mut [usize], start: usize, visit: &mut dyn FnMut(&[usize])) {
    if start == items.len() {
        visit(items);
        return;
    }
    for i in start..items.len() {
        items.swap(start, i);
        permute(items, start + 1, visit);
        items.swap(start, i);
    }
}

/// Group-level state model split back into per-subject sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateModel {
    pub k: usize,
    pub subject_ids: Vec<String>,
    pub fit: KMeansFit,
    pub assignments: Vec<Vec<usize>>,
}

impl StateModel {
    pub fn from_fit(fit: KMeansFit, series: &[DynCorrSeries]) -> Result<Self> {
        let total: usize = series.iter().map(|s| s.time_points).sum();
        if total != fit.labels.len() {
            return Err(Error::InvalidInput(format!(
                "{} labels for {total} time points",
                fit.labels.len()
            )));
        }
        let mut assignments = Vec::with_capacity(series.len());
        let mut offset = 0;
        for s in series {
            assignments.push(fit.labels[offset..offset + s.time_points].to_vec());
            offset += s.time_points;
        }
        Ok(Self {
            k: fit.k,
            subject_ids: series.iter().map(|s| s.subject_id.clone()).collect(),
            fit,
            assignments,
        })
    }
}

/// Stacks every subject's upper-triangle rows into one `N x E` matrix.
pub fn stack_series(series: &[DynCorrSeries]) -> Result<(Vec<f64>, usize)> {
    let dim = series.first().ok_or(Error::EmptyInput)?.edge_count();
    let mut data = Vec::with_capacity(series.iter().map(|s| s.values.len()).sum());
    for s in series {
        if s.edge_count() != dim {
            return Err(Error::InvalidInput(format!(
                "subject {} has {} edges, expected {dim}",
                s.subject_id,
                s.edge_count()
            )));
        }
        data.extend_from_slice(&s.values);
    }
    Ok((data, dim))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyncorr::{EstimatorParams, WindowSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn blobs(centers: &[[f64; 2]], per: usize, spread: f64, seed: u64) -> (Vec<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..per {
                for d in center {
                    let z: f64 = rng.sample(StandardNormal);
                    pts.push(d + spread * z);
                }
                truth.push(c + 1);
            }
        }
        (pts, truth)
    }

    #[test]
    fn vectorize_examples() {
        let c = vec![vec![1.0, 0.7], vec![0.7, 1.0]];
        assert_eq!(vectorize_upper(&c).unwrap(), vec![0.7]);
        let id = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        assert_eq!(vectorize_upper(&id).unwrap(), vec![0.0; 3]);
        let bad = vec![vec![1.0, 0.5], vec![0.4, 1.0]];
        assert!(matches!(vectorize_upper(&bad), Err(Error::AsymmetricInput { .. })));
    }

    #[test]
    fn vectorize_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c = unvectorize_upper(&v, 1.0).unwrap();
        assert_eq!(c.len(), 5);
        let back = vectorize_upper(&c).unwrap();
        for (a, b) in v.iter().zip(&back) {
            assert!((a - b).abs() <= 1e-15);
        }
        assert!(unvectorize_upper(&[0.0; 4], 1.0).is_err());
    }

    #[test]
    fn kmeans_single_cluster_is_grand_mean() {
        let (pts, _) = blobs(&[[1.0, -2.0]], 50, 0.7, 1);
        let fit = kmeans(&pts, 2, &KMeansConfig::new(1, 3, 9)).unwrap();
        let mean_x = pts.iter().step_by(2).sum::<f64>() / 50.0;
        let mean_y = pts.iter().skip(1).step_by(2).sum::<f64>() / 50.0;
        assert!((fit.centroid(1)[0] - mean_x).abs() < 1e-12);
        assert!((fit.centroid(1)[1] - mean_y).abs() < 1e-12);
        assert!((fit.sse_within - fit.sse_total).abs() < 1e-9);
        assert!(fit.sse_between.abs() < 1e-9);
    }

    #[test]
    fn kmeans_recovers_planted_partition_every_restart() {
        let (pts, truth) = blobs(&[[0.0, 0.0], [100.0, 100.0]], 40, 1.0, 2);
        for r in 0..20 {
            let config = KMeansConfig::new(2, 1, 100 + r);
            let fit = kmeans(&pts, 2, &config).unwrap();
            assert_eq!(best_permutation_accuracy(&truth, &fit.labels, 2).unwrap(), 1.0);
        }
    }

    #[test]
    fn kmeans_identical_points() {
        let pts = vec![0.5; 2 * 10];
        let fit = kmeans(&pts, 2, &KMeansConfig::new(3, 4, 1)).unwrap();
        assert_eq!(fit.sse_within, 0.0);
    }

    #[test]
    fn kmeans_errors() {
        assert!(matches!(kmeans(&[], 2, &KMeansConfig::new(1, 1, 0)), Err(Error::EmptyInput)));
        assert!(matches!(
            kmeans(&[0.0; 4], 2, &KMeansConfig::new(3, 1, 0)),
            Err(Error::TooManyClusters { k: 3, n: 2 })
        ));
    }

    #[test]
    fn kmeans_invariants_and_determinism() {
        let (pts, _) = blobs(&[[0.0, 0.0], [3.0, 1.0], [1.0, 4.0]], 60, 1.0, 4);
        let config = KMeansConfig::new(3, 8, 5);
        let fit = kmeans(&pts, 2, &config).unwrap();
        let again = kmeans(&pts, 2, &config).unwrap();
        assert_eq!(fit, again);
        let rel = (fit.sse_within + fit.sse_between - fit.sse_total).abs() / fit.sse_total;
        assert!(rel < 1e-6);
        // each centroid is the mean of its points
        for c in 1..=3 {
            let members: Vec<&[f64]> = pts
                .chunks_exact(2)
                .zip(&fit.labels)
                .filter(|(_, &l)| l == c)
                .map(|(p, _)| p)
                .collect();
            for d in 0..2 {
                let m = members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64;
                assert!((m - fit.centroid(c)[d]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn elbow_picks_planted_three() {
        let (pts, _) = blobs(&[[0.0, 0.0], [20.0, 0.0], [10.0, 18.0]], 60, 1.0, 6);
        let elbow = elbow_select(&pts, 2, 2..=8, 10, 7).unwrap();
        assert_eq!(elbow.chosen_k, 3);
        assert!(!elbow.weak_elbow);
        assert!(!elbow.non_monotone, "{:?}", elbow.ratios);
        assert_eq!(elbow.chosen_fit().k, 3);
    }

    #[test]
    fn elbow_on_single_blob_is_flagged() {
        let (pts, _) = blobs(&[[0.0, 0.0]], 300, 1.0, 8);
        let elbow = elbow_select(&pts, 2, 2..=8, 5, 7).unwrap();
        assert!((3..=7).contains(&elbow.chosen_k));
        assert!(elbow.weak_elbow, "{:?}", elbow.ratios);
    }

    #[test]
    fn transition_examples() {
        let t = transition_matrix(&[1, 1, 1, 1], 3).unwrap();
        assert_eq!(t.probs[0], vec![1.0, 0.0, 0.0]);
        assert_eq!(t.probs[1], vec![1.0 / 3.0; 3]);
        assert_eq!(t.probs[2], vec![1.0 / 3.0; 3]);
        let alt = transition_matrix(&[1, 2, 1, 2, 1], 2).unwrap();
        assert_eq!(alt.probs, vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert!(matches!(
            transition_matrix(&[1, 4], 3),
            Err(Error::LabelOutOfRange { label: 4, k: 3 })
        ));
        assert!(transition_matrix(&[1, 0], 3).is_err());
        assert!(transition_matrix(&[1], 3).is_err());
    }

    #[test]
    fn transition_matches_counting_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let seq: Vec<usize> = (0..10_000).map(|_| rng.gen_range(1..=4)).collect();
        let t = transition_matrix(&seq, 4).unwrap();
        for a in 1..=4 {
            let departures = (0..seq.len() - 1).filter(|&i| seq[i] == a).count();
            for b in 1..=4 {
                let steps = (0..seq.len() - 1).filter(|&i| seq[i] == a && seq[i + 1] == b).count();
                assert_eq!(t.probs[a - 1][b - 1], steps as f64 / departures as f64);
            }
            assert!((t.probs[a - 1].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn relabeled_transition_is_conjugate() {
        let t = transition_matrix(&[1, 1, 2, 3, 3, 3, 1, 2], 3).unwrap();
        let perm = [3, 1, 2];
        let r = t.relabeled(&perm);
        for a in 0..3 {
            for b in 0..3 {
                assert_eq!(r.probs[perm[a] - 1][perm[b] - 1], t.probs[a][b]);
            }
        }
    }

    #[test]
    fn occupancy_examples() {
        assert_eq!(occupancy(&[vec![1; 5], vec![1; 5]], 3).unwrap(), vec![1.0, 0.0, 0.0]);
        assert_eq!(occupancy(&[vec![1, 1, 2, 3]], 3).unwrap(), vec![0.5, 0.25, 0.25]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let seqs: Vec<Vec<usize>> = (0..100)
            .map(|_| (0..1000).map(|_| rng.gen_range(1..=3)).collect())
            .collect();
        let occ = occupancy(&seqs, 3).unwrap();
        assert!((occ.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(occ.iter().all(|r| (r - 1.0 / 3.0).abs() < 0.01));
    }

    fn series_from(values: Vec<Vec<f64>>) -> DynCorrSeries {
        let t = values.len();
        let e = values[0].len();
        DynCorrSeries {
            subject_id: "s".into(),
            params: EstimatorParams::Sw { window: WindowSpec::square(4).unwrap() },
            time_points: t,
            regions: 0,
            edges: (0..e).map(|i| (i, i + 1)).collect(),
            values: values.into_iter().flatten().collect(),
            clamped: 0,
        }
    }

    #[test]
    fn dispersion_hand_computed() {
        // 10 time points, 2 edges; state 1 on the first 6, state 2 on the last 4
        let e0 = [0.1, 0.3, 0.2, 0.4, 0.5, 0.3, 0.9, 0.7, 0.8, 0.6];
        let e1 = [0.0, 0.0, 0.2, 0.2, 0.1, 0.1, -0.5, -0.5, -0.5, -0.5];
        let rows: Vec<Vec<f64>> = (0..10).map(|t| vec![e0[t], e1[t]]).collect();
        let seq = vec![1, 1, 1, 1, 1, 1, 2, 2, 2, 2];
        let d = within_state_dispersion(&[series_from(rows)], &[seq], 2).unwrap();
        let sd = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
        };
        let s1 = (sd(&e0[..6]) + sd(&e1[..6])) / 2.0;
        let s2 = (sd(&e0[6..]) + sd(&e1[6..])) / 2.0;
        // hand values: sd(e0[..6]) = 0.14142, sd(e1[..6]) = 0.08944, sd(e0[6..]) = 0.12910, sd(e1[6..]) = 0
        assert!((s1 - (0.141_421_356_2 + 0.089_442_719_1) / 2.0).abs() < 1e-9);
        assert!((s2 - 0.129_099_444_9 / 2.0).abs() < 1e-9);
        assert!((d[0] - s1).abs() < 1e-15 && (d[1] - s2).abs() < 1e-15);
    }

    #[test]
    fn dispersion_constant_and_empty_state() {
        let rows = vec![vec![0.4, 0.2]; 6];
        let d = within_state_dispersion(&[series_from(rows.clone())], &[vec![1, 1, 1, 2, 2, 2]], 2).unwrap();
        assert!(d.iter().all(|v| v.abs() < 1e-15));
        assert!(matches!(
            within_state_dispersion(&[series_from(rows)], &[vec![1, 1, 1, 1, 1, 2]], 2),
            Err(Error::EmptyState { state: 2 })
        ));
    }

    #[test]
    fn alignment_recovers_permutation() {
        let (pts, _) = blobs(&[[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]], 30, 0.5, 12);
        let fit = kmeans(&pts, 2, &KMeansConfig::new(3, 5, 1)).unwrap();
        let perm = [2, 3, 1];
        let shuffled = relabel_fit(&fit, &perm);
        let back = align_labels(&fit, &shuffled).unwrap();
        let restored = relabel_fit(&shuffled, &back);
        assert_eq!(restored.labels, fit.labels);
        assert_eq!(restored.centroids, fit.centroids);
    }

    #[test]
    fn accuracy_over_permutations() {
        assert_eq!(best_permutation_accuracy(&[1, 1, 2, 2, 3], &[2, 2, 3, 3, 1], 3).unwrap(), 1.0);
        assert_eq!(best_permutation_accuracy(&[1, 1, 2, 2], &[1, 2, 2, 2], 2).unwrap(), 0.75);
        assert_eq!(state_switches(&[1, 1, 2, 2, 1]), 2);
    }
}
