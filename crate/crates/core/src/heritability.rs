//! Twin heritability of state-averaged connectivity.
//!
//! Twin correlations depend on the arbitrary order of twins within each
//! pair. They are averaged over the group of within-pair transpositions by a
//! random walk whose every step is an O(1) update of running sums. HI follows
//! Falconer's formula `h = 2 (gamma_mz - gamma_dz)`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dyncorr::DynCorrSeries;
use crate::error::{Error, Result};
use crate::rng;

/// Second-moment floor below which a twin correlation is undefined.
pub const OMEGA_FLOOR: f64 = 1e-12;
pub const DEFAULT_STEPS: usize = 50_000;
pub const DEFAULT_REPEATS: usize = 100;
pub const MIN_PAIRS: usize = 3;

/// Per-edge mean of the correlations at the time points assigned to `state`;
/// `None` when the subject never visits it.
pub fn state_average_map(
    series: &DynCorrSeries,
    assignment: &[usize],
    state: usize,
) -> Result<Option<Vec<f64>>> {
    if assignment.len() != series.time_points {
        return Err(Error::InvalidInput(format!(
            "subject {}: {} labels for {} time points",
            series.subject_id,
            assignment.len(),
            series.time_points
        )));
    }
    let mut sum = vec![0.0; series.edge_count()];
    let mut visits = 0usize;
    for (t, &l) in assignment.iter().enumerate() {
        if l == state {
            visits += 1;
            for (s, v) in sum.iter_mut().zip(series.row(t)) {
                *s += v;
            }
        }
    }
    if visits == 0 {
        return Ok(None);
    }
    Ok(Some(sum.into_iter().map(|s| s / visits as f64).collect()))
}

/// Sample Pearson correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let state = RunningCorrState::new(a, b)?;
    state
        .correlation()
        .ok_or(Error::ZeroVariance { index: 0, edge: None })
}

/// Running sums `nu_k = sum_r x_rk` and centred cross-moments
/// `omega_kl = sum_r (x_rk - nu_k/m)(x_rl - nu_l/m)` of the two twin rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunningCorrState {
    pub m: usize,
    pub nu_1: f64,
    pub nu_2: f64,
    pub omega_11: f64,
    pub omega_22: f64,
    pub omega_12: f64,
}

impl RunningCorrState {
    pub fn new(first: &[f64], second: &[f64]) -> Result<Self> {
        if first.len() != second.len() {
            return Err(Error::InvalidInput(format!(
                "twin rows differ in length: {} vs {}",
                first.len(),
                second.len()
            )));
        }
        let m = first.len();
        if m < MIN_PAIRS {
            return Err(Error::InvalidInput(format!(
                "need at least {MIN_PAIRS} pairs, got {m}"
            )));
        }
        if first.iter().chain(second).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite twin value".into()));
        }
        let nu_1: f64 = first.iter().sum();
        let nu_2: f64 = second.iter().sum();
        let (c1, c2) = (nu_1 / m as f64, nu_2 / m as f64);
        let (mut o11, mut o22, mut o12) = (0.0, 0.0, 0.0);
        for (a, b) in first.iter().zip(second) {
            o11 += (a - c1) * (a - c1);
            o22 += (b - c2) * (b - c2);
            o12 += (a - c1) * (b - c2);
        }
        Ok(Self {
            m,
            nu_1,
            nu_2,
            omega_11: o11,
            omega_22: o22,
            omega_12: o12,
        })
    }

    /// Swaps one pair whose current values are `first` (row 1) and `second` (row 2).
    ///
    /// With `d = first - second` the cross term changes by
    /// `d^2/m - d (nu_1 - nu_2)/m`, and each variance term `omega_kk` by
    /// `(x_il^2 - x_ik^2) + (2 nu_k d_k - d_k^2)/m` where `d_k = x_ik - x_il`.
    #[inline]
    pub fn transpose(&mut self, first: f64, second: f64) {
        let m = self.m as f64;
        let d = first - second;
        let d2 = d * d;
        self.omega_12 += (d2 - d * (self.nu_1 - self.nu_2)) / m;
        self.omega_11 += (second * second - first * first) + (2.0 * self.nu_1 * d - d2) / m;
        self.omega_22 += (first * first - second * second) - (2.0 * self.nu_2 * d + d2) / m;
        self.nu_1 -= d;
        self.nu_2 += d;
    }

    #[inline]
    pub fn correlation(&self) -> Option<f64> {
        if self.omega_11 > OMEGA_FLOOR && self.omega_22 > OMEGA_FLOOR {
            Some(self.omega_12 / (self.omega_11 * self.omega_22).sqrt())
        } else {
            None
        }
    }
}

/// Twin values for one feature: column i is pair i, rows are twin order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwinPairs {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

impl TwinPairs {
    pub fn new(first: Vec<f64>, second: Vec<f64>) -> Result<Self> {
        if first.len() != second.len() {
            return Err(Error::InvalidInput("twin rows differ in length".into()));
        }
        Ok(Self { first, second })
    }

    pub fn len(&self) -> usize {
        self.first.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_empty()
    }

    pub fn swap(&mut self, i: usize) {
        std::mem::swap(&mut self.first[i], &mut self.second[i]);
    }

    pub fn correlation(&self) -> Result<f64> {
        pearson(&self.first, &self.second)
    }

    /// Copy shifted by the pooled mean; correlations are unchanged and the
    /// running sums stay small.
    fn centred(&self) -> Self {
        let n = 2 * self.len();
        let mean = self.first.iter().chain(&self.second).sum::<f64>() / n as f64;
        Self {
            first: self.first.iter().map(|v| v - mean).collect(),
            second: self.second.iter().map(|v| v - mean).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WalkConfig {
    pub steps: usize,
    pub repeats: usize,
    pub seed: u64,
    /// Recompute from scratch after every step and check the running state.
    #[serde(default)]
    pub verify: bool,
}

impl WalkConfig {
    pub fn new(steps: usize, repeats: usize, seed: u64) -> Self {
        Self {
            steps,
            repeats,
            seed,
            verify: false,
        }
    }
}

impl Default for WalkConfig {
    fn default() -> Self {
        Self::new(DEFAULT_STEPS, DEFAULT_REPEATS, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkSummary {
    /// Mean over repeats of each repeat's running-average correlation.
    pub mean: f64,
    /// Sample standard deviation across repeats (0 for a single repeat).
    pub sd: f64,
    pub repeat_means: Vec<f64>,
    /// Steps whose correlation was undefined and left out of the average.
    pub skipped: usize,
}

/// Averages the twin correlation along `repeats` independent random walks of
/// `steps` uniformly chosen transpositions. `stream` keys the random
/// substream so that different features draw independent walks.
pub fn transposition_walk(
    pairs: &TwinPairs,
    config: &WalkConfig,
    stream: &[u64],
) -> Result<WalkSummary> {
    if config.steps == 0 || config.repeats == 0 {
        return Err(Error::InvalidInput("steps and repeats must be at least 1".into()));
    }
    let base = pairs.centred();
    let m = base.len();
    let start = RunningCorrState::new(&base.first, &base.second)?;
    let mut repeat_means = Vec::with_capacity(config.repeats);
    let mut skipped = 0usize;
    let mut path = stream.to_vec();
    path.push(0);
    for r in 0..config.repeats {
        *path.last_mut().expect("path has repeat slot") = r as u64;
        let mut rng = rng::stream(config.seed, "walk", &path);
        let mut data = base.clone();
        let mut state = start;
        let mut average = 0.0;
        let mut used = 0usize;
        for _ in 0..config.steps {
            let i = rng.gen_range(0..m);
            state.transpose(data.first[i], data.second[i]);
            data.swap(i);
            if config.verify {
                verify_state(&state, &data)?;
            }
            match state.correlation() {
                Some(gamma) => {
                    used += 1;
                    let j = used as f64;
                    average = (j - 1.0) / j * average + gamma / j;
                }
                None => skipped += 1,
            }
        }
        if used == 0 {
            return Err(Error::ZeroVariance { index: 0, edge: None });
        }
        repeat_means.push(average);
    }
    let n = repeat_means.len() as f64;
    let mean = repeat_means.iter().sum::<f64>() / n;
    let sd = if repeat_means.len() > 1 {
        (repeat_means.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(WalkSummary {
        mean,
        sd,
        repeat_means,
        skipped,
    })
}

fn verify_state(state: &RunningCorrState, data: &TwinPairs) -> Result<()> {
    let fresh = RunningCorrState::new(&data.first, &data.second)?;
    let scale = 1.0 + fresh.omega_11.abs() + fresh.omega_22.abs();
    let close = |a: f64, b: f64, s: f64| (a - b).abs() <= 1e-9 * s;
    let nu_scale = 1.0 + fresh.nu_1.abs() + fresh.nu_2.abs();
    if close(state.nu_1, fresh.nu_1, nu_scale)
        && close(state.nu_2, fresh.nu_2, nu_scale)
        && close(state.omega_11, fresh.omega_11, scale)
        && close(state.omega_22, fresh.omega_22, scale)
        && close(state.omega_12, fresh.omega_12, scale)
    {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "running twin state drifted: {state:?} vs {fresh:?}"
        )))
    }
}

pub fn falconer_hi(gamma_mz: f64, gamma_dz: f64) -> f64 {
    2.0 * (gamma_mz - gamma_dz)
}

/// Display clamp of an HI value onto [0, 1].
pub fn clamp_hi(h: f64) -> f64 {
    h.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Zygosity {
    #[serde(rename = "MZ")]
    Mz,
    #[serde(rename = "DZ")]
    Dz,
}

/// MZ and DZ twin pairs of one feature (edge).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwinFeature {
    pub mz: TwinPairs,
    pub dz: TwinPairs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwinCohort {
    pub mz_pair_ids: Vec<String>,
    pub dz_pair_ids: Vec<String>,
    pub features: Vec<TwinFeature>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeritabilityEstimate {
    pub gamma_mz: f64,
    pub gamma_dz: f64,
    pub sd_mz: f64,
    pub sd_dz: f64,
    pub hi: f64,
    /// `2 (sd_mz + sd_dz)`, a bound on the SD of `hi` across repeats.
    pub sd_bound: f64,
    pub mz_pairs: usize,
    pub dz_pairs: usize,
    pub skipped_steps: usize,
}

/// Transposition-averaged twin correlations and HI for one feature.
pub fn estimate_feature(
    feature: &TwinFeature,
    config: &WalkConfig,
    stream: &[u64],
) -> Result<HeritabilityEstimate> {
    let available = feature.mz.len().min(feature.dz.len());
    if available < MIN_PAIRS {
        return Err(Error::InsufficientPairs {
            i: 0,
            j: 0,
            available,
        });
    }
    let mut key = stream.to_vec();
    key.push(0);
    let mz = transposition_walk(&feature.mz, config, &key)?;
    *key.last_mut().expect("zygosity slot") = 1;
    let dz = transposition_walk(&feature.dz, config, &key)?;
    Ok(HeritabilityEstimate {
        gamma_mz: mz.mean,
        gamma_dz: dz.mean,
        sd_mz: mz.sd,
        sd_dz: dz.sd,
        hi: falconer_hi(mz.mean, dz.mean),
        sd_bound: 2.0 * (mz.sd + dz.sd),
        mz_pairs: feature.mz.len(),
        dz_pairs: feature.dz.len(),
        skipped_steps: mz.skipped + dz.skipped,
    })
}

/// A twin pair by subject index into the series list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TwinPairIndex {
    pub pair_id: String,
    pub zygosity: Zygosity,
    pub first: usize,
    pub second: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiEntry {
    pub state: usize,
    pub edge: (usize, usize),
    /// `None` when the edge had fewer than three usable pairs of either zygosity.
    pub estimate: Option<HeritabilityEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeritabilityMap {
    pub k: usize,
    pub entries: Vec<HiEntry>,
}

impl HeritabilityMap {
    /// Edges of `state` sorted by descending HI (ties by edge order).
    pub fn top(&self, state: usize, n: usize) -> Vec<&HiEntry> {
        let mut rows: Vec<&HiEntry> = self
            .entries
            .iter()
            .filter(|e| e.state == state && e.estimate.is_some())
            .collect();
        rows.sort_by(|a, b| {
            let (ha, hb) = (a.estimate.unwrap().hi, b.estimate.unwrap().hi);
            hb.total_cmp(&ha).then(a.edge.cmp(&b.edge))
        });
        rows.truncate(n);
        rows
    }
}

/// `edge, h ± sd_bound` row with two decimals.
pub fn format_top_row(entry: &HiEntry, region_names: Option<&[String]>, clamp: bool) -> String {
    let name = |r: usize| {
        region_names
            .and_then(|n| n.get(r).cloned())
            .unwrap_or_else(|| format!("roi_{}", r + 1))
    };
    let edge = format!("{}-{}", name(entry.edge.0), name(entry.edge.1));
    match entry.estimate {
        Some(e) => {
            let h = if clamp { clamp_hi(e.hi) } else { e.hi };
            format!("{edge}, {h:.2} ± {:.2}", e.sd_bound)
        }
        None => format!("{edge}, missing"),
    }
}

/// HI for every (state, edge) from per-subject state-average maps.
///
/// Pairs in which either twin never visits a state are dropped for that
/// state. Each (state, edge) walk draws from its own substream.
pub fn hi_map(
    series: &[DynCorrSeries],
    assignments: &[Vec<usize>],
    pairs: &[TwinPairIndex],
    k: usize,
    config: &WalkConfig,
) -> Result<HeritabilityMap> {
    if series.len() != assignments.len() {
        return Err(Error::InvalidInput("series and assignments differ in length".into()));
    }
    let edges = series.first().ok_or(Error::EmptyInput)?.edges.clone();
    for p in pairs {
        if p.first >= series.len() || p.second >= series.len() {
            return Err(Error::InvalidInput(format!(
                "pair {} references a missing subject",
                p.pair_id
            )));
        }
    }
    let mut entries = Vec::with_capacity(k * edges.len());
    for state in 1..=k {
        let maps = series
            .iter()
            .zip(assignments)
            .map(|(s, a)| state_average_map(s, a, state))
            .collect::<Result<Vec<_>>>()?;
        let collect = |zyg: Zygosity| -> Vec<(&[f64], &[f64])> {
            pairs
                .iter()
                .filter(|p| p.zygosity == zyg)
                .filter_map(|p| match (&maps[p.first], &maps[p.second]) {
                    (Some(a), Some(b)) => Some((a.as_slice(), b.as_slice())),
                    _ => None,
                })
                .collect()
        };
        let mz = collect(Zygosity::Mz);
        let dz = collect(Zygosity::Dz);
        let row = |twins: &[(&[f64], &[f64])], e: usize| TwinPairs {
            first: twins.iter().map(|t| t.0[e]).collect(),
            second: twins.iter().map(|t| t.1[e]).collect(),
        };
        let state_entries: Vec<HiEntry> = edges
            .par_iter()
            .enumerate()
            .map(|(e, &edge)| {
                let feature = TwinFeature {
                    mz: row(&mz, e),
                    dz: row(&dz, e),
                };
                let estimate = if feature.mz.len() < MIN_PAIRS || feature.dz.len() < MIN_PAIRS {
                    None
                } else {
                    // constant twin values on an edge make the correlation undefined
                    estimate_feature(&feature, config, &[state as u64, e as u64]).ok()
                };
                HiEntry {
                    state,
                    edge,
                    estimate,
                }
            })
            .collect();
        entries.extend(state_entries);
    }
    Ok(HeritabilityMap { k, entries })
}
