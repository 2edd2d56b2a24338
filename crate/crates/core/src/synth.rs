//! Synthetic data with planted ground truth: regime-switching correlated
//! time series and ACE-model twin cohorts.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heritability::{TwinCohort, TwinFeature, TwinPairs, Zygosity};
use crate::rng;
use crate::signal::RoiMatrix;

const PSD_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub target: Vec<Vec<f64>>,
}

/// Piecewise-constant correlation structure over `[0, T)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSchedule {
    pub segments: Vec<Segment>,
    /// Standard deviation of every generated sample.
    pub noise_sd: f64,
    pub seed: u64,
    /// Logistic ramp width (TRs) for blending neighbouring targets; hard switches when absent.
    #[serde(default)]
    pub ramp_tr: Option<f64>,
}

impl RegimeSchedule {
    pub fn time_points(&self) -> usize {
        self.segments.last().map_or(0, |s| s.end)
    }

    fn validate(&self) -> Result<usize> {
        let first = self.segments.first().ok_or(Error::EmptyInput)?;
        if first.start != 0 {
            return Err(Error::InvalidInput("first segment must start at 0".into()));
        }
        let p = first.target.len();
        for (i, seg) in self.segments.iter().enumerate() {
            if seg.end <= seg.start {
                return Err(Error::InvalidInput(format!("segment {i} is empty")));
            }
            if i > 0 && seg.start != self.segments[i - 1].end {
                return Err(Error::InvalidInput(format!(
                    "segment {i} does not start where segment {} ends",
                    i - 1
                )));
            }
            if seg.target.len() != p || seg.target.iter().any(|r| r.len() != p) {
                return Err(Error::InvalidInput(format!("segment {i} target is not {p} x {p}")));
            }
            for a in 0..p {
                if (seg.target[a][a] - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidInput(format!(
                        "segment {i} target has non-unit diagonal"
                    )));
                }
                for b in 0..a {
                    if (seg.target[a][b] - seg.target[b][a]).abs() > 1e-12 {
                        return Err(Error::AsymmetricInput {
                            i: b,
                            j: a,
                            gap: (seg.target[a][b] - seg.target[b][a]).abs(),
                        });
                    }
                }
            }
        }
        if !(self.noise_sd > 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::InvalidInput("noise_sd must be positive".into()));
        }
        Ok(p)
    }
}

/// Symmetric square root of a correlation matrix via its eigendecomposition.
pub fn symmetric_sqrt(target: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let p = target.len();
    let m = DMatrix::from_fn(p, p, |i, j| target[i][j]);
    let eig = SymmetricEigen::new(m);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -PSD_TOLERANCE {
        return Err(Error::NotPsd(min));
    }
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

fn blend(a: &[Vec<f64>], b: &[Vec<f64>], w: f64) -> Vec<Vec<f64>> {
    a.iter()
        .zip(b)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| (1.0 - w) * x + w * y).collect())
        .collect()
}

/// Draws one subject: within each segment, `noise_sd * sqrt(target) * z` with
/// independent standard normal `z` at every time point.
pub fn generate_subject(
    subject_id: &str,
    tr_seconds: f64,
    schedule: &RegimeSchedule,
) -> Result<RoiMatrix> {
    let p = schedule.validate()?;
    let t_total = schedule.time_points();
    let roots = schedule
        .segments
        .iter()
        .map(|s| symmetric_sqrt(&s.target))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = rng::stream(schedule.seed, "subject", &[]);
    let mut columns = vec![vec![0.0; t_total]; p];
    let mut z = vec![0.0; p];
    for (si, seg) in schedule.segments.iter().enumerate() {
        for t in seg.start..seg.end {
            for v in z.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let blended;
            let root = match ramp_neighbour(schedule, si, t) {
                Some((other, w)) => {
                    blended = symmetric_sqrt(&blend(
                        &seg.target,
                        &schedule.segments[other].target,
                        w,
                    ))?;
                    &blended
                }
                None => &roots[si],
            };
            for (r, col) in columns.iter_mut().enumerate() {
                let v: f64 = (0..p).map(|c| root[(r, c)] * z[c]).sum();
                col[t] = schedule.noise_sd * v;
            }
        }
    }
    RoiMatrix::from_columns(subject_id, tr_seconds, columns)
}

/// Neighbouring segment and its blend weight for `t` inside a ramp zone.
fn ramp_neighbour(schedule: &RegimeSchedule, si: usize, t: usize) -> Option<(usize, f64)> {
    let width = schedule.ramp_tr.filter(|w| *w > 0.0)?;
    let seg = &schedule.segments[si];
    let logistic = |x: f64| 1.0 / (1.0 + (-x).exp());
    let tc = t as f64 + 0.5;
    let reach = 3.0 * width;
    if si + 1 < schedule.segments.len() && (seg.end as f64 - tc) < reach {
        let w = logistic((tc - seg.end as f64) / width);
        return Some((si + 1, w));
    }
    if si > 0 && (tc - seg.start as f64) < reach {
        let w = logistic((seg.start as f64 - tc) / width);
        return Some((si - 1, w));
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AceComponents {
    pub a: f64,
    pub c: f64,
}

impl AceComponents {
    fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.a)
            && (0.0..=1.0).contains(&self.c)
            && self.a + self.c <= 1.0 + 1e-12;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "ACE components need A, C in [0, 1] with A + C <= 1, got A={} C={}",
                self.a, self.c
            )))
        }
    }

    pub fn gamma_mz(&self) -> f64 {
        self.a + self.c
    }

    pub fn gamma_dz(&self) -> f64 {
        self.a / 2.0 + self.c
    }

    /// One twin pair's values from the given independent standard normals.
    ///
    /// Genetic factors are shared fully by MZ twins and through
    /// `(g_shared + g_private) / sqrt 2` by DZ twins.
    fn pair<R: Rng>(&self, zygosity: Zygosity, rng: &mut R) -> (f64, f64) {
        let mut n = || -> f64 { rng.sample(StandardNormal) };
        let (g1, g2) = match zygosity {
            Zygosity::Mz => {
                let g = n();
                (g, g)
            }
            Zygosity::Dz => {
                let shared = n();
                let h = std::f64::consts::FRAC_1_SQRT_2;
                ((shared + n()) * h, (shared + n()) * h)
            }
        };
        let c = n();
        let e = (1.0 - self.a - self.c).max(0.0).sqrt();
        let (sa, sc) = (self.a.sqrt(), self.c.sqrt());
        (sa * g1 + sc * c + e * n(), sa * g2 + sc * c + e * n())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AceSpec {
    /// One entry per feature.
    pub components: Vec<AceComponents>,
    pub mz_pairs: usize,
    pub dz_pairs: usize,
    pub seed: u64,
}

pub fn generate_twin_cohort(spec: &AceSpec) -> Result<TwinCohort> {
    if spec.components.is_empty() {
        return Err(Error::EmptyInput);
    }
    for c in &spec.components {
        c.validate()?;
    }
    let draw = |f: usize, comp: &AceComponents, zyg: Zygosity, count: usize| {
        let mut rng = rng::stream(spec.seed, "ace", &[f as u64, zyg as u64]);
        let (first, second) = (0..count).map(|_| comp.pair(zyg, &mut rng)).unzip();
        TwinPairs { first, second }
    };
    let features = spec
        .components
        .iter()
        .enumerate()
        .map(|(f, comp)| TwinFeature {
            mz: draw(f, comp, Zygosity::Mz, spec.mz_pairs),
            dz: draw(f, comp, Zygosity::Dz, spec.dz_pairs),
        })
        .collect();
    Ok(TwinCohort {
        mz_pair_ids: (0..spec.mz_pairs).map(|i| format!("mz{:04}", i + 1)).collect(),
        dz_pair_ids: (0..spec.dz_pairs).map(|i| format!("dz{:04}", i + 1)).collect(),
        features,
    })
}

/// Region membership of the two blocks that define each state's pattern.
///
/// State r rotates the half-split of regions by `r * ceil(p / states)`.
pub fn block_membership(regions: usize, states: usize) -> Vec<Vec<bool>> {
    let shift = regions.div_ceil(states.max(1));
    (0..states)
        .map(|r| {
            (0..regions)
                .map(|j| (j + r * shift) % regions < regions / 2)
                .collect()
        })
        .collect()
}

/// Correlation `strength` between regions in the same block, 0 across blocks.
pub fn block_target(membership: &[bool], strength: f64) -> Vec<Vec<f64>> {
    let p = membership.len();
    (0..p)
        .map(|i| {
            (0..p)
                .map(|j| {
                    if i == j {
                        1.0
                    } else if membership[i] == membership[j] {
                        strength
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

/// Settings for a whole synthetic cohort of twins and singletons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortSpec {
    pub regions: usize,
    pub time_points: usize,
    pub tr_seconds: f64,
    pub states: usize,
    /// Mean within-block correlation of a state's pattern.
    pub strength: f64,
    /// Between-subject SD of the within-block correlation.
    pub strength_sd: f64,
    pub dwell_min: usize,
    pub dwell_max: usize,
    pub ramp_tr: Option<f64>,
    pub noise_sd: f64,
    pub mz_pairs: usize,
    pub dz_pairs: usize,
    pub singletons: usize,
    /// Twin resemblance of the per-subject strengths.
    pub ace: AceComponents,
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            regions: 10,
            time_points: 300,
            tr_seconds: 2.0,
            states: 3,
            strength: 0.7,
            strength_sd: 0.08,
            dwell_min: 40,
            dwell_max: 100,
            ramp_tr: None,
            noise_sd: 1.0,
            mz_pairs: 0,
            dz_pairs: 0,
            singletons: 40,
            ace: AceComponents { a: 0.6, c: 0.2 },
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedSubject {
    pub matrix: RoiMatrix,
    pub zygosity: Option<Zygosity>,
    pub pair_id: Option<String>,
    /// Planted 1-based state label per time point.
    pub labels: Vec<usize>,
    /// Planted within-block correlation per state.
    pub strengths: Vec<f64>,
}

/// Random state sequence with dwell times in `[dwell_min, dwell_max]`; a
/// trailing segment shorter than `dwell_min` is merged into its predecessor.
pub fn planted_sequence<R: Rng>(spec: &CohortSpec, rng: &mut R) -> Vec<(usize, usize, usize)> {
    let mut segments: Vec<(usize, usize, usize)> = Vec::new();
    let mut t = 0;
    let mut state = rng.gen_range(1..=spec.states);
    while t < spec.time_points {
        let dwell = rng.gen_range(spec.dwell_min..=spec.dwell_max);
        let end = (t + dwell).min(spec.time_points);
        if end - t < spec.dwell_min && !segments.is_empty() {
            segments.last_mut().expect("nonempty").1 = end;
            break;
        }
        segments.push((t, end, state));
        t = end;
        if spec.states > 1 {
            let others: Vec<usize> = (1..=spec.states).filter(|&s| s != state).collect();
            state = *others.choose(rng).expect("other state");
        }
    }
    segments
}

pub fn simulate_cohort(spec: &CohortSpec) -> Result<Vec<SimulatedSubject>> {
    if spec.regions < 2 || spec.states < 1 || spec.time_points < RoiMatrix::MIN_TIME_POINTS {
        return Err(Error::InvalidInput("cohort needs >= 2 regions, >= 1 state, >= 4 time points".into()));
    }
    if spec.dwell_min == 0 || spec.dwell_max < spec.dwell_min {
        return Err(Error::InvalidInput("dwell range must satisfy 1 <= min <= max".into()));
    }
    spec.ace.validate()?;
    let membership = block_membership(spec.regions, spec.states);
    let mut subjects = Vec::new();
    let mut strength_rng = rng::stream(spec.seed, "strength", &[]);
    // per state, the within-block strength of each twin (second unused for singletons)
    let mut strengths_for = |zyg: Option<Zygosity>| -> (Vec<f64>, Vec<f64>) {
        let f = |z: f64| (spec.strength + spec.strength_sd * z).clamp(0.05, 0.95);
        (0..spec.states)
            .map(|_| {
                let (a, b) = match zyg {
                    Some(z) => spec.ace.pair(z, &mut strength_rng),
                    None => (strength_rng.sample(StandardNormal), 0.0),
                };
                (f(a), f(b))
            })
            .unzip()
    };

    let mut plan: Vec<(String, Option<Zygosity>, Option<String>, Vec<f64>)> = Vec::new();
    for (zyg, count, tag) in [
        (Zygosity::Mz, spec.mz_pairs, "mz"),
        (Zygosity::Dz, spec.dz_pairs, "dz"),
    ] {
        for i in 0..count {
            let pair = format!("{tag}{:03}", i + 1);
            let (first, second) = strengths_for(Some(zyg));
            plan.push((format!("{pair}_1"), Some(zyg), Some(pair.clone()), first));
            plan.push((format!("{pair}_2"), Some(zyg), Some(pair), second));
        }
    }
    for i in 0..spec.singletons {
        let (strengths, _) = strengths_for(None);
        plan.push((format!("single{:03}", i + 1), None, None, strengths));
    }

    for (index, (id, zygosity, pair_id, strengths)) in plan.into_iter().enumerate() {
        let mut seq_rng = rng::stream(spec.seed, "sequence", &[index as u64]);
        let planted = planted_sequence(spec, &mut seq_rng);
        let schedule = RegimeSchedule {
            segments: planted
                .iter()
                .map(|&(start, end, state)| Segment {
                    start,
                    end,
                    target: block_target(&membership[state - 1], strengths[state - 1]),
                })
                .collect(),
            noise_sd: spec.noise_sd,
            seed: rng::derive_seed(spec.seed, "subject", &[index as u64]),
            ramp_tr: spec.ramp_tr,
        };
        let matrix = generate_subject(&id, spec.tr_seconds, &schedule)?;
        let mut labels = vec![0; spec.time_points];
        for &(start, end, state) in &planted {
            labels[start..end].iter_mut().for_each(|l| *l = state);
        }
        subjects.push(SimulatedSubject {
            matrix,
            zygosity,
            pair_id,
            labels,
            strengths,
        });
    }
    Ok(subjects)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heritability::pearson;

    fn one_segment(t: usize, target: Vec<Vec<f64>>, seed: u64) -> RegimeSchedule {
        RegimeSchedule {
            segments: vec![Segment { start: 0, end: t, target }],
            noise_sd: 1.0,
            seed,
            ramp_tr: None,
        }
    }

    #[test]
    fn identity_target_is_uncorrelated() {
        let p = 4;
        let t = 400;
        let id: Vec<Vec<f64>> = (0..p).map(|i| (0..p).map(|j| f64::from(u8::from(i == j))).collect()).collect();
        let m = generate_subject("s", 2.0, &one_segment(t, id, 3)).unwrap();
        for i in 0..p {
            for j in i + 1..p {
                let r = pearson(m.column(i), m.column(j)).unwrap();
                assert!(r.abs() < 3.0 / (t as f64).sqrt(), "{i},{j}: {r}");
            }
        }
    }

    #[test]
    fn long_run_hits_target() {
        let target = vec![vec![1.0, 0.9], vec![0.9, 1.0]];
        let m = generate_subject("s", 2.0, &one_segment(3000, target, 4)).unwrap();
        let r = pearson(m.column(0), m.column(1)).unwrap();
        assert!((r - 0.9).abs() < 0.03, "{r}");
    }

    #[test]
    fn deterministic_and_rejects_non_psd() {
        let target = vec![vec![1.0, 0.3], vec![0.3, 1.0]];
        let a = generate_subject("s", 2.0, &one_segment(50, target.clone(), 5)).unwrap();
        let b = generate_subject("s", 2.0, &one_segment(50, target, 5)).unwrap();
        assert_eq!(a, b);
        let bad = vec![
            vec![1.0, 0.9, -0.9],
            vec![0.9, 1.0, 0.9],
            vec![-0.9, 0.9, 1.0],
        ];
        assert!(matches!(
            generate_subject("s", 2.0, &one_segment(50, bad, 5)),
            Err(Error::NotPsd(_))
        ));
    }

    #[test]
    fn schedule_must_partition() {
        let target = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let gap = RegimeSchedule {
            segments: vec![
                Segment { start: 0, end: 10, target: target.clone() },
                Segment { start: 12, end: 20, target },
            ],
            noise_sd: 1.0,
            seed: 1,
            ramp_tr: None,
        };
        assert!(generate_subject("s", 2.0, &gap).is_err());
    }

    #[test]
    fn ramp_blends_targets() {
        let a = vec![vec![1.0, 0.9], vec![0.9, 1.0]];
        let b = vec![vec![1.0, -0.9], vec![-0.9, 1.0]];
        let schedule = RegimeSchedule {
            segments: vec![
                Segment { start: 0, end: 50, target: a },
                Segment { start: 50, end: 100, target: b },
            ],
            noise_sd: 1.0,
            seed: 2,
            ramp_tr: Some(3.0),
        };
        assert_eq!(ramp_neighbour(&schedule, 0, 10), None);
        let (other, w) = ramp_neighbour(&schedule, 0, 49).unwrap();
        assert_eq!(other, 1);
        assert!(w > 0.4 && w < 0.5);
        let (other, w) = ramp_neighbour(&schedule, 1, 50).unwrap();
        assert_eq!(other, 0);
        assert!(w > 0.4 && w < 0.5);
        generate_subject("s", 2.0, &schedule).unwrap();
    }

    fn spec(a: f64, c: f64, m: usize, seed: u64) -> AceSpec {
        AceSpec {
            components: vec![AceComponents { a, c }],
            mz_pairs: m,
            dz_pairs: m,
            seed,
        }
    }

    #[test]
    fn ace_fully_genetic_mz_identical() {
        let cohort = generate_twin_cohort(&spec(1.0, 0.0, 50, 1)).unwrap();
        let f = &cohort.features[0];
        assert_eq!(f.mz.first, f.mz.second);
        assert!((f.mz.correlation().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ace_null_cohort() {
        let m = 400;
        let cohort = generate_twin_cohort(&spec(0.0, 0.0, m, 2)).unwrap();
        let f = &cohort.features[0];
        let bound = 3.0 / (m as f64).sqrt();
        assert!(f.mz.correlation().unwrap().abs() < bound);
        assert!(f.dz.correlation().unwrap().abs() < bound);
    }

    #[test]
    fn ace_moments_match_relations() {
        let cohort = generate_twin_cohort(&spec(0.6, 0.2, 500, 3)).unwrap();
        let f = &cohort.features[0];
        let mz = f.mz.correlation().unwrap();
        let dz = f.dz.correlation().unwrap();
        assert!((mz - 0.8).abs() < 0.05, "{mz}");
        assert!((dz - 0.5).abs() < 0.05, "{dz}");
        assert!(generate_twin_cohort(&spec(0.8, 0.4, 5, 1)).is_err());
    }

    #[test]
    fn block_patterns_are_distinct_and_psd() {
        let m = block_membership(10, 3);
        assert_eq!(m.len(), 3);
        assert_ne!(m[0], m[1]);
        assert_ne!(m[1], m[2]);
        assert_ne!(m[0], m[2]);
        for mem in &m {
            symmetric_sqrt(&block_target(mem, 0.95)).unwrap();
        }
    }

    #[test]
    fn cohort_sequences_respect_dwell() {
        let spec = CohortSpec { singletons: 5, mz_pairs: 2, dz_pairs: 2, ..CohortSpec::default() };
        let subjects = simulate_cohort(&spec).unwrap();
        assert_eq!(subjects.len(), 13);
        for s in &subjects {
            assert_eq!(s.labels.len(), spec.time_points);
            let mut run = 1;
            let mut runs = Vec::new();
            for w in s.labels.windows(2) {
                if w[0] == w[1] {
                    run += 1;
                } else {
                    runs.push(run);
                    run = 1;
                }
            }
            runs.push(run);
            assert!(runs.iter().all(|&r| r >= spec.dwell_min), "{runs:?}");
        }
        assert_eq!(subjects[0].pair_id, subjects[1].pair_id);
        assert_eq!(simulate_cohort(&spec).unwrap()[3].matrix, subjects[3].matrix);
    }
}
