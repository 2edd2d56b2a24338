//! End-to-end runs: configuration, the stage functions shared with the
//! command line, and the report tables.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::dyncorr::{
    total_variation, DynCorrSeries, Estimator, EstimatorParams, Method, DEFAULT_TAPER_TR,
};
use crate::error::{Error, Result};
use crate::heritability::{
    hi_map, HeritabilityMap, TwinPairIndex, WalkConfig, Zygosity, DEFAULT_REPEATS, DEFAULT_STEPS,
};
use crate::io::{self, LoadedManifest, Manifest, ManifestEntry, SeriesFormat, TopState};
use crate::rng::derive_seed;
use crate::signal::RoiMatrix;
use crate::synth::{simulate_cohort, CohortSpec};
use crate::states::{
    align_labels, elbow_select, kmeans, occupancy, relabel_fit, stack_series, state_switches,
    transition_matrix_pooled, within_state_dispersion, ElbowResult, KMeansConfig, StateModel,
    TransitionMatrix,
};

/// Number of states: chosen by the elbow rule or fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KChoice {
    #[default]
    Auto,
    Fixed(usize),
}

impl FromStr for KChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "auto" => Ok(KChoice::Auto),
            n => n
                .parse()
                .ok()
                .filter(|&k| k >= 1)
                .map(KChoice::Fixed)
                .ok_or_else(|| Error::InvalidInput(format!("k must be \"auto\" or a positive integer, got {s:?}"))),
        }
    }
}

impl fmt::Display for KChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KChoice::Auto => f.write_str("auto"),
            KChoice::Fixed(k) => write!(f, "{k}"),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum KRepr {
    Fixed(usize),
    Word(String),
}

impl Serialize for KChoice {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match *self {
            KChoice::Auto => KRepr::Word("auto".into()),
            KChoice::Fixed(k) => KRepr::Fixed(k),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for KChoice {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match KRepr::deserialize(d)? {
            KRepr::Fixed(k) => Ok(KChoice::Fixed(k)),
            KRepr::Word(w) => w.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Parses `"1-2,3-4"` into 1-based region pairs.
pub fn parse_edge_list(s: &str) -> Result<Vec<(usize, usize)>> {
    s.split(',')
        .filter(|part| !part.trim().is_empty())
        .map(|part| {
            let bad = || Error::InvalidInput(format!("edge {part:?} is not of the form i-j"));
            let (a, b) = part.trim().split_once('-').ok_or_else(bad)?;
            Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
        })
        .collect()
}

/// Everything a full run needs. Region indices are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub output_dir: PathBuf,
    pub methods: Vec<Method>,
    pub fwhm_tr: f64,
    /// Cosine-series degree; `None` uses T - 1.
    pub degree: Option<usize>,
    /// Gaussian taper SD in TRs for the tapered sliding window.
    pub taper_tr: f64,
    pub k: KChoice,
    pub k_min: usize,
    pub k_max: usize,
    pub restarts: usize,
    pub walk_steps: usize,
    pub walk_repeats: usize,
    pub seed: u64,
    /// Restrict the state and heritability analyses to these region pairs.
    pub edges: Option<Vec<(usize, usize)>>,
    /// Region pairs written to the trace table; empty means the first analysed edge.
    pub trace_edges: Vec<(usize, usize)>,
    pub clamp_hi: bool,
    pub top_n: usize,
    pub format: SeriesFormat,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: PathBuf::from("manifest.json"),
            output_dir: PathBuf::from("run"),
            methods: vec![Method::Heat],
            fwhm_tr: 15.0,
            degree: None,
            taper_tr: DEFAULT_TAPER_TR,
            k: KChoice::Auto,
            k_min: 2,
            k_max: 8,
            restarts: 100,
            walk_steps: DEFAULT_STEPS,
            walk_repeats: DEFAULT_REPEATS,
            seed: 0,
            edges: None,
            trace_edges: Vec::new(),
            clamp_hi: false,
            top_n: 5,
            format: SeriesFormat::Bin,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        io::read_json(path)
    }

    /// Checks parameters and input files without computing anything.
    pub fn validate(&self) -> Result<LoadedManifest> {
        if self.methods.is_empty() {
            return Err(Error::InvalidInput("no methods selected".into()));
        }
        let mut seen = Vec::new();
        for m in &self.methods {
            if seen.contains(m) {
                return Err(Error::InvalidInput(format!("method {m} listed twice")));
            }
            seen.push(*m);
        }
        if !(self.fwhm_tr.is_finite() && self.fwhm_tr > 0.0) {
            return Err(Error::InvalidInput("fwhm_tr must be positive".into()));
        }
        if !(self.taper_tr.is_finite() && self.taper_tr > 0.0) {
            return Err(Error::InvalidInput("taper_tr must be positive".into()));
        }
        match self.k {
            KChoice::Auto if self.k_min < 1 || self.k_max < self.k_min + 2 => {
                return Err(Error::InvalidInput(
                    "elbow selection needs 1 <= k_min and at least three k values".into(),
                ))
            }
            KChoice::Fixed(0) => return Err(Error::InvalidInput("k must be positive".into())),
            _ => {}
        }
        if self.restarts == 0 || self.walk_steps == 0 || self.walk_repeats == 0 {
            return Err(Error::InvalidInput(
                "restarts, walk_steps and walk_repeats must be positive".into(),
            ));
        }
        if self.edges.as_ref().is_some_and(Vec::is_empty) {
            return Err(Error::InvalidInput("edge selection is empty".into()));
        }
        LoadedManifest::load(&self.manifest)
    }

    /// Hex SHA-256 of the configuration. The output location does not affect
    /// results, so it is left out.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.without_output()).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    fn without_output(&self) -> RunConfig {
        RunConfig {
            output_dir: PathBuf::new(),
            ..self.clone()
        }
    }

    pub fn estimator_params(&self, method: Method, time_points: usize) -> Result<EstimatorParams> {
        EstimatorParams::at_fwhm(method, self.fwhm_tr, time_points, self.degree, self.taper_tr)
    }

    pub fn states_options(&self) -> StatesOptions {
        StatesOptions {
            k: self.k,
            k_min: self.k_min,
            k_max: self.k_max,
            restarts: self.restarts,
            seed: self.seed,
        }
    }

    pub fn walk_config(&self) -> WalkConfig {
        WalkConfig::new(
            self.walk_steps,
            self.walk_repeats,
            derive_seed(self.seed, "heritability", &[]),
        )
    }
}

fn check_edges(edges: &[(usize, usize)], regions: usize, what: &str) -> Result<Vec<(usize, usize)>> {
    edges
        .iter()
        .map(|&(i, j)| {
            if i == j || i == 0 || j == 0 || i > regions || j > regions {
                Err(Error::InvalidInput(format!(
                    "{what} edge {i}-{j} is not a pair of distinct regions in 1..={regions}"
                )))
            } else {
                Ok((i.min(j) - 1, i.max(j) - 1))
            }
        })
        .collect()
}

/// Loads and checks that all subjects share one scan length and region count.
pub fn load_subjects(manifest: &LoadedManifest) -> Result<Vec<RoiMatrix>> {
    let subjects = manifest.read_subjects()?;
    let first = &subjects[0];
    for s in &subjects[1..] {
        if s.time_points() != first.time_points() || s.regions() != first.regions() {
            return Err(Error::InvalidInput(format!(
                "{} is {}x{}, expected {}x{}",
                s.subject_id,
                s.time_points(),
                s.regions(),
                first.time_points(),
                first.regions()
            ))
            .for_subject(&s.subject_id));
        }
    }
    Ok(subjects)
}

/// Dynamic correlations for every subject, after rescaling to [0, 1].
pub fn estimate_all(subjects: &[RoiMatrix], params: EstimatorParams) -> Result<Vec<DynCorrSeries>> {
    let first = subjects.first().ok_or(Error::EmptyInput)?;
    let estimator = Estimator::new(params, first.time_points())?;
    subjects
        .iter()
        .map(|s| {
            s.rescaled()
                .and_then(|r| estimator.estimate(&r))
                .map_err(|e| e.for_subject(&s.subject_id))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatesOptions {
    pub k: KChoice,
    pub k_min: usize,
    pub k_max: usize,
    pub restarts: usize,
    /// Root seed; the clustering draws from its own substream.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatesResult {
    pub model: StateModel,
    pub elbow: Option<ElbowResult>,
    pub transitions: TransitionMatrix,
    pub occupancy: Vec<f64>,
    pub dispersion: Vec<f64>,
}

impl StatesResult {
    fn from_model(model: StateModel, elbow: Option<ElbowResult>, series: &[DynCorrSeries]) -> Result<Self> {
        Ok(Self {
            transitions: transition_matrix_pooled(&model.assignments, model.k)?,
            occupancy: occupancy(&model.assignments, model.k)?,
            dispersion: within_state_dispersion(series, &model.assignments, model.k)?,
            model,
            elbow,
        })
    }

    /// Relabels states with `perm[old - 1]` = new label.
    pub fn relabeled(&self, perm: &[usize], series: &[DynCorrSeries]) -> Result<Self> {
        let model = StateModel::from_fit(relabel_fit(&self.model.fit, perm), series)?;
        Self::from_model(model, self.elbow.clone(), series)
    }
}

pub fn fit_states(series: &[DynCorrSeries], options: &StatesOptions) -> Result<StatesResult> {
    let (points, dim) = stack_series(series)?;
    let seed = derive_seed(options.seed, "states", &[]);
    let (fit, elbow) = match options.k {
        KChoice::Fixed(k) => (kmeans(&points, dim, &KMeansConfig::new(k, options.restarts, seed))?, None),
        KChoice::Auto => {
            let elbow = elbow_select(&points, dim, options.k_min..=options.k_max, options.restarts, seed)?;
            (elbow.chosen_fit().clone(), Some(elbow))
        }
    };
    StatesResult::from_model(StateModel::from_fit(fit, series)?, elbow, series)
}

/// Twin pairs of the manifest as positions in `subject_ids`.
pub fn pairs_for(manifest: &LoadedManifest, subject_ids: &[String]) -> Result<Vec<TwinPairIndex>> {
    let position = |manifest_index: usize| {
        let id = &manifest.manifest.subjects[manifest_index].id;
        subject_ids
            .iter()
            .position(|s| s == id)
            .ok_or_else(|| Error::InvalidInput(format!("twin {id} has no dynamic correlation series")))
    };
    manifest
        .twin_pairs()?
        .into_iter()
        .map(|p| {
            Ok(TwinPairIndex {
                first: position(p.first)?,
                second: position(p.second)?,
                ..p
            })
        })
        .collect()
}

fn mean_total_variation(series: &[DynCorrSeries]) -> f64 {
    let per_subject = series.iter().map(|s| {
        (0..s.edge_count()).map(|e| total_variation(&s.edge_series(e))).sum::<f64>() / s.edge_count() as f64
    });
    per_subject.sum::<f64>() / series.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub params: EstimatorParams,
    pub mean_total_variation: f64,
    pub clamped: usize,
    pub k: usize,
    pub weak_elbow: Option<bool>,
    pub elbow_ratios: Option<Vec<f64>>,
    /// `perm[c - 1]` maps this method's raw cluster `c` onto the first method's labels.
    pub alignment: Option<Vec<usize>>,
    pub occupancy: Vec<f64>,
    pub transition_diagonal: Vec<f64>,
    pub dispersion: Vec<f64>,
    pub switches: usize,
    pub hi_estimated: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub config: RunConfig,
    pub subjects: usize,
    pub time_points: usize,
    pub regions: usize,
    /// 1-based region pairs used for states and heritability.
    pub edges: Vec<(usize, usize)>,
    pub trace_edges: Vec<(usize, usize)>,
    pub mz_pairs: usize,
    pub dz_pairs: usize,
    pub methods: Vec<MethodSummary>,
}

impl RunSummary {
    pub fn method_dir(run_dir: &Path, method: Method) -> PathBuf {
        run_dir.join(method.as_str())
    }
}

pub const SUMMARY_FILE: &str = "summary.json";

/// Runs every stage and writes the artifact directory. Identical inputs give
/// byte-identical files regardless of the thread count.
pub fn run_pipeline(config: &RunConfig) -> Result<RunSummary> {
    let manifest = config.validate().map_err(|e| e.in_stage("validate"))?;
    let subjects = load_subjects(&manifest).map_err(|e| e.in_stage("load"))?;
    let (t, p) = (subjects[0].time_points(), subjects[0].regions());
    let (edges, trace_edges) = (|| {
        let edges = match &config.edges {
            Some(list) => check_edges(list, p, "selected")?,
            None => crate::dyncorr::edge_list(p),
        };
        let traces = if config.trace_edges.is_empty() {
            vec![edges[0]]
        } else {
            check_edges(&config.trace_edges, p, "trace")?
        };
        if let KChoice::Fixed(k) = config.k {
            if k > subjects.len() * t {
                return Err(Error::TooManyClusters { k, n: subjects.len() * t });
            }
        }
        Ok((edges, traces))
    })()
    .map_err(|e: Error| e.in_stage("validate"))?;
    let ids: Vec<String> = subjects.iter().map(|s| s.subject_id.clone()).collect();
    let pairs = pairs_for(&manifest, &ids).map_err(|e| e.in_stage("validate"))?;

    let mut all_series = Vec::with_capacity(config.methods.len());
    for &method in &config.methods {
        let series = config
            .estimator_params(method, t)
            .and_then(|params| estimate_all(&subjects, params))
            .map_err(|e| e.in_stage("dyncorr"))?;
        all_series.push(series);
    }

    let selected: Vec<Vec<DynCorrSeries>> = all_series
        .iter()
        .map(|series| series.iter().map(|s| s.select_edges(&edges)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()
        .map_err(|e| e.in_stage("states"))?;
    let options = config.states_options();
    let mut states: Vec<StatesResult> = Vec::with_capacity(selected.len());
    let mut alignments = Vec::with_capacity(selected.len());
    for (i, series) in selected.iter().enumerate() {
        let result = fit_states(series, &options).map_err(|e| e.in_stage("states"))?;
        let (result, perm) = match states.first() {
            Some(reference) if i > 0 && reference.model.k == result.model.k => {
                let perm = align_labels(&reference.model.fit, &result.model.fit)
                    .map_err(|e| e.in_stage("states"))?;
                let relabeled = result.relabeled(&perm, series).map_err(|e| e.in_stage("states"))?;
                (relabeled, Some(perm))
            }
            _ => (result, None),
        };
        states.push(result);
        alignments.push(perm);
    }

    let walk = config.walk_config();
    let mut maps = Vec::with_capacity(selected.len());
    for (series, st) in selected.iter().zip(&states) {
        let map = if pairs.is_empty() {
            None
        } else {
            Some(
                hi_map(series, &st.model.assignments, &pairs, st.model.k, &walk)
                    .map_err(|e| e.in_stage("heritability"))?,
            )
        };
        maps.push(map);
    }

    let one_based = |v: &[(usize, usize)]| v.iter().map(|&(i, j)| (i + 1, j + 1)).collect::<Vec<_>>();
    let mut summary = RunSummary {
        config_hash: config.hash(),
        config: config.without_output(),
        subjects: subjects.len(),
        time_points: t,
        regions: p,
        edges: one_based(&edges),
        trace_edges: one_based(&trace_edges),
        mz_pairs: pairs.iter().filter(|p| p.zygosity == Zygosity::Mz).count(),
        dz_pairs: pairs.iter().filter(|p| p.zygosity == Zygosity::Dz).count(),
        methods: Vec::new(),
    };

    let write = |summary: &mut RunSummary| -> Result<()> {
        let out = &config.output_dir;
        io::create_dir(out)?;
        for (i, &method) in config.methods.iter().enumerate() {
            let dir = RunSummary::method_dir(out, method);
            io::write_series_dir(&dir.join("dyncorr"), &all_series[i], config.format)?;
            let st = &states[i];
            io::write_states(
                &dir.join("states"),
                &st.model,
                &edges,
                &st.transitions,
                &st.occupancy,
                &st.dispersion,
                st.elbow.as_ref(),
            )?;
            if let Some(map) = &maps[i] {
                io::write_heritability(&dir.join("heritability"), map, config.top_n, config.clamp_hi)?;
            }
            summary.methods.push(MethodSummary {
                method,
                params: all_series[i][0].params,
                mean_total_variation: mean_total_variation(&selected[i]),
                clamped: all_series[i].iter().map(|s| s.clamped).sum(),
                k: st.model.k,
                weak_elbow: st.elbow.as_ref().map(|e| e.weak_elbow),
                elbow_ratios: st.elbow.as_ref().map(|e| e.ratios.clone()),
                alignment: alignments[i].clone(),
                occupancy: st.occupancy.clone(),
                transition_diagonal: st.transitions.diagonal(),
                dispersion: st.dispersion.clone(),
                switches: st.model.assignments.iter().map(|a| state_switches(a)).sum(),
                hi_estimated: maps[i]
                    .as_ref()
                    .map(|m| m.entries.iter().filter(|e| e.estimate.is_some()).count()),
            });
        }
        io::write_json(&out.join(SUMMARY_FILE), summary)
    };
    write(&mut summary).map_err(|e| e.in_stage("write"))?;
    Ok(summary)
}

/// Heritability map for one method from files written by earlier stages.
pub fn heritability_from_dirs(
    manifest: &LoadedManifest,
    dyncorr_dir: &Path,
    states_dir: &Path,
    edges: Option<&[(usize, usize)]>,
    walk: &WalkConfig,
) -> Result<HeritabilityMap> {
    let series = io::read_series_dir(dyncorr_dir)?;
    let (ids, assignments) = io::read_assignments(states_dir)?;
    let series: Vec<DynCorrSeries> = ids
        .iter()
        .map(|id| {
            series
                .iter()
                .find(|s| &s.subject_id == id)
                .cloned()
                .ok_or_else(|| Error::InvalidInput(format!("no dynamic correlation series for {id}")))
        })
        .collect::<Result<_>>()?;
    let series = match edges {
        Some(list) => {
            let zero = check_edges(list, series[0].regions, "selected")?;
            series.iter().map(|s| s.select_edges(&zero)).collect::<Result<Vec<_>>>()?
        }
        None => series,
    };
    let transitions: TransitionMatrix = io::read_json(&states_dir.join("transitions.json"))?;
    let pairs = pairs_for(manifest, &ids)?;
    if pairs.is_empty() {
        return Err(Error::InvalidInput("manifest has no twin pairs".into()));
    }
    hi_map(&series, &assignments, &pairs, transitions.k, walk)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSubject {
    pub id: String,
    pub labels: Vec<usize>,
    pub strengths: Vec<f64>,
}

/// Planted states of a simulated cohort, written next to its manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub spec: CohortSpec,
    pub subjects: Vec<TruthSubject>,
}

/// Simulates a cohort into `dir`: `manifest.json`, `subjects/<id>.csv` and
/// `truth.json`.
pub fn write_simulation(dir: &Path, spec: &CohortSpec) -> Result<Manifest> {
    let subjects = simulate_cohort(spec)?;
    let mut entries = Vec::with_capacity(subjects.len());
    for s in &subjects {
        let rel = PathBuf::from("subjects").join(format!("{}.csv", s.matrix.subject_id));
        io::write_subject_csv(&dir.join(&rel), &s.matrix)?;
        entries.push(ManifestEntry {
            id: s.matrix.subject_id.clone(),
            path: rel,
            zygosity: s.zygosity,
            pair_id: s.pair_id.clone(),
        });
    }
    let manifest = Manifest {
        tr_seconds: spec.tr_seconds,
        subjects: entries,
    };
    io::write_json(&dir.join("manifest.json"), &manifest)?;
    let truth = Truth {
        spec: spec.clone(),
        subjects: subjects
            .into_iter()
            .map(|s| TruthSubject {
                id: s.matrix.subject_id,
                labels: s.labels,
                strengths: s.strengths,
            })
            .collect(),
    };
    io::write_json(&dir.join("truth.json"), &truth)?;
    Ok(manifest)
}

/// Files written by [`report`], relative to `<run>/report`.
pub const REPORT_TABLES: [&str; 6] = [
    "traces.csv",
    "state_timelines.csv",
    "transitions.csv",
    "occupancy.csv",
    "centroids.csv",
    "hi_top.csv",
];

/// Writes plot-ready tables for a completed run into `<run>/report`.
pub fn report(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let summary_path = run_dir.join(SUMMARY_FILE);
    if !summary_path.is_file() {
        return Err(Error::IncompleteRun {
            dir: run_dir.to_path_buf(),
            missing: SUMMARY_FILE.into(),
        });
    }
    let summary: RunSummary = io::read_json(&summary_path)?;
    let has_hi = summary.mz_pairs + summary.dz_pairs > 0;
    for m in &summary.methods {
        let dir = RunSummary::method_dir(run_dir, m.method);
        io::require_files(&dir.join("dyncorr"), &["index.json"])?;
        io::require_files(&dir.join("states"), &io::STATE_FILES)?;
        if has_hi {
            io::require_files(&dir.join("heritability"), &io::HI_FILES)?;
        }
    }
    let out = run_dir.join("report");
    io::create_dir(&out)?;
    let path = |name: &str| out.join(name);

    let mut traces = csv::Writer::from_path(path("traces.csv"))?;
    traces.write_record(["method", "subject_id", "edge_i", "edge_j", "t", "rho"])?;
    let mut timelines = csv::Writer::from_path(path("state_timelines.csv"))?;
    timelines.write_record(["method", "subject_id", "t", "label"])?;
    let mut transitions = csv::Writer::from_path(path("transitions.csv"))?;
    transitions.write_record(["method", "from", "to", "probability", "count"])?;
    let mut occ = csv::Writer::from_path(path("occupancy.csv"))?;
    occ.write_record(["method", "state", "rate"])?;
    let mut centroids = csv::Writer::from_path(path("centroids.csv"))?;
    centroids.write_record(["method", "state", "edge_i", "edge_j", "value"])?;
    let mut top = csv::Writer::from_path(path("hi_top.csv"))?;
    top.write_record(["method", "state", "rank", "edge_i", "edge_j", "hi", "sd_bound", "display"])?;

    for m in &summary.methods {
        let name = m.method.as_str();
        let dir = RunSummary::method_dir(run_dir, m.method);
        let series = io::read_series_dir(&dir.join("dyncorr"))?;
        for s in &series {
            for &(i, j) in &summary.trace_edges {
                let e = s
                    .edges
                    .iter()
                    .position(|&x| x == (i - 1, j - 1))
                    .ok_or_else(|| Error::InvalidInput(format!("trace edge {i}-{j} not in {}", s.subject_id)))?;
                for (t, v) in s.edge_series(e).iter().enumerate() {
                    traces.write_record([
                        name,
                        &s.subject_id,
                        &i.to_string(),
                        &j.to_string(),
                        &t.to_string(),
                        &io::fmt_f64(*v),
                    ])?;
                }
            }
        }

        let states_dir = dir.join("states");
        let (ids, seqs) = io::read_assignments(&states_dir)?;
        for (id, seq) in ids.iter().zip(&seqs) {
            for (t, label) in seq.iter().enumerate() {
                timelines.write_record([name, id, &t.to_string(), &label.to_string()])?;
            }
        }
        let tm: TransitionMatrix = io::read_json(&states_dir.join("transitions.json"))?;
        for a in 0..tm.k {
            for b in 0..tm.k {
                transitions.write_record([
                    name,
                    &(a + 1).to_string(),
                    &(b + 1).to_string(),
                    &io::fmt_f64(tm.probs[a][b]),
                    &tm.counts[a][b].to_string(),
                ])?;
            }
        }
        let rates: io::OccupancyFile = io::read_json(&states_dir.join("occupancy.json"))?;
        for (s, r) in rates.rates.iter().enumerate() {
            occ.write_record([name, &(s + 1).to_string(), &io::fmt_f64(*r)])?;
        }
        let mut reader = csv::Reader::from_path(states_dir.join("centroids.csv"))?;
        for record in reader.records() {
            let record = record?;
            let state = record.get(0).unwrap_or_default().to_string();
            for (&(i, j), v) in summary.edges.iter().zip(record.iter().skip(1)) {
                centroids.write_record([name, &state, &i.to_string(), &j.to_string(), v])?;
            }
        }

        if has_hi {
            let states: Vec<TopState> = io::read_json(&dir.join("heritability").join("hi_top.json"))?;
            for st in &states {
                let mut rows = st.rows.clone();
                rows.sort_by(|a, b| b.hi.total_cmp(&a.hi).then(a.rank.cmp(&b.rank)));
                for r in rows {
                    top.write_record([
                        name,
                        &st.state.to_string(),
                        &r.rank.to_string(),
                        &r.edge_i.to_string(),
                        &r.edge_j.to_string(),
                        &io::fmt_f64(r.hi),
                        &io::fmt_f64(r.sd_bound),
                        &r.display,
                    ])?;
                }
            }
        }
    }
    for w in [&mut traces, &mut timelines, &mut transitions, &mut occ, &mut centroids, &mut top] {
        w.flush().map_err(|e| Error::io("writing report", e))?;
    }
    Ok(REPORT_TABLES.iter().map(|n| path(n)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_choice_parses_and_serializes() {
        assert_eq!("auto".parse::<KChoice>().unwrap(), KChoice::Auto);
        assert_eq!("4".parse::<KChoice>().unwrap(), KChoice::Fixed(4));
        assert!("0".parse::<KChoice>().is_err());
        assert!("many".parse::<KChoice>().is_err());
        assert_eq!(serde_json::to_string(&KChoice::Fixed(3)).unwrap(), "3");
        assert_eq!(serde_json::to_string(&KChoice::Auto).unwrap(), "\"auto\"");
        let k: KChoice = serde_json::from_str("\"auto\"").unwrap();
        assert_eq!(k, KChoice::Auto);
    }

    #[test]
    fn edge_lists() {
        assert_eq!(parse_edge_list("1-2, 3-10").unwrap(), vec![(1, 2), (3, 10)]);
        assert!(parse_edge_list("1:2").is_err());
        assert!(check_edges(&[(2, 2)], 5, "x").is_err());
        assert!(check_edges(&[(1, 6)], 5, "x").is_err());
        assert_eq!(check_edges(&[(4, 2)], 5, "x").unwrap(), vec![(1, 3)]);
    }

    #[test]
    fn config_defaults_and_hash() {
        let c: RunConfig = serde_json::from_str(r#"{"manifest": "m.json", "k": 3}"#).unwrap();
        assert_eq!(c.k, KChoice::Fixed(3));
        assert_eq!(c.restarts, 100);
        assert_eq!(c.methods, vec![Method::Heat]);
        let moved = RunConfig {
            output_dir: "elsewhere".into(),
            ..c.clone()
        };
        assert_eq!(c.hash(), moved.hash());
        assert_eq!(c.hash().len(), 64);
        let reseeded = RunConfig { seed: 9, ..c.clone() };
        assert_ne!(c.hash(), reseeded.hash());
        assert!(serde_json::from_str::<RunConfig>(r#"{"bogus": 1}"#).is_err());
    }
}
