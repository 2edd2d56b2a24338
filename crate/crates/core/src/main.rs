use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use heatconn::dyncorr::{Method, DEFAULT_TAPER_TR};
use heatconn::error::Result;
use heatconn::heritability::{WalkConfig, DEFAULT_REPEATS, DEFAULT_STEPS};
use heatconn::io::{self, LoadedManifest, SeriesFormat};
use heatconn::pipeline::{
    self, estimate_all, fit_states, heritability_from_dirs, load_subjects, parse_edge_list,
    KChoice, RunConfig, StatesOptions,
};
use heatconn::rng::derive_seed;
use heatconn::synth::CohortSpec;

#[derive(Parser)]
#[command(name = "heatconn", version, about = "Heat-kernel dynamic connectivity, connectivity states and twin heritability")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic cohort with planted states (manifest, subject CSVs, truth.json).
    Simulate(SimulateArgs),
    /// Estimate dynamic correlations for every subject of a manifest.
    Dyncorr(DyncorrArgs),
    /// Cluster dynamic correlations into states and compute Markov statistics.
    States(StatesArgs),
    /// Heritability index of every state-average edge.
    Heritability(HeritabilityArgs),
    /// Write plot-ready tables for a completed run.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
    /// Full pipeline from a JSON config; flags override config values.
    Run(RunArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    out: PathBuf,
    /// JSON cohort description; missing fields take defaults.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    regions: Option<usize>,
    #[arg(long)]
    time_points: Option<usize>,
    #[arg(long)]
    mz_pairs: Option<usize>,
    #[arg(long)]
    dz_pairs: Option<usize>,
    #[arg(long)]
    singletons: Option<usize>,
    #[arg(long)]
    dwell_min: Option<usize>,
    #[arg(long)]
    dwell_max: Option<usize>,
}

#[derive(Args)]
struct DyncorrArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "heat")]
    method: Method,
    #[arg(long, default_value_t = 15.0)]
    fwhm: f64,
    #[arg(long)]
    degree: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_TAPER_TR)]
    taper: f64,
    #[arg(long, default_value = "bin")]
    format: SeriesFormat,
}

#[derive(Args)]
struct StatesArgs {
    /// Directory written by `dyncorr`.
    #[arg(long)]
    dyncorr: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Number of states or `auto` for the elbow rule.
    #[arg(long, default_value = "auto")]
    k: KChoice,
    #[arg(long, default_value_t = 2)]
    k_min: usize,
    #[arg(long, default_value_t = 8)]
    k_max: usize,
    #[arg(long, default_value_t = 100)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Region pairs to cluster on, e.g. `1-2,3-4` (default: all).
    #[arg(long)]
    edges: Option<String>,
}

#[derive(Args)]
struct HeritabilityArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    dyncorr: PathBuf,
    /// Directory written by `states`.
    #[arg(long)]
    states: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    steps: usize,
    #[arg(long, default_value_t = DEFAULT_REPEATS)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Clip reported HI to [0, 1].
    #[arg(long)]
    clamp: bool,
    #[arg(long, default_value_t = 5)]
    top: usize,
    /// Same edge selection as given to `states`.
    #[arg(long)]
    edges: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// May be repeated.
    #[arg(long = "method")]
    methods: Vec<Method>,
    #[arg(long)]
    fwhm: Option<f64>,
    #[arg(long)]
    degree: Option<usize>,
    #[arg(long)]
    taper: Option<f64>,
    #[arg(long)]
    k: Option<KChoice>,
    #[arg(long)]
    k_min: Option<usize>,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    edges: Option<String>,
    #[arg(long)]
    trace_edges: Option<String>,
    #[arg(long)]
    clamp: bool,
    #[arg(long)]
    top: Option<usize>,
    #[arg(long)]
    format: Option<SeriesFormat>,
}

impl RunArgs {
    fn into_config(self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident <- $arg:expr),* $(,)?) => {
                $(if let Some(v) = $arg { c.$field = v; })*
            };
        }
        set!(
            manifest <- self.manifest,
            output_dir <- self.out,
            fwhm_tr <- self.fwhm,
            taper_tr <- self.taper,
            k <- self.k,
            k_min <- self.k_min,
            k_max <- self.k_max,
            restarts <- self.restarts,
            walk_steps <- self.steps,
            walk_repeats <- self.repeats,
            seed <- self.seed,
            top_n <- self.top,
            format <- self.format,
        );
        if self.degree.is_some() {
            c.degree = self.degree;
        }
        if !self.methods.is_empty() {
            c.methods = self.methods;
        }
        if let Some(e) = self.edges {
            c.edges = Some(parse_edge_list(&e)?);
        }
        if let Some(e) = self.trace_edges {
            c.trace_edges = parse_edge_list(&e)?;
        }
        c.clamp_hi |= self.clamp;
        Ok(c)
    }
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let mut spec: CohortSpec = match &args.spec {
        Some(path) => io::read_json(path)?,
        None => CohortSpec::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => { $(if let Some(v) = args.$field { spec.$field = v; })* };
    }
    set!(seed, regions, time_points, mz_pairs, dz_pairs, singletons, dwell_min, dwell_max);
    let manifest = pipeline::write_simulation(&args.out, &spec)?;
    println!("wrote {} subjects to {}", manifest.subjects.len(), args.out.display());
    Ok(())
}

fn dyncorr(args: DyncorrArgs) -> Result<()> {
    let manifest = LoadedManifest::load(&args.manifest).map_err(|e| e.in_stage("validate"))?;
    let subjects = load_subjects(&manifest).map_err(|e| e.in_stage("load"))?;
    let t = subjects[0].time_points();
    let series = heatconn::dyncorr::EstimatorParams::at_fwhm(args.method, args.fwhm, t, args.degree, args.taper)
        .and_then(|params| estimate_all(&subjects, params))
        .map_err(|e| e.in_stage("dyncorr"))?;
    io::write_series_dir(&args.out, &series, args.format).map_err(|e| e.in_stage("write"))?;
    let clamped: usize = series.iter().map(|s| s.clamped).sum();
    println!("{} subjects, {} edges, {clamped} clamped values", series.len(), series[0].edge_count());
    Ok(())
}

fn states(args: StatesArgs) -> Result<()> {
    let series = io::read_series_dir(&args.dyncorr).map_err(|e| e.in_stage("load"))?;
    let edges = match &args.edges {
        Some(e) => parse_edge_list(e)?
            .into_iter()
            .map(|(i, j)| (i.min(j).saturating_sub(1), i.max(j).saturating_sub(1)))
            .collect(),
        None => series[0].edges.clone(),
    };
    let series = series
        .iter()
        .map(|s| s.select_edges(&edges))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_stage("states"))?;
    let options = StatesOptions {
        k: args.k,
        k_min: args.k_min,
        k_max: args.k_max,
        restarts: args.restarts,
        seed: args.seed,
    };
    let st = fit_states(&series, &options).map_err(|e| e.in_stage("states"))?;
    io::write_states(
        &args.out,
        &st.model,
        &edges,
        &st.transitions,
        &st.occupancy,
        &st.dispersion,
        st.elbow.as_ref(),
    )
    .map_err(|e| e.in_stage("write"))?;
    println!("k = {}, occupancy {:?}", st.model.k, st.occupancy);
    Ok(())
}

fn heritability(args: HeritabilityArgs) -> Result<()> {
    let manifest = LoadedManifest::load(&args.manifest).map_err(|e| e.in_stage("validate"))?;
    let edges = args.edges.as_deref().map(parse_edge_list).transpose()?;
    let walk = WalkConfig::new(args.steps, args.repeats, derive_seed(args.seed, "heritability", &[]));
    let map = heritability_from_dirs(&manifest, &args.dyncorr, &args.states, edges.as_deref(), &walk)
        .map_err(|e| e.in_stage("heritability"))?;
    io::write_heritability(&args.out, &map, args.top, args.clamp).map_err(|e| e.in_stage("write"))?;
    let estimated = map.entries.iter().filter(|e| e.estimate.is_some()).count();
    println!("{estimated} of {} state-edge HI values estimated", map.entries.len());
    Ok(())
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Simulate(args) => simulate(args).map_err(|e| e.in_stage("simulate")),
        Command::Dyncorr(args) => dyncorr(args),
        Command::States(args) => states(args),
        Command::Heritability(args) => heritability(args),
        Command::Report { run } => {
            let tables = pipeline::report(&run).map_err(|e| e.in_stage("report"))?;
            println!("wrote {} tables to {}", tables.len(), run.join("report").display());
            Ok(())
        }
        Command::Run(args) => {
            let config = args.into_config().map_err(|e| e.in_stage("config"))?;
            let summary = pipeline::run_pipeline(&config)?;
            pipeline::report(&config.output_dir).map_err(|e| e.in_stage("report"))?;
            for m in &summary.methods {
                println!(
                    "{}: k = {}, mean total variation {:.4}, switches {}",
                    m.method, m.k, m.mean_total_variation, m.switches
                );
            }
            println!("config {} -> {}", summary.config_hash, config.output_dir.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} threads: {e}");
            return ExitCode::FAILURE;
        }
    }
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
