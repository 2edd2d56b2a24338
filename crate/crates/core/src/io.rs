//! File formats: subject CSVs, the cohort manifest, per-subject dynamic
//! correlation files and the state/heritability result tables.
//!
//! Region and edge indices in files are 1-based. Floats in CSV tables are
//! written with 17 significant digits.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dyncorr::{DynCorrSeries, EstimatorParams};
use crate::error::{Error, Result};
use crate::heritability::{format_top_row, HeritabilityMap, TwinPairIndex, Zygosity};
use crate::signal::RoiMatrix;
use crate::states::{ElbowResult, StateModel, TransitionMatrix};

pub const DEFAULT_TR_SECONDS: f64 = 2.0;

/// 17 significant digits, enough to round-trip any f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))
}

fn open(path: &Path) -> Result<File> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = open(path)?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    Ok(csv::Reader::from_reader(open(path)?))
}

fn parse_f64(field: &str, path: &Path, row: usize) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| {
        Error::InvalidInput(format!(
            "{}: row {row}: cannot parse {field:?} as a number",
            path.display()
        ))
    })
}

/// Reads `t,roi_1,...,roi_p`; the `t` column is ignored.
pub fn read_subject_csv(path: &Path, subject_id: &str, tr_seconds: f64) -> Result<RoiMatrix> {
    let mut reader = csv_reader(path)?;
    let header = reader.headers()?.clone();
    if header.get(0).map(str::trim) != Some("t") || header.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "{}: header must be t,roi_1,...,roi_p",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let values = record
            .iter()
            .skip(1)
            .map(|f| parse_f64(f, path, r + 1))
            .collect::<Result<Vec<_>>>()?;
        rows.push(values);
    }
    RoiMatrix::from_rows(subject_id, tr_seconds, &rows).map_err(|e| match e {
        Error::InvalidInput(msg) => Error::InvalidInput(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write_subject_csv(path: &Path, m: &RoiMatrix) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=m.regions()).map(|r| format!("roi_{r}")));
    w.write_record(&header)?;
    for t in 0..m.time_points() {
        let mut row = vec![t.to_string()];
        row.extend(m.columns().iter().map(|c| fmt_f64(c[t])));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative to the manifest's directory unless absolute.
    pub path: PathBuf,
    #[serde(default)]
    pub zygosity: Option<Zygosity>,
    #[serde(default)]
    pub pair_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default = "default_tr")]
    pub tr_seconds: f64,
    pub subjects: Vec<ManifestEntry>,
}

fn default_tr() -> f64 {
    DEFAULT_TR_SECONDS
}

/// A manifest together with the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct LoadedManifest {
    pub manifest: Manifest,
    pub base_dir: PathBuf,
}

impl LoadedManifest {
    /// Reads the manifest and checks that every subject file exists, ids are
    /// unique and every twin pair has exactly two members of one zygosity.
    pub fn load(path: &Path) -> Result<Self> {
        let manifest: Manifest = read_json(path)?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let loaded = Self { manifest, base_dir };
        loaded.validate()?;
        Ok(loaded)
    }

    pub fn subject_path(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.base_dir.join(&entry.path)
        }
    }

    fn validate(&self) -> Result<()> {
        if self.manifest.subjects.is_empty() {
            return Err(Error::InvalidInput("manifest lists no subjects".into()));
        }
        if !(self.manifest.tr_seconds > 0.0) {
            return Err(Error::InvalidInput("tr_seconds must be positive".into()));
        }
        let mut seen = HashSet::new();
        for entry in &self.manifest.subjects {
            if !seen.insert(entry.id.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate subject id {}", entry.id)));
            }
            let path = self.subject_path(entry);
            if !path.is_file() {
                return Err(Error::MissingFile(path));
            }
            if entry.pair_id.is_some() != entry.zygosity.is_some() {
                return Err(Error::InvalidInput(format!(
                    "subject {}: pair_id and zygosity must be given together",
                    entry.id
                )));
            }
        }
        self.twin_pairs().map(|_| ())
    }

    /// Twin pairs in order of first appearance in the manifest.
    pub fn twin_pairs(&self) -> Result<Vec<TwinPairIndex>> {
        let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        let mut order = Vec::new();
        for (i, e) in self.manifest.subjects.iter().enumerate() {
            if let Some(p) = &e.pair_id {
                let slot = groups.entry(p.as_str()).or_default();
                if slot.is_empty() {
                    order.push(p.as_str());
                }
                slot.push(i);
            }
        }
        order
            .into_iter()
            .map(|p| {
                let members = &groups[p];
                if members.len() != 2 {
                    return Err(Error::InvalidInput(format!(
                        "pair {p} has {} members, expected 2",
                        members.len()
                    )));
                }
                let (a, b) = (members[0], members[1]);
                let za = self.manifest.subjects[a].zygosity;
                let zb = self.manifest.subjects[b].zygosity;
                if za != zb {
                    return Err(Error::InvalidInput(format!("pair {p} mixes zygosities")));
                }
                Ok(TwinPairIndex {
                    pair_id: p.to_string(),
                    zygosity: za.expect("validated with pair_id"),
                    first: a,
                    second: b,
                })
            })
            .collect()
    }

    pub fn read_subjects(&self) -> Result<Vec<RoiMatrix>> {
        self.manifest
            .subjects
            .iter()
            .map(|e| read_subject_csv(&self.subject_path(e), &e.id, self.manifest.tr_seconds))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SeriesFormat {
    /// Packed little-endian f64, time-major, with a JSON sidecar.
    #[default]
    Bin,
    Csv,
}

impl std::str::FromStr for SeriesFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bin" => Ok(SeriesFormat::Bin),
            "csv" => Ok(SeriesFormat::Csv),
            other => Err(Error::InvalidInput(format!("unknown format {other:?}"))),
        }
    }
}

/// JSON sidecar describing one subject's dynamic correlation file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesSidecar {
    pub subject_id: String,
    pub format: SeriesFormat,
    pub data_file: String,
    pub time_points: usize,
    pub regions: usize,
    /// 1-based region pairs in column order.
    pub edges: Vec<(usize, usize)>,
    pub params: EstimatorParams,
    pub clamped: usize,
}

/// Subject order of a dynamic correlation directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesIndex {
    pub subjects: Vec<String>,
    pub format: SeriesFormat,
    pub params: EstimatorParams,
}

pub fn write_series(dir: &Path, series: &DynCorrSeries, format: SeriesFormat) -> Result<()> {
    let stem = &series.subject_id;
    let data_file = match format {
        SeriesFormat::Bin => {
            let name = format!("{stem}.f64");
            let path = dir.join(&name);
            let mut w = create(&path)?;
            for v in &series.values {
                w.write_all(&v.to_le_bytes())
                    .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
            }
            w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
            name
        }
        SeriesFormat::Csv => {
            let name = format!("{stem}.csv");
            let mut w = csv_writer(&dir.join(&name))?;
            let mut header = vec!["t".to_string()];
            header.extend(series.edges.iter().map(|(i, j)| format!("e{}_{}", i + 1, j + 1)));
            w.write_record(&header)?;
            for t in 0..series.time_points {
                let mut row = vec![t.to_string()];
                row.extend(series.row(t).iter().map(|v| fmt_f64(*v)));
                w.write_record(&row)?;
            }
            w.flush().map_err(|e| Error::io("writing series csv", e))?;
            name
        }
    };
    let sidecar = SeriesSidecar {
        subject_id: series.subject_id.clone(),
        format,
        data_file,
        time_points: series.time_points,
        regions: series.regions,
        edges: series.edges.iter().map(|(i, j)| (i + 1, j + 1)).collect(),
        params: series.params,
        clamped: series.clamped,
    };
    write_json(&dir.join(format!("{stem}.json")), &sidecar)
}

pub fn read_series(dir: &Path, subject_id: &str) -> Result<DynCorrSeries> {
    let sidecar: SeriesSidecar = read_json(&dir.join(format!("{subject_id}.json")))?;
    let path = dir.join(&sidecar.data_file);
    let e = sidecar.edges.len();
    let expected = sidecar.time_points * e;
    let values = match sidecar.format {
        SeriesFormat::Bin => {
            let mut bytes = Vec::new();
            open(&path)?
                .read_to_end(&mut bytes)
                .map_err(|err| Error::io(format!("reading {}", path.display()), err))?;
            if bytes.len() != expected * 8 {
                return Err(Error::InvalidInput(format!(
                    "{}: {} bytes, expected {}",
                    path.display(),
                    bytes.len(),
                    expected * 8
                )));
            }
            bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect()
        }
        SeriesFormat::Csv => {
            let mut values = Vec::with_capacity(expected);
            for (r, record) in csv_reader(&path)?.records().enumerate() {
                for f in record?.iter().skip(1) {
                    values.push(parse_f64(f, &path, r + 1)?);
                }
            }
            if values.len() != expected {
                return Err(Error::InvalidInput(format!(
                    "{}: {} values, expected {expected}",
                    path.display(),
                    values.len()
                )));
            }
            values
        }
    };
    Ok(DynCorrSeries {
        subject_id: sidecar.subject_id,
        params: sidecar.params,
        time_points: sidecar.time_points,
        regions: sidecar.regions,
        edges: sidecar.edges.iter().map(|(i, j)| (i - 1, j - 1)).collect(),
        values,
        clamped: sidecar.clamped,
    })
}

pub fn write_series_dir(dir: &Path, series: &[DynCorrSeries], format: SeriesFormat) -> Result<()> {
    let first = series.first().ok_or(Error::EmptyInput)?;
    create_dir(dir)?;
    for s in series {
        write_series(dir, s, format)?;
    }
    write_json(
        &dir.join("index.json"),
        &SeriesIndex {
            subjects: series.iter().map(|s| s.subject_id.clone()).collect(),
            format,
            params: first.params,
        },
    )
}

pub fn read_series_dir(dir: &Path) -> Result<Vec<DynCorrSeries>> {
    let index: SeriesIndex = read_json(&dir.join("index.json"))?;
    index.subjects.iter().map(|id| read_series(dir, id)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyFile {
    pub k: usize,
    pub rates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersionFile {
    pub k: usize,
    pub per_state: Vec<f64>,
}

pub const STATE_FILES: [&str; 5] = [
    "centroids.csv",
    "assignments.csv",
    "transitions.json",
    "occupancy.json",
    "dispersion.json",
];

pub fn write_states(
    dir: &Path,
    model: &StateModel,
    edges: &[(usize, usize)],
    transitions: &TransitionMatrix,
    occupancy: &[f64],
    dispersion: &[f64],
    elbow: Option<&ElbowResult>,
) -> Result<()> {
    create_dir(dir)?;
    let mut w = csv_writer(&dir.join("centroids.csv"))?;
    let mut header = vec!["state".to_string()];
    header.extend(edges.iter().map(|(i, j)| format!("e{}_{}", i + 1, j + 1)));
    w.write_record(&header)?;
    for state in 1..=model.k {
        let mut row = vec![state.to_string()];
        row.extend(model.fit.centroid(state).iter().map(|v| fmt_f64(*v)));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("writing centroids.csv", e))?;

    let mut w = csv_writer(&dir.join("assignments.csv"))?;
    w.write_record(["subject_id", "t", "label"])?;
    for (id, seq) in model.subject_ids.iter().zip(&model.assignments) {
        for (t, label) in seq.iter().enumerate() {
            w.write_record([id.as_str(), &t.to_string(), &label.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io("writing assignments.csv", e))?;

    write_json(&dir.join("transitions.json"), transitions)?;
    write_json(
        &dir.join("occupancy.json"),
        &OccupancyFile {
            k: model.k,
            rates: occupancy.to_vec(),
        },
    )?;
    write_json(
        &dir.join("dispersion.json"),
        &DispersionFile {
            k: model.k,
            per_state: dispersion.to_vec(),
        },
    )?;
    if let Some(elbow) = elbow {
        write_json(&dir.join("elbow.json"), elbow)?;
    }
    Ok(())
}

/// Per-subject label sequences from `assignments.csv`, in file order.
pub fn read_assignments(dir: &Path) -> Result<(Vec<String>, Vec<Vec<usize>>)> {
    let path = dir.join("assignments.csv");
    let mut ids: Vec<String> = Vec::new();
    let mut seqs: Vec<Vec<usize>> = Vec::new();
    for (r, record) in csv_reader(&path)?.records().enumerate() {
        let record = record?;
        let bad = || Error::InvalidInput(format!("{}: malformed row {}", path.display(), r + 1));
        let id = record.get(0).ok_or_else(bad)?;
        let label: usize = record.get(2).ok_or_else(bad)?.parse().map_err(|_| bad())?;
        if ids.last().map(String::as_str) != Some(id) {
            ids.push(id.to_string());
            seqs.push(Vec::new());
        }
        seqs.last_mut().expect("pushed").push(label);
    }
    Ok((ids, seqs))
}

pub const HI_FILES: [&str; 2] = ["hi_map.csv", "hi_top.json"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopRow {
    pub rank: usize,
    pub edge_i: usize,
    pub edge_j: usize,
    pub hi: f64,
    pub sd_bound: f64,
    pub display: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopState {
    pub state: usize,
    pub rows: Vec<TopRow>,
}

pub fn write_heritability(dir: &Path, map: &HeritabilityMap, top_n: usize, clamp: bool) -> Result<()> {
    create_dir(dir)?;
    let mut w = csv_writer(&dir.join("hi_map.csv"))?;
    w.write_record(["state", "edge_i", "edge_j", "gamma_mz", "gamma_dz", "hi", "sd_bound"])?;
    for e in &map.entries {
        let (i, j) = (e.edge.0 + 1, e.edge.1 + 1);
        let mut row = vec![e.state.to_string(), i.to_string(), j.to_string()];
        match e.estimate {
            Some(est) => {
                let hi = if clamp { crate::heritability::clamp_hi(est.hi) } else { est.hi };
                row.extend([est.gamma_mz, est.gamma_dz, hi, est.sd_bound].map(fmt_f64));
            }
            None => row.extend(["NA"; 4].map(String::from)),
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("writing hi_map.csv", e))?;

    let top: Vec<TopState> = (1..=map.k)
        .map(|state| TopState {
            state,
            rows: map
                .top(state, top_n)
                .into_iter()
                .enumerate()
                .map(|(r, e)| {
                    let est = e.estimate.expect("top rows have estimates");
                    TopRow {
                        rank: r + 1,
                        edge_i: e.edge.0 + 1,
                        edge_j: e.edge.1 + 1,
                        hi: if clamp { crate::heritability::clamp_hi(est.hi) } else { est.hi },
                        sd_bound: est.sd_bound,
                        display: format_top_row(e, None, clamp),
                    }
                })
                .collect(),
        })
        .collect();
    write_json(&dir.join("hi_top.json"), &top)
}

pub fn require_files(dir: &Path, names: &[&str]) -> Result<()> {
    for name in names {
        if !dir.join(name).is_file() {
            return Err(Error::IncompleteRun {
                dir: dir.to_path_buf(),
                missing: (*name).to_string(),
            });
        }
    }
    Ok(())
}
