use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate signal: column {column} is constant")]
    DegenerateSignal { column: usize },

    #[error("non-finite value at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },

    #[error("point t={0} outside the circle domain [0, 2]")]
    Domain(f64),

    #[error("design matrix is rank deficient (degree {degree}, {samples} samples)")]
    RankDeficient { degree: usize, samples: usize },

    #[error("zero variance at t index {index}{}", edge.map(|(i, j)| format!(" on edge ({i}, {j})")).unwrap_or_default())]
    ZeroVariance {
        index: usize,
        edge: Option<(usize, usize)>,
    },

    #[error("matrix is not symmetric: |C[{i}][{j}] - C[{j}][{i}]| = {gap:e}")]
    AsymmetricInput { i: usize, j: usize, gap: f64 },

    #[error("empty input")]
    EmptyInput,

    #[error("k = {k} exceeds the number of points {n}")]
    TooManyClusters { k: usize, n: usize },

    #[error("state label {label} outside 1..={k}")]
    LabelOutOfRange { label: usize, k: usize },

    #[error("state {state} has fewer than 2 assigned points")]
    EmptyState { state: usize },

    #[error("target matrix is not positive semidefinite (eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("edge ({i}, {j}) has {available} usable pairs, need at least 3")]
    InsufficientPairs { i: usize, j: usize, available: usize },

    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("run directory {} is incomplete: missing {}", .dir.display(), .missing)]
    IncompleteRun { dir: PathBuf, missing: String },

    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("subject {subject}: {source}")]
    Subject {
        subject: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn for_subject(self, subject: &str) -> Self {
        Error::Subject {
            subject: subject.to_string(),
            source: Box::new(self),
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }
}
