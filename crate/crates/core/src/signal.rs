//! Region time series, unit rescaling and mirror reflection onto the circle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One subject's region-averaged signals: T time points by p regions,
/// stored column-wise (one vector per region).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiMatrix {
    pub subject_id: String,
    pub tr_seconds: f64,
    columns: Vec<Vec<f64>>,
}

impl RoiMatrix {
    pub const MIN_TIME_POINTS: usize = 4;
    pub const MIN_REGIONS: usize = 2;

    pub fn from_columns(
        subject_id: impl Into<String>,
        tr_seconds: f64,
        columns: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if !(tr_seconds > 0.0 && tr_seconds.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "tr_seconds must be positive, got {tr_seconds}"
            )));
        }
        if columns.len() < Self::MIN_REGIONS {
            return Err(Error::InvalidInput(format!(
                "need at least {} regions, got {}",
                Self::MIN_REGIONS,
                columns.len()
            )));
        }
        let t = columns[0].len();
        if t < Self::MIN_TIME_POINTS {
            return Err(Error::InvalidInput(format!(
                "need at least {} time points, got {t}",
                Self::MIN_TIME_POINTS
            )));
        }
        for (c, col) in columns.iter().enumerate() {
            if col.len() != t {
                return Err(Error::InvalidInput(format!(
                    "region {c} has {} time points, expected {t}",
                    col.len()
                )));
            }
            if let Some(row) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { row, column: c });
            }
        }
        Ok(Self {
            subject_id: subject_id.into(),
            tr_seconds,
            columns,
        })
    }

    /// Builds from row-major data (one inner vector per time point).
    pub fn from_rows(
        subject_id: impl Into<String>,
        tr_seconds: f64,
        rows: &[Vec<f64>],
    ) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != p) {
            return Err(Error::InvalidInput(format!(
                "row {bad} has {} values, expected {p}",
                rows[bad].len()
            )));
        }
        let columns = (0..p)
            .map(|c| rows.iter().map(|r| r[c]).collect())
            .collect();
        Self::from_columns(subject_id, tr_seconds, columns)
    }

    pub fn time_points(&self) -> usize {
        self.columns[0].len()
    }

    pub fn regions(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, region: usize) -> &[f64] {
        &self.columns[region]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    /// Rescales every region independently onto [0, 1].
    pub fn rescaled(&self) -> Result<Self> {
        let columns = self
            .columns
            .iter()
            .enumerate()
            .map(|(c, col)| {
                rescale_unit(col).map_err(|e| match e {
                    Error::DegenerateSignal { .. } => Error::DegenerateSignal { column: c },
                    other => other,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            subject_id: self.subject_id.clone(),
            tr_seconds: self.tr_seconds,
            columns,
        })
    }
}

/// Affine map of a column onto [0, 1]: `(x - min) / (max - min)`.
pub fn rescale_unit(column: &[f64]) -> Result<Vec<f64>> {
    if column.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "rescaling needs at least 2 values, got {}",
            column.len()
        )));
    }
    if let Some(row) = column.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { row, column: 0 });
    }
    let (min, max) = column
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = max - min;
    if range <= 0.0 {
        return Err(Error::DegenerateSignal { column: 0 });
    }
    Ok(column.iter().map(|&v| (v - min) / range).collect())
}

/// A length-2T series on the circle built by appending the time-reversed signal.
#[derive(Debug, Clone, PartialEq)]
pub struct CircularSeries {
    values: Vec<f64>,
    origin_length: usize,
}

impl CircularSeries {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn origin_length(&self) -> usize {
        self.origin_length
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Value at an arbitrary integer index, taken modulo 2T.
    pub fn at(&self, index: i64) -> f64 {
        let n = self.values.len() as i64;
        self.values[index.rem_euclid(n) as usize]
    }
}

pub fn mirror_reflect(x: &[f64]) -> Result<CircularSeries> {
    let t = x.len();
    if t < 2 {
        return Err(Error::InvalidInput(format!(
            "mirror reflection needs at least 2 points, got {t}"
        )));
    }
    let mut values = Vec::with_capacity(2 * t);
    values.extend_from_slice(x);
    values.extend(x.iter().rev());
    Ok(CircularSeries {
        values,
        origin_length: t,
    })
}

/// Sample positions on [0, 1]: sample j sits at j / (T - 1).
pub fn time_grid(t: usize) -> Vec<f64> {
    match t {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => {
            let last = (t - 1) as f64;
            (0..t).map(|j| j as f64 / last).collect()
        }
    }
}
