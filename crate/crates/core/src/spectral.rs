//! Cosine-series expansion on the unit interval, least-squares coefficient
//! fitting and heat-kernel smoothing.
//!
//! A signal sampled on [0, 1] is expanded in the basis `psi_0 = 1`,
//! `psi_l(t) = sqrt(2) cos(l pi t)`. Diffusing it for time `s` multiplies the
//! l-th coefficient by `exp(-l^2 pi^2 s)`. The basis is even about t = 1, so
//! the same expansion describes the mirror-reflected signal on the circle of
//! circumference 2.

use std::f64::consts::{LN_2, PI, SQRT_2};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::time_grid;

/// Relative pivot size below which the cosine design matrix is treated as singular.
const RANK_TOLERANCE: f64 = 1e-10;

pub fn basis_eval(l: usize, t: f64) -> Result<f64> {
    if !(0.0..=2.0).contains(&t) {
        return Err(Error::Domain(t));
    }
    let t = if t > 1.0 { 2.0 - t } else { t };
    Ok(basis_unchecked(l, t))
}

#[inline]
fn basis_unchecked(l: usize, t: f64) -> f64 {
    if l == 0 {
        1.0
    } else {
        SQRT_2 * (l as f64 * PI * t).cos()
    }
}

pub fn heat_weight(l: usize, s: f64) -> f64 {
    let l = l as f64;
    (-l * l * PI * PI * s).exp()
}

/// Truncated heat kernel `K_s(t, t')` on the circle [0, 2].
pub fn kernel_eval(s: f64, degree: usize, t: f64, t_prime: f64) -> Result<f64> {
    if !(0.0..=2.0).contains(&t) {
        return Err(Error::Domain(t));
    }
    if !(0.0..=2.0).contains(&t_prime) {
        return Err(Error::Domain(t_prime));
    }
    Ok((0..=degree)
        .map(|l| heat_weight(l, s) * basis_unchecked(l, t) * basis_unchecked(l, t_prime))
        .sum())
}

/// Bandwidth whose heat kernel has the given FWHM (in TRs) on a T-point scan.
///
/// Uses the small-s Gaussian limit, where the kernel's FWHM on the unit
/// interval is `2 sqrt(4 ln2 s)`.
pub fn fwhm_to_bandwidth(fwhm_tr: f64, time_points: usize) -> f64 {
    let width = fwhm_tr / time_points as f64;
    width * width / (16.0 * LN_2)
}

pub fn bandwidth_to_fwhm(s: f64, time_points: usize) -> f64 {
    2.0 * (4.0 * LN_2 * s).sqrt() * time_points as f64
}

/// Numerically measures the full width at half maximum of `K_s(center, .)`
/// on [0, 2], in unit-interval coordinates.
pub fn measure_kernel_fwhm(s: f64, degree: usize, center: f64) -> Result<f64> {
    let peak = kernel_eval(s, degree, center, center)?;
    let half = peak / 2.0;
    let k = |t: f64| kernel_eval(s, degree, center, t.clamp(0.0, 2.0)).unwrap_or(f64::NAN);
    // walk outwards until the kernel drops below half maximum, then bisect
    let crossing = |dir: f64| -> Result<f64> {
        let step = 1e-4;
        let mut inner = center;
        let mut outer = center + dir * step;
        while k(outer) > half {
            inner = outer;
            outer += dir * step;
            if !(0.0..=2.0).contains(&outer) {
                return Err(Error::InvalidInput(
                    "kernel never falls to half maximum".into(),
                ));
            }
        }
        for _ in 0..60 {
            let mid = 0.5 * (inner + outer);
            if k(mid) > half {
                inner = mid;
            } else {
                outer = mid;
            }
        }
        Ok(0.5 * (inner + outer))
    };
    let right = crossing(1.0)?;
    let left = crossing(-1.0)?;
    Ok(right - left)
}

/// Heat-kernel parameters: diffusion time, expansion degree and the FWHM they imply.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatKernelParams {
    pub bandwidth: f64,
    pub degree: usize,
    pub fwhm_tr: f64,
}

impl HeatKernelParams {
    /// Parameters for a T-point scan at the given FWHM; degree defaults to T - 1.
    pub fn from_fwhm(fwhm_tr: f64, time_points: usize, degree: Option<usize>) -> Result<Self> {
        if !(fwhm_tr > 0.0 && fwhm_tr.is_finite()) {
            return Err(Error::InvalidInput(format!("fwhm must be positive, got {fwhm_tr}")));
        }
        if time_points < 2 {
            return Err(Error::InvalidInput("need at least 2 time points".into()));
        }
        Ok(Self {
            bandwidth: fwhm_to_bandwidth(fwhm_tr, time_points),
            degree: degree.unwrap_or(time_points - 1),
            fwhm_tr,
        })
    }

    pub fn from_bandwidth(bandwidth: f64, degree: usize, time_points: usize) -> Result<Self> {
        if !(bandwidth >= 0.0 && bandwidth.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "bandwidth must be nonnegative, got {bandwidth}"
            )));
        }
        Ok(Self {
            bandwidth,
            degree,
            fwhm_tr: bandwidth_to_fwhm(bandwidth, time_points),
        })
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..=self.degree).map(|l| heat_weight(l, self.bandwidth)).collect()
    }
}

/// Cosine-series coefficients of one signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralModel {
    pub coefficients: Vec<f64>,
    pub degree: usize,
    /// Diffusion time already applied to the coefficients.
    pub bandwidth: f64,
}

impl SpectralModel {
    /// The model after additional diffusion for time `s`.
    pub fn diffused(&self, s: f64) -> Self {
        Self {
            coefficients: self
                .coefficients
                .iter()
                .enumerate()
                .map(|(l, c)| heat_weight(l, s) * c)
                .collect(),
            degree: self.degree,
            bandwidth: self.bandwidth + s,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.coefficients
            .iter()
            .enumerate()
            .map(|(l, c)| c * basis_unchecked(l, t))
            .sum()
    }

    pub fn energy(&self) -> f64 {
        self.coefficients.iter().map(|c| c * c).sum()
    }
}

/// Evaluates `h(t, s) = sum_l exp(-l^2 pi^2 s) c_l psi_l(t)` at each point.
pub fn smooth(model: &SpectralModel, s: f64, points: &[f64]) -> Result<Vec<f64>> {
    if let Some(&bad) = points.iter().find(|t| !(0.0..=2.0).contains(*t)) {
        return Err(Error::Domain(bad));
    }
    let diffused = model.diffused(s);
    Ok(points
        .iter()
        .map(|&t| diffused.eval(if t > 1.0 { 2.0 - t } else { t }))
        .collect())
}

/// Cosine design matrix on the uniform T-point grid with its least-squares solver.
///
/// The solve goes through a QR factorization; the grid-sampled cosines are
/// only approximately orthogonal, so projection by inner products is not used.
#[derive(Debug, Clone)]
pub struct CosineBasis {
    degree: usize,
    design: DMatrix<f64>,
    /// (L+1) x T least-squares solution operator `R^-1 Q^T`.
    solver: DMatrix<f64>,
}

impl CosineBasis {
    pub fn new(time_points: usize, degree: usize) -> Result<Self> {
        if time_points < degree + 1 || time_points < 2 {
            return Err(Error::RankDeficient {
                degree,
                samples: time_points,
            });
        }
        let grid = time_grid(time_points);
        let design = DMatrix::from_fn(time_points, degree + 1, |j, l| basis_unchecked(l, grid[j]));
        let qr = design.clone().qr();
        let r = qr.r();
        let diag_max = r.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let diag_min = r.diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        if diag_max == 0.0 || diag_min / diag_max < RANK_TOLERANCE {
            return Err(Error::RankDeficient {
                degree,
                samples: time_points,
            });
        }
        let qt = qr.q().transpose();
        let solver = r.solve_upper_triangular(&qt).ok_or(Error::RankDeficient {
            degree,
            samples: time_points,
        })?;
        Ok(Self {
            degree,
            design,
            solver,
        })
    }

    pub fn time_points(&self) -> usize {
        self.design.nrows()
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn fit(&self, samples: &[f64]) -> Result<SpectralModel> {
        if samples.len() != self.time_points() {
            return Err(Error::InvalidInput(format!(
                "expected {} samples, got {}",
                self.time_points(),
                samples.len()
            )));
        }
        let b = DVector::from_column_slice(samples);
        let c = &self.solver * b;
        Ok(SpectralModel {
            coefficients: c.iter().copied().collect(),
            degree: self.degree,
            bandwidth: 0.0,
        })
    }

    /// Linear operator mapping grid samples to their diffused values on the same grid.
    pub fn smoother(&self, s: f64) -> HeatSmoother {
        let mut weighted = self.solver.clone();
        for (l, mut row) in weighted.row_iter_mut().enumerate() {
            row *= heat_weight(l, s);
        }
        HeatSmoother {
            bandwidth: s,
            matrix: &self.design * weighted,
        }
    }
}

/// Least-squares fit of a degree-L cosine series to samples on the uniform grid.
pub fn fit_coefficients(samples: &[f64], degree: usize) -> Result<SpectralModel> {
    CosineBasis::new(samples.len(), degree)?.fit(samples)
}

/// Precomputed T x T matrix for fit-then-diffuse-then-evaluate on the sample grid.
#[derive(Debug, Clone)]
pub struct HeatSmoother {
    bandwidth: f64,
    matrix: DMatrix<f64>,
}

impl HeatSmoother {
    pub fn new(time_points: usize, params: &HeatKernelParams) -> Result<Self> {
        Ok(CosineBasis::new(time_points, params.degree)?.smoother(params.bandwidth))
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn time_points(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn apply(&self, samples: &[f64]) -> Vec<f64> {
        let n = self.time_points();
        debug_assert_eq!(samples.len(), n);
        let mut out = vec![0.0; n];
        // column-major storage: accumulate column by column
        for (j, &v) in samples.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let col = self.matrix.column(j);
            for (o, m) in out.iter_mut().zip(col.iter()) {
                *o += m * v;
            }
        }
        out
    }
}

/// Samples `K_s(t0, t')` at `n` evenly spaced points of [0, 2] for plotting.
pub fn kernel_profile(s: f64, degree: usize, t0: f64, n: usize) -> Result<Vec<(f64, f64)>> {
    let n = n.max(2);
    (0..n)
        .map(|i| {
            let tp = 2.0 * i as f64 / (n - 1) as f64;
            kernel_eval(s, degree, t0, tp).map(|k| (tp, k))
        })
        .collect()
}
