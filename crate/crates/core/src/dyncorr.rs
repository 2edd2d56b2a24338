//! Dynamic correlation estimators: square sliding window (SW), tapered
//! sliding window (TSW) and heat-kernel smoothing (HEAT).
//!
//! All three evaluate the correlation at the T original time points. The
//! windowed estimators read their support from the mirror-reflected circular
//! series; the heat estimator smooths the products `xy`, `x^2`, `y^2` with
//! the cosine-series heat smoother, whose basis already carries the mirror
//! symmetry.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{mirror_reflect, CircularSeries, RoiMatrix};
use crate::spectral::{HeatKernelParams, HeatSmoother};

/// Variance below which a correlation is reported as undefined.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Default Gaussian taper bandwidth for TSW, in TRs.
pub const DEFAULT_TAPER_TR: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Sw,
    Tsw,
    Heat,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Sw, Method::Tsw, Method::Heat];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Sw => "sw",
            Method::Tsw => "tsw",
            Method::Heat => "heat",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sw" => Ok(Method::Sw),
            "tsw" => Ok(Method::Tsw),
            "heat" => Ok(Method::Heat),
            other => Err(Error::InvalidInput(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Square,
    Tapered,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub kind: WindowKind,
    pub size_m: usize,
    /// Gaussian taper bandwidth in TRs; ignored for square windows.
    pub taper_bandwidth: f64,
}

impl WindowSpec {
    pub fn square(size_m: usize) -> Result<Self> {
        Self {
            kind: WindowKind::Square,
            size_m,
            taper_bandwidth: 0.0,
        }
        .validated()
    }

    pub fn tapered(size_m: usize, taper_bandwidth: f64) -> Result<Self> {
        Self {
            kind: WindowKind::Tapered,
            size_m,
            taper_bandwidth,
        }
        .validated()
    }

    fn validated(self) -> Result<Self> {
        if self.size_m < 2 {
            return Err(Error::InvalidInput(format!(
                "window size must be at least 2, got {}",
                self.size_m
            )));
        }
        if self.kind == WindowKind::Tapered
            && !(self.taper_bandwidth > 0.0 && self.taper_bandwidth.is_finite())
        {
            return Err(Error::InvalidInput(format!(
                "taper bandwidth must be positive, got {}",
                self.taper_bandwidth
            )));
        }
        Ok(self)
    }

    /// Half-width of the Gaussian taper support, `ceil(3 * bandwidth)`.
    fn taper_radius(&self) -> usize {
        match self.kind {
            WindowKind::Square => 0,
            WindowKind::Tapered => (3.0 * self.taper_bandwidth).ceil() as usize,
        }
    }
}

/// Weights of a window together with the offset of its first sample
/// relative to the centre index.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub offset: i64,
    pub weights: Vec<f64>,
}

impl Window {
    pub fn new(spec: &WindowSpec) -> Self {
        let m = spec.size_m as i64;
        // W_i = [floor(i - m/2 + 1), floor(i + m/2)]; for integer i the
        // offset is floor(1 - m/2), i.e. -(m/2 - 1) for even m.
        let square_offset = 1 - m / 2 - (m % 2);
        Self {
            offset: square_offset - spec.taper_radius() as i64,
            weights: window_weights(spec),
        }
    }
}

pub fn window_weights(spec: &WindowSpec) -> Vec<f64> {
    let m = spec.size_m;
    let square = vec![1.0 / m as f64; m];
    match spec.kind {
        WindowKind::Square => square,
        WindowKind::Tapered => {
            let r = spec.taper_radius();
            let sigma = spec.taper_bandwidth;
            let gauss: Vec<f64> = (0..=2 * r)
                .map(|k| {
                    let d = k as f64 - r as f64;
                    (-d * d / (2.0 * sigma * sigma)).exp()
                })
                .collect();
            let mut out = vec![0.0; m + 2 * r];
            for (i, sq) in square.iter().enumerate() {
                for (k, g) in gauss.iter().enumerate() {
                    out[i + k] += sq * g;
                }
            }
            let total: f64 = out.iter().sum();
            out.iter_mut().for_each(|w| *w /= total);
            out
        }
    }
}

/// Weighted Pearson correlation of the window centred at `i`.
pub fn windowed_corr(
    x: &CircularSeries,
    y: &CircularSeries,
    spec: &WindowSpec,
    i: i64,
) -> Result<f64> {
    windowed_corr_in(x, y, &Window::new(spec), i)
}

pub fn windowed_corr_in(
    x: &CircularSeries,
    y: &CircularSeries,
    window: &Window,
    i: i64,
) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput(format!(
            "series lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    let start = i + window.offset;
    let (mut mx, mut my) = (0.0, 0.0);
    for (k, w) in window.weights.iter().enumerate() {
        mx += w * x.at(start + k as i64);
        my += w * y.at(start + k as i64);
    }
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (k, w) in window.weights.iter().enumerate() {
        let dx = x.at(start + k as i64) - mx;
        let dy = y.at(start + k as i64) - my;
        sxx += w * dx * dx;
        syy += w * dy * dy;
        sxy += w * dx * dy;
    }
    let index = i.rem_euclid(x.len() as i64) as usize;
    if sxx.sqrt() < VARIANCE_FLOOR || syy.sqrt() < VARIANCE_FLOOR {
        return Err(Error::ZeroVariance { index, edge: None });
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Heat-kernel dynamic correlation of two equally long sample vectors at
/// every grid point, clamped to [-1, 1].
pub fn heat_dyncorr(x: &[f64], y: &[f64], params: &HeatKernelParams) -> Result<Vec<f64>> {
    if params.bandwidth <= 0.0 {
        return Err(Error::InvalidInput("heat bandwidth must be positive".into()));
    }
    let smoother = HeatSmoother::new(x.len(), params)?;
    let mx = HeatMoments::new(&smoother, x);
    let my = HeatMoments::new(&smoother, y);
    let raw = heat_pair_raw(&smoother, x, y, &mx, &my)?;
    Ok(raw.into_iter().map(|r| r.clamp(-1.0, 1.0)).collect())
}

/// Smoothed first and second moments of one signal.
#[derive(Debug, Clone)]
pub struct HeatMoments {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl HeatMoments {
    pub fn new(smoother: &HeatSmoother, x: &[f64]) -> Self {
        let mean = smoother.apply(x);
        let sq: Vec<f64> = x.iter().map(|v| v * v).collect();
        let variance = smoother
            .apply(&sq)
            .iter()
            .zip(&mean)
            .map(|(m2, m)| m2 - m * m)
            .collect();
        Self { mean, variance }
    }

    fn check(&self) -> Result<()> {
        match self.variance.iter().position(|&v| !(v >= VARIANCE_FLOOR)) {
            Some(index) => Err(Error::ZeroVariance { index, edge: None }),
            None => Ok(()),
        }
    }
}

/// Unclamped heat correlation from precomputed single-signal moments.
pub fn heat_pair_raw(
    smoother: &HeatSmoother,
    x: &[f64],
    y: &[f64],
    mx: &HeatMoments,
    my: &HeatMoments,
) -> Result<Vec<f64>> {
    if x.len() != y.len() || x.len() != smoother.time_points() {
        return Err(Error::InvalidInput(format!(
            "expected {} samples, got {} and {}",
            smoother.time_points(),
            x.len(),
            y.len()
        )));
    }
    mx.check()?;
    my.check()?;
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let mxy = smoother.apply(&xy);
    Ok(mxy
        .iter()
        .enumerate()
        .map(|(t, m)| {
            let cov = m - mx.mean[t] * my.mean[t];
            cov / (mx.variance[t].sqrt() * my.variance[t].sqrt())
        })
        .collect())
}

/// Estimator and its parameters, as recorded alongside every output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum EstimatorParams {
    Sw { window: WindowSpec },
    Tsw { window: WindowSpec },
    Heat { kernel: HeatKernelParams },
}

impl EstimatorParams {
    /// Parameters matched at a common FWHM (in TRs) for a T-point scan.
    ///
    /// Window sizes are the FWHM rounded to whole TRs; TSW convolves that
    /// square window with a Gaussian of `taper_tr` TRs.
    pub fn at_fwhm(
        method: Method,
        fwhm_tr: f64,
        time_points: usize,
        degree: Option<usize>,
        taper_tr: f64,
    ) -> Result<Self> {
        if !(fwhm_tr > 0.0 && fwhm_tr.is_finite()) {
            return Err(Error::InvalidInput(format!("fwhm must be positive, got {fwhm_tr}")));
        }
        let m = fwhm_tr.round() as usize;
        Ok(match method {
            Method::Sw => EstimatorParams::Sw {
                window: WindowSpec::square(m)?,
            },
            Method::Tsw => EstimatorParams::Tsw {
                window: WindowSpec::tapered(m, taper_tr)?,
            },
            Method::Heat => EstimatorParams::Heat {
                kernel: HeatKernelParams::from_fwhm(fwhm_tr, time_points, degree)?,
            },
        })
    }

    pub fn method(&self) -> Method {
        match self {
            EstimatorParams::Sw { .. } => Method::Sw,
            EstimatorParams::Tsw { .. } => Method::Tsw,
            EstimatorParams::Heat { .. } => Method::Heat,
        }
    }
}

/// Upper-triangle edge list `(i, j)`, `i < j`, row-major.
pub fn edge_list(regions: usize) -> Vec<(usize, usize)> {
    (0..regions)
        .flat_map(|i| (i + 1..regions).map(move |j| (i, j)))
        .collect()
}

/// Time-indexed correlation matrices of one subject, stored as upper triangles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynCorrSeries {
    pub subject_id: String,
    pub params: EstimatorParams,
    pub time_points: usize,
    pub regions: usize,
    pub edges: Vec<(usize, usize)>,
    /// Row-major `time_points x edges`.
    pub values: Vec<f64>,
    /// Heat estimates that fell outside [-1, 1] before clamping.
    pub clamped: usize,
}

impl DynCorrSeries {
    pub fn method(&self) -> Method {
        self.params.method()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let e = self.edges.len();
        &self.values[t * e..(t + 1) * e]
    }

    pub fn edge_series(&self, edge: usize) -> Vec<f64> {
        (0..self.time_points).map(|t| self.row(t)[edge]).collect()
    }

    /// The same series restricted to `edges` (0-based region pairs), in the
    /// order given.
    pub fn select_edges(&self, edges: &[(usize, usize)]) -> Result<DynCorrSeries> {
        let columns = edges
            .iter()
            .map(|&(i, j)| {
                let key = (i.min(j), i.max(j));
                self.edges.iter().position(|&e| e == key).ok_or_else(|| {
                    Error::InvalidInput(format!("edge ({}, {}) not in the series", i + 1, j + 1))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut values = Vec::with_capacity(self.time_points * columns.len());
        for t in 0..self.time_points {
            let row = self.row(t);
            values.extend(columns.iter().map(|&c| row[c]));
        }
        Ok(DynCorrSeries {
            edges: columns.iter().map(|&c| self.edges[c]).collect(),
            values,
            ..self.clone()
        })
    }

    /// Full symmetric p x p matrix at time index `t`.
    pub fn matrix_at(&self, t: usize) -> Vec<Vec<f64>> {
        let p = self.regions;
        let mut c = vec![vec![0.0; p]; p];
        for (i, row) in c.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        for (&(i, j), &v) in self.edges.iter().zip(self.row(t)) {
            c[i][j] = v;
            c[j][i] = v;
        }
        c
    }
}

enum Engine {
    Window(Window),
    Heat(HeatSmoother),
}

/// An estimator prepared for a fixed scan length; reusable across subjects.
pub struct Estimator {
    params: EstimatorParams,
    time_points: usize,
    engine: Engine,
}

impl Estimator {
    pub fn new(params: EstimatorParams, time_points: usize) -> Result<Self> {
        let engine = match &params {
            EstimatorParams::Sw { window } | EstimatorParams::Tsw { window } => {
                Engine::Window(Window::new(window))
            }
            EstimatorParams::Heat { kernel } => {
                if kernel.bandwidth <= 0.0 {
                    return Err(Error::InvalidInput("heat bandwidth must be positive".into()));
                }
                Engine::Heat(HeatSmoother::new(time_points, kernel)?)
            }
        };
        Ok(Self {
            params,
            time_points,
            engine,
        })
    }

    pub fn params(&self) -> &EstimatorParams {
        &self.params
    }

    /// Dynamic correlation of every region pair at the T original time points.
    pub fn estimate(&self, subject: &RoiMatrix) -> Result<DynCorrSeries> {
        let t = subject.time_points();
        if t != self.time_points {
            return Err(Error::InvalidInput(format!(
                "estimator prepared for {} time points, subject {} has {t}",
                self.time_points, subject.subject_id
            )));
        }
        let edges = edge_list(subject.regions());
        let per_edge: Vec<(Vec<f64>, usize)> = match &self.engine {
            Engine::Window(window) => {
                let circular = subject
                    .columns()
                    .iter()
                    .map(|c| mirror_reflect(c))
                    .collect::<Result<Vec<_>>>()?;
                edges
                    .par_iter()
                    .map(|&(i, j)| {
                        (0..t as i64)
                            .map(|k| windowed_corr_in(&circular[i], &circular[j], window, k))
                            .collect::<Result<Vec<_>>>()
                            .map(|v| (v, 0))
                            .map_err(|e| tag_edge(e, (i, j)))
                    })
                    .collect::<Result<Vec<_>>>()?
            }
            Engine::Heat(smoother) => {
                let moments: Vec<HeatMoments> = subject
                    .columns()
                    .par_iter()
                    .map(|c| HeatMoments::new(smoother, c))
                    .collect();
                edges
                    .par_iter()
                    .map(|&(i, j)| {
                        let raw = heat_pair_raw(
                            smoother,
                            subject.column(i),
                            subject.column(j),
                            &moments[i],
                            &moments[j],
                        )
                        .map_err(|e| tag_edge(e, (i, j)))?;
                        let clamped = raw.iter().filter(|r| r.abs() > 1.0).count();
                        Ok((raw.into_iter().map(|r| r.clamp(-1.0, 1.0)).collect(), clamped))
                    })
                    .collect::<Result<Vec<_>>>()?
            }
        };
        let e = edges.len();
        let mut values = vec![0.0; t * e];
        let mut clamped = 0;
        for (k, (series, c)) in per_edge.iter().enumerate() {
            clamped += c;
            for (time, v) in series.iter().enumerate() {
                values[time * e + k] = *v;
            }
        }
        Ok(DynCorrSeries {
            subject_id: subject.subject_id.clone(),
            params: self.params,
            time_points: t,
            regions: subject.regions(),
            edges,
            values,
            clamped,
        })
    }
}

fn tag_edge(e: Error, edge: (usize, usize)) -> Error {
    match e {
        Error::ZeroVariance { index, .. } => Error::ZeroVariance {
            index,
            edge: Some(edge),
        },
        other => other,
    }
}

pub fn dyncorr_matrix(subject: &RoiMatrix, params: EstimatorParams) -> Result<DynCorrSeries> {
    Estimator::new(params, subject.time_points())?.estimate(subject)
}

/// Sum of absolute successive differences.
pub fn total_variation(series: &[f64]) -> f64 {
    series.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::time_grid;
    use crate::spectral::{kernel_eval, HeatKernelParams};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn square_weights() {
        let w = window_weights(&WindowSpec::square(4).unwrap());
        assert_eq!(w, vec![0.25; 4]);
        assert!(WindowSpec::square(1).is_err());
        assert!(WindowSpec::tapered(10, 0.0).is_err());
    }

    #[test]
    fn window_offsets_follow_floor_convention() {
        // m = 15: [i - 7, i + 7]; m = 4: [i - 1, i + 2]
        assert_eq!(Window::new(&WindowSpec::square(15).unwrap()).offset, -7);
        assert_eq!(Window::new(&WindowSpec::square(4).unwrap()).offset, -1);
        let tapered = Window::new(&WindowSpec::tapered(15, 3.0).unwrap());
        assert_eq!(tapered.offset, -16);
        assert_eq!(tapered.weights.len(), 15 + 18);
    }

    /// Direct convolution of a box with a truncated Gaussian, written independently.
    fn tapered_oracle(m: usize, sigma: f64) -> Vec<f64> {
        let r = (3.0 * sigma).ceil() as i64;
        let len = m as i64 + 2 * r;
        let mut w: Vec<f64> = (0..len)
            .map(|n| {
                // position n in the output overlaps box cells b with |n - r - b| <= r
                (0..m as i64)
                    .filter(|b| (n - r - b).abs() <= r)
                    .map(|b| {
                        let d = (n - r - b) as f64;
                        (-(d * d) / (2.0 * sigma * sigma)).exp()
                    })
                    .sum::<f64>()
            })
            .collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= s);
        w
    }

    #[test]
    fn tapered_weights_match_oracle() {
        for &(m, sigma) in &[(15usize, 3.0), (20, 3.0), (6, 1.5)] {
            let w = window_weights(&WindowSpec::tapered(m, sigma).unwrap());
            let oracle = tapered_oracle(m, sigma);
            assert_eq!(w.len(), oracle.len());
            assert_eq!(w.len(), m + 2 * (3.0 * sigma).ceil() as usize);
            for (a, b) in w.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-15);
            }
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for k in 0..w.len() {
                assert!((w[k] - w[w.len() - 1 - k]).abs() < 1e-15);
                assert!(w[k] > 0.0);
            }
            let peak = w.len() / 2;
            assert!(w[..=peak].windows(2).all(|p| p[1] >= p[0]));
            assert!(w[peak..].windows(2).all(|p| p[1] <= p[0]));
        }
    }

    #[test]
    fn windowed_perfect_correlations() {
        let x = mirror_reflect(&noise(40, 1)).unwrap();
        let neg: Vec<f64> = x.values()[..40].iter().map(|v| -v + 7.0).collect();
        let y = mirror_reflect(&neg).unwrap();
        let spec = WindowSpec::square(8).unwrap();
        for i in [0, 5, 39] {
            assert!((windowed_corr(&x, &x, &spec, i).unwrap() - 1.0).abs() < 1e-12);
            assert!((windowed_corr(&x, &y, &spec, i).unwrap() + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn windowed_matches_direct_pearson() {
        let xs = noise(50, 2);
        let ys = noise(50, 3);
        let x = mirror_reflect(&xs).unwrap();
        let y = mirror_reflect(&ys).unwrap();
        let spec = WindowSpec::square(8).unwrap();
        for i in 0..50i64 {
            // brute force: collect the window contents then textbook Pearson
            let lo = (i as f64 - 8.0 / 2.0 + 1.0).floor() as i64;
            let hi = (i as f64 + 8.0 / 2.0).floor() as i64;
            let a: Vec<f64> = (lo..=hi).map(|k| x.at(k)).collect();
            let b: Vec<f64> = (lo..=hi).map(|k| y.at(k)).collect();
            assert_eq!(a.len(), 8);
            let n = a.len() as f64;
            let ma = a.iter().sum::<f64>() / n;
            let mb = b.iter().sum::<f64>() / n;
            let cov: f64 = a.iter().zip(&b).map(|(p, q)| (p - ma) * (q - mb)).sum();
            let va: f64 = a.iter().map(|p| (p - ma).powi(2)).sum();
            let vb: f64 = b.iter().map(|q| (q - mb).powi(2)).sum();
            let expected = cov / (va * vb).sqrt();
            let got = windowed_corr(&x, &y, &spec, i).unwrap();
            assert!((got - expected).abs() < 1e-12, "i={i}: {got} vs {expected}");
        }
    }

    #[test]
    fn windowed_zero_variance() {
        let x = mirror_reflect(&[1.0; 20]).unwrap();
        let y = mirror_reflect(&noise(20, 4)).unwrap();
        let spec = WindowSpec::square(5).unwrap();
        assert!(matches!(
            windowed_corr(&x, &y, &spec, 3),
            Err(Error::ZeroVariance { index: 3, .. })
        ));
    }

    #[test]
    fn windowed_is_circular() {
        let x = mirror_reflect(&noise(30, 5)).unwrap();
        let y = mirror_reflect(&noise(30, 6)).unwrap();
        let spec = WindowSpec::tapered(10, 3.0).unwrap();
        for i in 0..60 {
            let a = windowed_corr(&x, &y, &spec, i).unwrap();
            let b = windowed_corr(&x, &y, &spec, i + 60).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn heat_identical_and_constant() {
        let x: Vec<f64> = noise(100, 7);
        let params = HeatKernelParams::from_fwhm(15.0, 100, None).unwrap();
        let smoother = HeatSmoother::new(100, &params).unwrap();
        let m = HeatMoments::new(&smoother, &x);
        let raw = heat_pair_raw(&smoother, &x, &x, &m, &m).unwrap();
        assert!(raw.iter().all(|r| (r - 1.0).abs() < 1e-9));
        let c = vec![0.5; 100];
        assert!(matches!(
            heat_dyncorr(&x, &c, &params),
            Err(Error::ZeroVariance { .. })
        ));
    }

    /// Evaluates the heat correlation by direct trapezoid quadrature of
    /// the kernel against the continuous signals.
    fn quadrature_corr(
        f: &dyn Fn(f64) -> f64,
        g: &dyn Fn(f64) -> f64,
        s: f64,
        degree: usize,
        t: f64,
    ) -> f64 {
        let n = 10_001;
        let h = 1.0 / (n - 1) as f64;
        let mut acc = [0.0; 5];
        for i in 0..n {
            let tp = i as f64 * h;
            let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 } * h;
            let k = kernel_eval(s, degree, t, tp).unwrap() * w;
            let (a, b) = (f(tp), g(tp));
            acc[0] += k * a;
            acc[1] += k * b;
            acc[2] += k * a * b;
            acc[3] += k * a * a;
            acc[4] += k * b * b;
        }
        let vx = acc[3] - acc[0] * acc[0];
        let vy = acc[4] - acc[1] * acc[1];
        (acc[2] - acc[0] * acc[1]) / (vx * vy).sqrt()
    }

    #[test]
    fn heat_matches_quadrature_on_band_limited_pair() {
        use std::f64::consts::PI;
        let t_points = 120;
        let f = |t: f64| 0.5 + 0.3 * (PI * t).cos() + 0.2 * (3.0 * PI * t).cos() - 0.1 * (7.0 * PI * t).cos();
        let g = |t: f64| 0.4 - 0.25 * (2.0 * PI * t).cos() + 0.2 * (3.0 * PI * t).cos() + 0.05 * (9.0 * PI * t).cos();
        let grid = time_grid(t_points);
        let x: Vec<f64> = grid.iter().map(|&t| f(t)).collect();
        let y: Vec<f64> = grid.iter().map(|&t| g(t)).collect();
        let params = HeatKernelParams::from_bandwidth(2.3e-4, t_points - 1, t_points).unwrap();
        let rho = heat_dyncorr(&x, &y, &params).unwrap();
        for (j, &t) in grid.iter().enumerate().step_by(7) {
            let q = quadrature_corr(&f, &g, 2.3e-4, t_points - 1, t);
            assert!((rho[j] - q).abs() < 1e-4, "t={t}: {} vs {q}", rho[j]);
        }
    }

    fn subject(columns: Vec<Vec<f64>>) -> RoiMatrix {
        RoiMatrix::from_columns("s", 2.0, columns).unwrap()
    }

    #[test]
    fn matrix_reduces_to_pair_for_two_regions() {
        let x = noise(60, 8);
        let y = noise(60, 9);
        let s = subject(vec![x.clone(), y.clone()]);
        let params = HeatKernelParams::from_fwhm(10.0, 60, None).unwrap();
        let series = dyncorr_matrix(&s, EstimatorParams::Heat { kernel: params }).unwrap();
        assert_eq!(series.edge_series(0), heat_dyncorr(&x, &y, &params).unwrap());

        let spec = WindowSpec::square(8).unwrap();
        let series = dyncorr_matrix(&s, EstimatorParams::Sw { window: spec }).unwrap();
        let (cx, cy) = (mirror_reflect(&x).unwrap(), mirror_reflect(&y).unwrap());
        for t in 0..60 {
            assert_eq!(series.row(t)[0], windowed_corr(&cx, &cy, &spec, t as i64).unwrap());
        }
    }

    #[test]
    fn reconstructed_matrices_and_duplicates() {
        let a = noise(80, 10);
        let cols = vec![a.clone(), noise(80, 11), a, noise(80, 12)];
        let s = subject(cols);
        for method in Method::ALL {
            let params = EstimatorParams::at_fwhm(method, 12.0, 80, None, DEFAULT_TAPER_TR).unwrap();
            let series = dyncorr_matrix(&s, params).unwrap();
            assert_eq!(series.edges.len(), 6);
            for t in 0..80 {
                let c = series.matrix_at(t);
                for i in 0..4 {
                    assert_eq!(c[i][i], 1.0);
                    for j in 0..4 {
                        assert_eq!(c[i][j], c[j][i]);
                        assert!((-1.0..=1.0).contains(&c[i][j]));
                    }
                }
                // regions 0 and 2 are copies
                assert!((c[0][2] - 1.0).abs() < 1e-9, "{method}: {}", c[0][2]);
            }
        }
    }

    #[test]
    fn zero_variance_is_tagged_with_edge() {
        let s = subject(vec![noise(40, 13), vec![1.0; 40], noise(40, 14)]);
        for method in Method::ALL {
            let params = EstimatorParams::at_fwhm(method, 8.0, 40, None, DEFAULT_TAPER_TR).unwrap();
            match dyncorr_matrix(&s, params) {
                Err(Error::ZeroVariance { edge: Some((0, 1)), .. }) => {}
                other => panic!("{method}: {other:?}"),
            }
        }
    }

    #[test]
    fn total_variation_simple() {
        assert_eq!(total_variation(&[0.0, 1.0, 0.5, 0.5]), 1.5);
        assert_eq!(total_variation(&[2.0]), 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn affine_invariance(seed in 0u64..1000, a in 0.1f64..20.0, b in -10.0f64..10.0) {
            let x = noise(70, seed);
            let y = noise(70, seed + 5000);
            let xs: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            for method in Method::ALL {
                let params = EstimatorParams::at_fwhm(method, 10.0, 70, None, DEFAULT_TAPER_TR).unwrap();
                let base = dyncorr_matrix(&subject(vec![x.clone(), y.clone()]), params).unwrap();
                let moved = dyncorr_matrix(&subject(vec![xs.clone(), y.clone()]), params).unwrap();
                for (p, q) in base.values.iter().zip(&moved.values) {
                    prop_assert!((p - q).abs() < 1e-10, "{}: {} vs {}", method, p, q);
                }
            }
        }
    }
}
