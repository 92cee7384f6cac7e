//! Separable exponential covariance: theoretical summaries and their
//! minimum-contrast fits.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::DMatrix;
use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::data::{Raster, TimeRange};
use crate::error::{Error, Result};
use crate::fft2::Fft2;
use crate::glm::{build_design, TemporalGlmFit};
use crate::optim::nelder_mead;
use crate::summary::{AutocovCurve, PcfCurve};

/// `C(u, v) = sigma2 * exp(-u/phi) * exp(-v/theta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceParams {
    pub sigma2: f64,
    pub phi: f64,
    pub theta: f64,
}

impl CovarianceParams {
    pub fn new(sigma2: f64, phi: f64, theta: f64) -> Result<Self> {
        let p = Self { sigma2, phi, theta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        // sigma2 = 0 is the Poisson limit and is accepted
        if !(self.sigma2 >= 0.0 && self.sigma2.is_finite()) || !ok(self.phi) || !ok(self.theta) {
            return Err(Error::domain(format!(
                "invalid covariance parameters {self:?}"
            )));
        }
        Ok(())
    }

    /// Mean of the Gaussian field that makes `E exp(Z) = 1`.
    pub fn mean(&self) -> f64 {
        -0.5 * self.sigma2
    }

    pub fn spatial_corr(&self, u: f64) -> f64 {
        (-u / self.phi).exp()
    }

    pub fn temporal_corr(&self, v: f64) -> f64 {
        (-v.abs() / self.theta).exp()
    }
}

/// `g(u) = exp(sigma2 * exp(-u/phi))`.
pub fn theoretical_pcf(u: f64, sigma2: f64, phi: f64) -> f64 {
    (sigma2 * (-u / phi).exp()).exp()
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WEIGHTS_K: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_0,
];
const GK_WEIGHTS_G: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// 15-point Kronrod estimate with the embedded 7-point Gauss error estimate.
fn gk15(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * GK_WEIGHTS_K[7];
    let mut g = fc * GK_WEIGHTS_G[3];
    for i in 0..7 {
        let x = h * GK_NODES[i];
        let s = f(c - x) + f(c + x);
        k += GK_WEIGHTS_K[i] * s;
        if i % 2 == 1 {
            g += GK_WEIGHTS_G[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive Gauss-Kronrod quadrature to relative tolerance `tol`.
pub(crate) fn integrate(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let mut intervals = vec![{
        let (v, e) = gk15(f, a, b);
        (a, b, v, e)
    }];
    for _ in 0..2000 {
        let total: f64 = intervals.iter().map(|i| i.2).sum();
        let err: f64 = intervals.iter().map(|i| i.3).sum();
        if err <= tol * total.abs().max(f64::MIN_POSITIVE) || err < 1e-300 {
            return Ok(total);
        }
        let worst = (0..intervals.len())
            .max_by(|&x, &y| intervals[x].3.total_cmp(&intervals[y].3))
            .expect("non-empty");
        let (lo, hi, _, _) = intervals.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = gk15(f, lo, mid);
        let (v2, e2) = gk15(f, mid, hi);
        intervals.push((lo, mid, v1, e1));
        intervals.push((mid, hi, v2, e2));
    }
    let total: f64 = intervals.iter().map(|i| i.2).sum();
    let err: f64 = intervals.iter().map(|i| i.3).sum();
    Err(Error::Quadrature {
        achieved: err / total.abs().max(f64::MIN_POSITIVE),
    })
}

/// Theoretical spatio-temporal K-function. Temporal lags are counted on both
/// sides, so the Poisson case gives `2 pi a^2 b`, matching the estimator.
pub fn theoretical_k(a: f64, b: f64, params: &CovarianceParams) -> Result<f64> {
    if a < 0.0 || b < 0.0 {
        return Err(Error::domain("K lags must be non-negative"));
    }
    if a == 0.0 || b == 0.0 {
        return Ok(0.0);
    }
    let mut inner_err = None;
    let mut outer = |u: f64| {
        let c = params.sigma2 * params.spatial_corr(u);
        let mut g = |v: f64| (c * params.temporal_corr(v)).exp();
        match integrate(&mut g, 0.0, b, 1e-12) {
            Ok(v) => u * v,
            Err(e) => {
                inner_err = Some(e);
                f64::NAN
            }
        }
    };
    let v = integrate(&mut outer, 0.0, a, 1e-11)?;
    if let Some(e) = inner_err {
        return Err(e);
    }
    Ok(4.0 * PI * v)
}

/// Spatial double sum behind the temporal covariance of daily totals,
/// precomputed from the density raster: for every cell offset the lag
/// distance and `sum_c lambda0(c) lambda0(c + offset) dA^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalCovModel {
    distances: Vec<f64>,
    weights: Vec<f64>,
    /// `mean_t lambda1(t) lambda1(t - v)` for `v = 0, 1, ...`.
    pub lambda_products: Vec<f64>,
}

impl TemporalCovModel {
    /// `density` must integrate to one over its mask. `lambda1` is the daily
    /// temporal intensity over the fitting range.
    pub fn new(density: &Raster, lambda1: &[f64]) -> Result<Self> {
        check_normalized(density)?;
        let (distances, weights) = offset_classes(density);
        let n = lambda1.len();
        let lambda_products = (0..n)
            .map(|v| (v..n).map(|t| lambda1[t] * lambda1[t - v]).sum::<f64>() / (n - v) as f64)
            .collect();
        Ok(Self {
            distances,
            weights,
            lambda_products,
        })
    }

    /// `sum sum lambda0 lambda0 exp(sigma2 r_phi(d) r_theta(v)) dA^2 - 1`.
    pub fn spatial_factor(&self, v: f64, params: &CovarianceParams) -> f64 {
        let rt = params.temporal_corr(v);
        let s: f64 = self
            .distances
            .iter()
            .zip(&self.weights)
            .map(|(&d, &w)| w * (params.sigma2 * params.spatial_corr(d) * rt).exp_m1())
            .sum();
        s
    }

    /// Time-averaged theoretical autocovariance at integer lag `v`.
    pub fn autocov(&self, v: usize, params: &CovarianceParams) -> f64 {
        self.lambda_products.get(v).copied().unwrap_or(f64::NAN)
            * self.spatial_factor(v as f64, params)
    }

    /// Power-series coefficients `a_k` with
    /// `spatial_factor(v) = sum_k a_k r_theta(v)^k` for fixed `sigma2`, `phi`.
    pub fn series(&self, sigma2: f64, phi: f64) -> Vec<f64> {
        let total = sigma2.exp_m1().max(f64::MIN_POSITIVE);
        let mut coef = Vec::new();
        let mut pow: Vec<f64> = self.distances.iter().map(|&d| (-d / phi).exp()).collect();
        let base = pow.clone();
        let mut fact = 1.0;
        for k in 1..=400 {
            fact *= sigma2 / k as f64;
            let s: f64 = pow.iter().zip(&self.weights).map(|(r, w)| r * w).sum();
            coef.push(fact * s);
            if fact < 1e-17 * total {
                break;
            }
            pow.iter_mut().zip(&base).for_each(|(p, b)| *p *= b);
        }
        coef
    }
}

fn eval_series(coef: &[f64], x: f64) -> f64 {
    coef.iter().rev().fold(0.0, |acc, &c| (acc + c) * x)
}

/// First-order bias of the empirical autocovariance when `lambda1` is a
/// log-linear Poisson fit to the same counts: the fitted products
/// `lambda1_hat(t) lambda1_hat(t-v)` carry `Cov(lambda1_hat(t), lambda1_hat(t-v))`,
/// which depends on the covariance model through the sandwich variance of the
/// coefficients.
#[derive(Debug, Clone)]
pub struct MeanCorrection {
    /// Rows `lambda1(t) I^-1 x_t`.
    h: DMatrix<f64>,
    /// Fisher information `X' diag(lambda1) X`.
    info: DMatrix<f64>,
    /// `sum_t y_t y_{t-v}'` with `y_t = lambda1(t) x_t`.
    lagged: Vec<DMatrix<f64>>,
}

impl MeanCorrection {
    /// `x` holds one covariate row per day and `fitted` the fitted means.
    pub fn new(x: &DMatrix<f64>, fitted: &[f64]) -> Result<Self> {
        let (n, p) = x.shape();
        if fitted.len() != n || n == 0 {
            return Err(Error::Dimension(format!(
                "{n} design rows but {} fitted values",
                fitted.len()
            )));
        }
        let y = DMatrix::from_fn(n, p, |t, j| fitted[t] * x[(t, j)]);
        let info = x.transpose() * &y;
        let inv = info
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::domain("singular information matrix"))?;
        let h = &y * &inv;
        let lagged = (0..n)
            .map(|v| {
                let a = y.rows(v, n - v);
                let b = y.rows(0, n - v);
                a.transpose() * b
            })
            .collect();
        Ok(Self { h, info, lagged })
    }

    /// Rebuilds the design of `fit` over its fitting days.
    pub fn from_fit(fit: &TemporalGlmFit) -> Result<Self> {
        let (first, last) = match (fit.days.first(), fit.days.last()) {
            (Some(&a), Some(&b)) => (a, b),
            _ => return Err(Error::domain("GLM fit has no days")),
        };
        let design = build_design(TimeRange::new(first, last)?, &fit.options)?;
        Self::new(&design.x, &fit.fitted)
    }

    pub fn n_days(&self) -> usize {
        self.h.nrows()
    }

    /// Expected `mean_t Cov(lambda1_hat(t), lambda1_hat(t-v))` for each lag,
    /// given `spatial[v]` for `v = 0..n_days`.
    pub fn bias(&self, spatial: &[f64], lags: &[usize]) -> Vec<f64> {
        let n = self.n_days();
        let mut g = self.info.clone();
        for (v, m) in self.lagged.iter().enumerate() {
            let s = spatial.get(v).copied().unwrap_or(0.0);
            if s == 0.0 {
                continue;
            }
            if v == 0 {
                g += m * s;
            } else {
                g += (m + m.transpose()) * s;
            }
        }
        let hg = &self.h * g;
        lags.iter()
            .map(|&v| {
                if v >= n {
                    return f64::NAN;
                }
                let s: f64 = (v..n).map(|t| hg.row(t).dot(&self.h.row(t - v))).sum();
                s / (n - v) as f64
            })
            .collect()
    }
}

fn check_normalized(density: &Raster) -> Result<()> {
    let mass = density.integral();
    if (mass - 1.0).abs() > 1e-6 {
        return Err(Error::domain(format!(
            "density raster integrates to {mass}, not 1"
        )));
    }
    Ok(())
}

/// Offset classes of the masked raster. Small rasters are summed directly,
/// larger ones through a zero-padded FFT autocorrelation.
fn offset_classes(density: &Raster) -> (Vec<f64>, Vec<f64>) {
    let g = density.grid();
    let (m, p) = (g.m, g.p);
    let vals = Array2::from_shape_fn((m, p), |(i, j)| density.get(i, j).unwrap_or(0.0));
    let area2 = g.cell_area() * g.cell_area();
    let auto = if m * p <= 1024 {
        direct_autocorrelation(&vals)
    } else {
        fft_autocorrelation(&vals)
    };
    let mut distances = Vec::with_capacity(auto.len());
    let mut weights = Vec::with_capacity(auto.len());
    for ((di, dj), w) in auto {
        if w != 0.0 {
            distances.push(((di as f64 * g.dx).powi(2) + (dj as f64 * g.dy).powi(2)).sqrt());
            weights.push(w * area2);
        }
    }
    (distances, weights)
}

fn direct_autocorrelation(a: &Array2<f64>) -> Vec<((isize, isize), f64)> {
    let (m, p) = a.dim();
    let (m, p) = (m as isize, p as isize);
    let mut out = Vec::new();
    for di in -(m - 1)..m {
        for dj in -(p - 1)..p {
            let mut s = 0.0;
            for i in 0.max(-di)..m.min(m - di) {
                for j in 0.max(-dj)..p.min(p - dj) {
                    s += a[[i as usize, j as usize]] * a[[(i + di) as usize, (j + dj) as usize]];
                }
            }
            out.push(((di, dj), s));
        }
    }
    out
}

fn fft_autocorrelation(a: &Array2<f64>) -> Vec<((isize, isize), f64)> {
    let (m, p) = a.dim();
    let (mm, pp) = ((2 * m).next_power_of_two(), (2 * p).next_power_of_two());
    let mut buf = Array2::from_elem((mm, pp), Complex64::new(0.0, 0.0));
    for i in 0..m {
        for j in 0..p {
            buf[[i, j]] = Complex64::new(a[[i, j]], 0.0);
        }
    }
    let plan = Fft2::new(mm, pp);
    plan.transform(&mut buf, false);
    buf.mapv_inplace(|z| Complex64::new(z.norm_sqr(), 0.0));
    plan.transform(&mut buf, true);
    let scale = 1.0 / (mm * pp) as f64;
    let (m, p) = (m as isize, p as isize);
    let mut out = Vec::new();
    for di in -(m - 1)..m {
        for dj in -(p - 1)..p {
            let i = di.rem_euclid(mm as isize) as usize;
            let j = dj.rem_euclid(pp as isize) as usize;
            out.push(((di, dj), buf[[i, j]].re * scale));
        }
    }
    out
}

/// `lambda1(t) lambda1(t-v) (sum sum lambda0 lambda0 exp(sigma2 r_phi r_theta(v)) dA^2 - 1)`
/// for a single day `t`.
pub fn theoretical_temporal_cov(
    v: f64,
    params: &CovarianceParams,
    density: &Raster,
    lambda1_at: impl Fn(i64) -> f64,
    t: i64,
) -> Result<f64> {
    if !(v > 0.0) {
        return Err(Error::domain("temporal lag must be positive"));
    }
    check_normalized(density)?;
    let (distances, weights) = offset_classes(density);
    let rt = params.temporal_corr(v);
    let s: f64 = distances
        .iter()
        .zip(&weights)
        .map(|(&d, &w)| w * (params.sigma2 * params.spatial_corr(d) * rt).exp_m1())
        .sum();
    Ok(lambda1_at(t) * lambda1_at(t - v.round() as i64) * s)
}

/// Settings of the pair-correlation contrast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpatialFitOptions {
    /// Lag range; `None` uses the whole curve.
    pub u_range: Option<(f64, f64)>,
    pub exponent: f64,
    /// Optional weight per lag of the curve.
    pub weights: Option<Vec<f64>>,
    pub sigma2_bounds: (f64, f64),
    /// Bounds on `phi` as multiples of the upper end of the lag range.
    pub phi_bounds_rel: (f64, f64),
}

impl Default for SpatialFitOptions {
    fn default() -> Self {
        Self {
            u_range: None,
            exponent: 0.25,
            weights: None,
            sigma2_bounds: (1e-3, 20.0),
            phi_bounds_rel: (1e-3, 1e2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialFit {
    pub sigma2: f64,
    pub phi: f64,
    pub contrast: f64,
    /// The minimiser touches the parameter box.
    pub at_boundary: bool,
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1]))
        .sum()
}

fn near_bound(x: &[f64], lo: &[f64], hi: &[f64]) -> bool {
    x.iter()
        .zip(lo.iter().zip(hi))
        .any(|(v, (l, h))| (v - l).abs() < 1e-6 || (h - v).abs() < 1e-6)
}

/// Minimises `int (g_hat(u)^c - g(u)^c)^2 du` over `(sigma2, phi)`, searching
/// in log coordinates: a coarse grid scan, Nelder-Mead, then one restart.
pub fn fit_spatial_params(curve: &PcfCurve, opts: &SpatialFitOptions) -> Result<SpatialFit> {
    let (u_lo, u_hi) = opts.u_range.unwrap_or((
        curve.u_grid.first().copied().unwrap_or(0.0),
        curve.u_grid.last().copied().unwrap_or(0.0),
    ));
    let mut us = Vec::new();
    let mut target = Vec::new();
    let mut wts = Vec::new();
    for (k, (&u, &g)) in curve.u_grid.iter().zip(&curve.values).enumerate() {
        if u >= u_lo && u <= u_hi {
            if !(g >= 0.0 && g.is_finite()) {
                return Err(Error::domain(format!(
                    "empirical pair correlation {g} at u = {u}"
                )));
            }
            us.push(u);
            target.push(g.powf(opts.exponent));
            wts.push(opts.weights.as_ref().map_or(1.0, |w| w[k]));
        }
    }
    if us.len() < 2 {
        return Err(Error::domain(
            "fewer than two lags inside the fitting range",
        ));
    }
    let c = opts.exponent;
    let contrast = |sigma2: f64, phi: f64| {
        let resid: Vec<f64> = us
            .iter()
            .zip(&target)
            .zip(&wts)
            .map(|((&u, &t), &w)| w * (t - theoretical_pcf(u, sigma2, phi).powf(c)).powi(2))
            .collect();
        trapezoid(&us, &resid)
    };
    let lo = [
        opts.sigma2_bounds.0.ln(),
        (opts.phi_bounds_rel.0 * u_hi).ln(),
    ];
    let hi = [
        opts.sigma2_bounds.1.ln(),
        (opts.phi_bounds_rel.1 * u_hi).ln(),
    ];
    let mut f = |x: &[f64]| contrast(x[0].exp(), x[1].exp());

    let mut best = (f64::INFINITY, [0.0, 0.0]);
    let steps = 16;
    for a in 0..=steps {
        for b in 0..=steps {
            let x = [
                lo[0] + (hi[0] - lo[0]) * a as f64 / steps as f64,
                lo[1] + (hi[1] - lo[1]) * b as f64 / steps as f64,
            ];
            let v = f(&x);
            if v < best.0 {
                best = (v, x);
            }
        }
    }
    if !best.0.is_finite() {
        return Err(Error::NonFiniteContrast(
            best.1.iter().map(|v| v.exp()).collect(),
        ));
    }
    let step = [
        (hi[0] - lo[0]) / steps as f64,
        (hi[1] - lo[1]) / steps as f64,
    ];
    let first = nelder_mead(&mut f, &best.1, &step, &lo, &hi, 1e-10, 4000);
    let second = nelder_mead(
        &mut f,
        &first.x,
        &[0.25 * step[0], 0.25 * step[1]],
        &lo,
        &hi,
        1e-10,
        4000,
    );
    let m = if second.value <= first.value {
        second
    } else {
        first
    };
    if !m.value.is_finite() {
        return Err(Error::NonFiniteContrast(
            m.x.iter().map(|v| v.exp()).collect(),
        ));
    }
    Ok(SpatialFit {
        sigma2: m.x[0].exp(),
        phi: m.x[1].exp(),
        contrast: m.value,
        at_boundary: near_bound(&m.x, &lo, &hi),
    })
}

/// Settings of the autocovariance contrast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemporalFitOptions {
    /// Inclusive lag range; `None` uses every lag of the curve.
    pub v_range: Option<(usize, usize)>,
    pub theta_bounds: (f64, f64),
    /// Compare against the expected value of the estimator under a fitted
    /// temporal mean rather than the raw model autocovariance.
    pub mean_correction: bool,
}

impl Default for TemporalFitOptions {
    fn default() -> Self {
        Self {
            v_range: None,
            theta_bounds: (1e-2, 1e3),
            mean_correction: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalFit {
    pub theta: f64,
    pub contrast: f64,
    pub at_boundary: bool,
}

/// Minimises `sum_v (C_bar(v) - C(v; theta) + B(v; theta))^2` with `sigma2`
/// and `phi` held at their spatial estimates. `B` is the mean-fit bias from
/// `correction`, or zero when it is absent.
pub fn fit_theta(
    autocov: &AutocovCurve,
    sigma2: f64,
    phi: f64,
    model: &TemporalCovModel,
    correction: Option<&MeanCorrection>,
    opts: &TemporalFitOptions,
) -> Result<TemporalFit> {
    let (v_lo, v_hi) = opts
        .v_range
        .unwrap_or((1, autocov.v_grid.last().copied().unwrap_or(0)));
    let lags: Vec<(usize, f64)> = autocov
        .v_grid
        .iter()
        .zip(&autocov.values)
        .filter(|(&v, _)| v >= v_lo && v <= v_hi)
        .map(|(&v, &c)| (v, c))
        .collect();
    if lags.is_empty() {
        return Err(Error::domain(
            "no autocovariance lags inside the fitting range",
        ));
    }
    let coef = model.series(sigma2, phi);
    let lag_idx: Vec<usize> = lags.iter().map(|&(v, _)| v).collect();
    let contrast = |theta: f64| {
        let factor = |v: usize| eval_series(&coef, (-(v as f64) / theta).exp());
        let bias = match correction {
            Some(mc) => {
                let spatial: Vec<f64> = (0..mc.n_days()).map(factor).collect();
                mc.bias(&spatial, &lag_idx)
            }
            None => vec![0.0; lags.len()],
        };
        lags.iter()
            .zip(&bias)
            .map(|(&(v, c), b)| {
                let lp = model.lambda_products.get(v).copied().unwrap_or(f64::NAN);
                (c - lp * factor(v) + b).powi(2)
            })
            .sum::<f64>()
    };
    let lo = [opts.theta_bounds.0.ln()];
    let hi = [opts.theta_bounds.1.ln()];
    let mut f = |x: &[f64]| contrast(x[0].exp());
    let steps = 60;
    let mut best = (f64::INFINITY, 0.0);
    for a in 0..=steps {
        let x = lo[0] + (hi[0] - lo[0]) * a as f64 / steps as f64;
        let v = f(&[x]);
        if v < best.0 {
            best = (v, x);
        }
    }
    if !best.0.is_finite() {
        return Err(Error::NonFiniteContrast(vec![best.1.exp()]));
    }
    let step = [(hi[0] - lo[0]) / steps as f64];
    let first = nelder_mead(&mut f, &[best.1], &step, &lo, &hi, 1e-10, 2000);
    let second = nelder_mead(&mut f, &first.x, &[0.25 * step[0]], &lo, &hi, 1e-10, 2000);
    let m = if second.value <= first.value {
        second
    } else {
        first
    };
    Ok(TemporalFit {
        theta: m.x[0].exp(),
        contrast: m.value,
        at_boundary: near_bound(&m.x, &lo, &hi),
    })
}

/// Fitted parameters with the contrasts that produced them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovFitReport {
    pub params: CovarianceParams,
    pub contrast_spatial: f64,
    pub contrast_temporal: f64,
    pub spatial_at_boundary: bool,
    pub temporal_at_boundary: bool,
}

impl CovFitReport {
    /// CSV `sigma2,phi,theta,contrast_spatial,contrast_temporal`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record([
            "sigma2",
            "phi",
            "theta",
            "contrast_spatial",
            "contrast_temporal",
        ])?;
        wtr.serialize((
            self.params.sigma2,
            self.params.phi,
            self.params.theta,
            self.contrast_spatial,
            self.contrast_temporal,
        ))?;
        wtr.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{GridSpec, RasterUnits};

    #[test]
    fn pcf_limits() {
        assert_eq!(theoretical_pcf(0.0, 4.933, 3494.705), 4.933f64.exp());
        assert!(theoretical_pcf(500.0, 2.0, 5.0) - 1.0 < 1e-6 * 2f64.exp());
    }

    #[test]
    fn poisson_k_is_exact() {
        let p = CovarianceParams::new(0.0, 1.0, 1.0).unwrap();
        let k = theoretical_k(0.7, 3.0, &p).unwrap();
        assert!((k - 2.0 * PI * 0.49 * 3.0).abs() < 1e-12);
    }

    #[test]
    fn clustered_k_exceeds_poisson() {
        let p = CovarianceParams::new(1.0, 0.3, 2.0).unwrap();
        assert!(theoretical_k(0.5, 1.0, &p).unwrap() > 2.0 * PI * 0.25);
    }

    #[test]
    fn k_agrees_with_dense_riemann_sum() {
        let p = CovarianceParams::new(1.2, 0.4, 1.5).unwrap();
        let (a, b) = (0.8, 2.0);
        let n = 1000;
        let (du, dv) = (a / n as f64, b / n as f64);
        let mut s = 0.0;
        for i in 0..n {
            let u = (i as f64 + 0.5) * du;
            let c = p.sigma2 * p.spatial_corr(u);
            for j in 0..n {
                let v = (j as f64 + 0.5) * dv;
                s += u * (c * p.temporal_corr(v)).exp();
            }
        }
        let riemann = 4.0 * PI * s * du * dv;
        let k = theoretical_k(a, b, &p).unwrap();
        assert!(((k - riemann) / k).abs() < 1e-6);
    }

    #[test]
    fn spatial_fit_recovers_exact_curve() {
        let u: Vec<f64> = (1..=60).map(|k| k as f64 * 0.25).collect();
        let curve = PcfCurve {
            values: u.iter().map(|&x| theoretical_pcf(x, 2.0, 5.0)).collect(),
            u_grid: u,
            bandwidth: 0.1,
        };
        let fit = fit_spatial_params(&curve, &SpatialFitOptions::default()).unwrap();
        assert!((fit.sigma2 / 2.0 - 1.0).abs() < 1e-4, "{fit:?}");
        assert!((fit.phi / 5.0 - 1.0).abs() < 1e-4, "{fit:?}");
    }

    fn raster(vals: &[f64], m: usize, p: usize) -> Raster {
        let g = GridSpec::unmasked(0.0, 0.0, 1.0, 1.0, m, p).unwrap();
        let a = Array2::from_shape_vec((m, p), vals.to_vec()).unwrap();
        Raster::new(g, a, RasterUnits::Density).unwrap()
    }

    #[test]
    fn temporal_cov_degenerate_cases() {
        let p0 = CovarianceParams::new(0.0, 1.0, 1.0).unwrap();
        let r = raster(&[0.1, 0.2, 0.3, 0.4], 2, 2);
        assert_eq!(
            theoretical_temporal_cov(1.0, &p0, &r, |_| 5.0, 3).unwrap(),
            0.0
        );

        let single = raster(&[1.0], 1, 1);
        let p = CovarianceParams::new(0.8, 1.0, 2.0).unwrap();
        let c = theoretical_temporal_cov(1.0, &p, &single, |t| t as f64, 3).unwrap();
        let expected = 3.0 * 2.0 * ((0.8 * (-0.5f64).exp()).exp() - 1.0);
        assert!((c - expected).abs() < 1e-12);
    }

    #[test]
    fn temporal_cov_four_cells_hand_expanded() {
        let vals = [0.1, 0.2, 0.3, 0.4];
        let r = raster(&vals, 2, 2);
        let p = CovarianceParams::new(1.3, 0.7, 1.1).unwrap();
        let c = theoretical_temporal_cov(2.0, &p, &r, |_| 4.0, 5).unwrap();
        let cells: [(f64, f64); 4] = [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)];
        let mut s = 0.0;
        for a in 0..4 {
            for b in 0..4 {
                let d =
                    ((cells[a].0 - cells[b].0).powi(2) + (cells[a].1 - cells[b].1).powi(2)).sqrt();
                s += vals[a] * vals[b] * (1.3 * (-d / 0.7).exp() * (-2.0 / 1.1f64).exp()).exp();
            }
        }
        assert!((c - 16.0 * (s - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn fft_and_direct_autocorrelation_agree() {
        let a = Array2::from_shape_fn((5, 7), |(i, j)| ((i * 7 + j) as f64 * 0.37).sin().abs());
        let d = direct_autocorrelation(&a);
        let f = fft_autocorrelation(&a);
        for (x, y) in d.iter().zip(&f) {
            assert_eq!(x.0, y.0);
            assert!((x.1 - y.1).abs() < 1e-12);
        }
    }

    #[test]
    fn unnormalized_raster_is_rejected() {
        let r = raster(&[1.0, 1.0, 1.0, 1.0], 2, 2);
        let p = CovarianceParams::new(1.0, 1.0, 1.0).unwrap();
        assert!(theoretical_temporal_cov(1.0, &p, &r, |_| 1.0, 2).is_err());
    }

    #[test]
    fn theta_fit_recovers_exact_curve() {
        let vals: Vec<f64> = (0..16).map(|k| 1.0 + (k % 3) as f64).collect();
        let total: f64 = vals.iter().sum();
        let r = raster(&vals.iter().map(|v| v / total).collect::<Vec<_>>(), 4, 4);
        let lambda1 = vec![50.0; 40];
        let model = TemporalCovModel::new(&r, &lambda1).unwrap();
        let truth = CovarianceParams::new(1.5, 2.0, 0.5).unwrap();
        let v_grid: Vec<usize> = (1..=5).collect();
        let curve = AutocovCurve {
            values: v_grid.iter().map(|&v| model.autocov(v, &truth)).collect(),
            c_hat: vec![],
            v_grid,
        };
        let fit = fit_theta(
            &curve,
            1.5,
            2.0,
            &model,
            None,
            &TemporalFitOptions::default(),
        )
        .unwrap();
        assert!((fit.theta - 0.5).abs() < 1e-3, "{fit:?}");
    }

    #[test]
    fn series_matches_direct_spatial_factor() {
        let vals: Vec<f64> = (0..16).map(|k| 1.0 + (k % 5) as f64).collect();
        let total: f64 = vals.iter().sum();
        let r = raster(&vals.iter().map(|v| v / total).collect::<Vec<_>>(), 4, 4);
        let model = TemporalCovModel::new(&r, &[1.0; 4]).unwrap();
        for (sigma2, phi) in [(0.5, 0.3), (3.0, 1.2), (8.0, 0.05)] {
            let coef = model.series(sigma2, phi);
            for v in [0.0, 0.5, 1.0, 4.0] {
                let p = CovarianceParams::new(sigma2, phi, 1.7).unwrap();
                let direct = model.spatial_factor(v, &p);
                let s = eval_series(&coef, p.temporal_corr(v));
                assert!(
                    (s - direct).abs() <= 1e-12 * direct.abs().max(1.0),
                    "{sigma2} {phi} {v}: {s} vs {direct}"
                );
            }
        }
    }

    #[test]
    fn intercept_only_bias_is_variance_of_mean() {
        let n = 12;
        let lambda = 40.0;
        let x = DMatrix::from_element(n, 1, 1.0);
        let mc = MeanCorrection::new(&x, &vec![lambda; n]).unwrap();
        let spatial: Vec<f64> = (0..n).map(|v| 0.3 * (-(v as f64) / 2.0).exp()).collect();
        let cov = |a: usize, b: usize| {
            let v = a.abs_diff(b);
            lambda * lambda * spatial[v] + if v == 0 { lambda } else { 0.0 }
        };
        let mut var_mean = 0.0;
        for a in 0..n {
            for b in 0..n {
                var_mean += cov(a, b);
            }
        }
        var_mean /= (n * n) as f64;
        for b in mc.bias(&spatial, &[1, 3, 7]) {
            assert!((b - var_mean).abs() < 1e-9 * var_mean, "{b} vs {var_mean}");
        }
    }
}
