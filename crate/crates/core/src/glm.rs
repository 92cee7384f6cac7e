//! Poisson regression for the temporal intensity component.
//!
//! The log of the expected daily count is linear in day-of-week indicators,
//! season indicators, annual harmonics with angular frequency `2*pi/365` and
//! a linear trend in the day index. The model is fitted by iteratively
//! reweighted least squares with a log link.

use chrono::{Datelike, Duration, NaiveDate};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use crate::data::TimeRange;
use crate::error::{Error, Result};

/// Angular frequency of the annual harmonics.
pub const TAU: f64 = 2.0 * std::f64::consts::PI / 365.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Season {
    Spring,
    Summer,
    Fall,
    Winter,
}

impl Season {
    pub const ALL: [Season; 4] = [Season::Spring, Season::Summer, Season::Fall, Season::Winter];

    /// Spring 3-5, Summer 6-8, Fall 9-10, Winter 11-2.
    pub fn of_month(month: u32) -> Season {
        match month {
            3..=5 => Season::Spring,
            6..=8 => Season::Summer,
            9 | 10 => Season::Fall,
            _ => Season::Winter,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Season::Spring => "Spring",
            Season::Summer => "Summer",
            Season::Fall => "Fall",
            Season::Winter => "Winter",
        }
    }
}

pub const WEEKDAYS: [&str; 7] = [
    "Monday",
    "Tuesday",
    "Wednesday",
    "Thursday",
    "Friday",
    "Saturday",
    "Sunday",
];

/// Which covariates enter the design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DesignOptions {
    /// Calendar date of day `t = 1`.
    pub origin: NaiveDate,
    /// Seven weekday indicators (no intercept). When false an intercept
    /// column is used instead.
    pub day_of_week: bool,
    /// Seasons left out of the design.
    pub reference_seasons: Vec<Season>,
    pub harmonics: bool,
    pub trend: bool,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self {
            origin: NaiveDate::from_ymd_opt(2014, 1, 1).expect("valid date"),
            day_of_week: true,
            reference_seasons: vec![Season::Spring, Season::Winter],
            harmonics: true,
            trend: true,
        }
    }
}

impl DesignOptions {
    /// Intercept plus nothing else.
    pub fn intercept_only() -> Self {
        Self {
            day_of_week: false,
            reference_seasons: Season::ALL.to_vec(),
            harmonics: false,
            trend: false,
            ..Self::default()
        }
    }

    pub fn date_of(&self, t: i64) -> NaiveDate {
        self.origin + Duration::days(t - 1)
    }

    fn included_seasons(&self) -> Vec<Season> {
        Season::ALL
            .iter()
            .copied()
            .filter(|s| !self.reference_seasons.contains(s))
            .collect()
    }

    pub fn has_intercept(&self) -> bool {
        !self.day_of_week
    }

    pub fn labels(&self) -> Vec<String> {
        let mut labels = Vec::new();
        if self.day_of_week {
            labels.extend(WEEKDAYS.iter().map(|s| s.to_string()));
        } else {
            labels.push("(Intercept)".into());
        }
        labels.extend(
            self.included_seasons()
                .iter()
                .map(|s| s.label().to_string()),
        );
        if self.harmonics {
            labels.extend(["sin(wt)", "cos(wt)", "sin(2wt)", "cos(2wt)"].map(String::from));
        }
        if self.trend {
            labels.push("t".into());
        }
        labels
    }

    /// Covariate row for day `t`.
    pub fn row(&self, t: i64) -> Vec<f64> {
        let date = self.date_of(t);
        let mut row = Vec::with_capacity(16);
        if self.day_of_week {
            let wd = date.weekday().number_from_monday() as usize;
            row.extend((1..=7).map(|d| if d == wd { 1.0 } else { 0.0 }));
        } else {
            row.push(1.0);
        }
        let season = Season::of_month(date.month());
        row.extend(
            self.included_seasons()
                .iter()
                .map(|&s| if s == season { 1.0 } else { 0.0 }),
        );
        if self.harmonics {
            let a = TAU * t as f64;
            row.extend([a.sin(), a.cos(), (2.0 * a).sin(), (2.0 * a).cos()]);
        }
        if self.trend {
            row.push(t as f64);
        }
        row
    }
}

/// One row per day of the range.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub labels: Vec<String>,
    pub days: Vec<i64>,
    pub x: DMatrix<f64>,
    pub options: DesignOptions,
}

impl DesignMatrix {
    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.x.ncols()
    }
}

/// Builds the calendar design and checks it has full column rank.
pub fn build_design(t_range: TimeRange, options: &DesignOptions) -> Result<DesignMatrix> {
    let labels = options.labels();
    let days: Vec<i64> = t_range.days().collect();
    let rows: Vec<Vec<f64>> = days.iter().map(|&t| options.row(t)).collect();
    let x = DMatrix::from_fn(days.len(), labels.len(), |r, c| rows[r][c]);
    let deficient = rank_deficient_columns(&x);
    if !deficient.is_empty() {
        return Err(Error::RankDeficient {
            columns: deficient.iter().map(|&c| labels[c].clone()).collect(),
        });
    }
    Ok(DesignMatrix {
        labels,
        days,
        x,
        options: options.clone(),
    })
}

/// Columns that are (numerically) linear combinations of earlier columns,
/// found by modified Gram-Schmidt.
fn rank_deficient_columns(x: &DMatrix<f64>) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut bad = Vec::new();
    for c in 0..x.ncols() {
        let col = x.column(c).into_owned();
        let norm0 = col.norm();
        let mut v = col;
        for b in &basis {
            let proj = b.dot(&v);
            v -= b * proj;
        }
        let norm = v.norm();
        if norm0 == 0.0 || norm <= 1e-9 * norm0 {
            bad.push(c);
        } else {
            basis.push(v / norm);
        }
    }
    bad
}

/// IRLS controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IrlsOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for IrlsOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100,
        }
    }
}

/// Fitted Poisson regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalGlmFit {
    pub labels: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub z_values: Vec<f64>,
    pub p_values: Vec<f64>,
    pub null_deviance: f64,
    pub null_df: usize,
    pub residual_deviance: f64,
    pub residual_df: usize,
    pub aic: f64,
    pub median_deviance_residual: f64,
    pub iterations: usize,
    /// Deviance after every IRLS iteration.
    pub deviance_trace: Vec<f64>,
    pub days: Vec<i64>,
    pub fitted: Vec<f64>,
    pub options: DesignOptions,
}

fn poisson_deviance(y: &[f64], mu: &[f64]) -> f64 {
    2.0 * y
        .iter()
        .zip(mu)
        .map(|(&y, &m)| unit_deviance(y, m))
        .sum::<f64>()
}

#[inline]
fn unit_deviance(y: f64, mu: f64) -> f64 {
    let ylog = if y > 0.0 { y * (y / mu).ln() } else { 0.0 };
    ylog - (y - mu)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Weighted least squares step: solves `min |sqrt(w) (z - X b)|` by QR and
/// returns `b` and `(X' W X)^-1`.
fn wls(x: &DMatrix<f64>, w: &[f64], z: &[f64]) -> Option<(DVector<f64>, DMatrix<f64>)> {
    let (n, p) = (x.nrows(), x.ncols());
    let mut xw = x.clone();
    let mut zw = DVector::zeros(n);
    for r in 0..n {
        let s = w[r].sqrt();
        for c in 0..p {
            xw[(r, c)] *= s;
        }
        zw[r] = z[r] * s;
    }
    let qr = xw.qr();
    let rmat = qr.r();
    let qtz = qr.q().transpose() * zw;
    let beta = rmat.solve_upper_triangular(&qtz)?;
    let rinv = rmat.solve_upper_triangular(&DMatrix::identity(p, p))?;
    let cov = &rinv * rinv.transpose();
    Some((beta, cov))
}

/// Fits the log-link Poisson GLM by IRLS.
pub fn irls_fit(design: &DesignMatrix, y: &[u64], opts: &IrlsOptions) -> Result<TemporalGlmFit> {
    let n = design.n_rows();
    let p = design.n_cols();
    if y.len() != n {
        return Err(Error::Dimension(format!(
            "{} counts for {} design rows",
            y.len(),
            n
        )));
    }
    if p > n {
        return Err(Error::RankDeficient {
            columns: design.labels[n..].to_vec(),
        });
    }
    let deficient = rank_deficient_columns(&design.x);
    if !deficient.is_empty() {
        return Err(Error::RankDeficient {
            columns: deficient
                .iter()
                .map(|&c| design.labels[c].clone())
                .collect(),
        });
    }
    let yf: Vec<f64> = y.iter().map(|&v| v as f64).collect();
    let x = &design.x;

    let mut mu: Vec<f64> = yf.iter().map(|&v| v + 0.1).collect();
    let mut eta: Vec<f64> = mu.iter().map(|m| m.ln()).collect();
    let mut beta = DVector::<f64>::zeros(p);
    let mut cov = DMatrix::<f64>::zeros(p, p);
    let mut deviance = poisson_deviance(&yf, &mu);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        let z: Vec<f64> = (0..n).map(|i| eta[i] + (yf[i] - mu[i]) / mu[i]).collect();
        let (candidate, c) = wls(x, &mu, &z).ok_or(Error::RankDeficient {
            columns: design.labels.clone(),
        })?;
        // step halving keeps the deviance non-increasing
        let mut step = candidate.clone();
        let mut new_dev = f64::INFINITY;
        let mut new_eta = Vec::new();
        let mut new_mu = Vec::new();
        for _ in 0..30 {
            let e = x * &step;
            let m: Vec<f64> = e.iter().map(|v| v.exp()).collect();
            let d = poisson_deviance(&yf, &m);
            new_eta = e.iter().copied().collect();
            new_mu = m;
            new_dev = d;
            if iterations == 1 || (d.is_finite() && d <= deviance * (1.0 + 1e-12) + 1e-12) {
                break;
            }
            step = (&step + &beta) * 0.5;
        }
        if !new_dev.is_finite() {
            return Err(Error::NoConvergence {
                iterations,
                last: beta.iter().copied().collect(),
            });
        }
        let delta = (&step - &beta).amax();
        beta = step;
        eta = new_eta;
        mu = new_mu;
        deviance = new_dev;
        cov = c;
        trace.push(deviance);
        let score = x.transpose() * DVector::from_iterator(n, (0..n).map(|i| yf[i] - mu[i]));
        if iterations > 1 && (delta < opts.tol || score.norm() < opts.tol) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            iterations,
            last: beta.iter().copied().collect(),
        });
    }
    // covariance at the final mean
    let z: Vec<f64> = (0..n).map(|i| eta[i] + (yf[i] - mu[i]) / mu[i]).collect();
    if let Some((_, c)) = wls(x, &mu, &z) {
        cov = c;
    }

    let std_errors: Vec<f64> = (0..p).map(|k| cov[(k, k)].max(0.0).sqrt()).collect();
    let coefficients: Vec<f64> = beta.iter().copied().collect();
    let z_values: Vec<f64> = coefficients
        .iter()
        .zip(&std_errors)
        .map(|(b, s)| b / s)
        .collect();
    let p_values: Vec<f64> = z_values
        .iter()
        .map(|z| erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0))
        .collect();

    let has_intercept = design.options.has_intercept();
    let (null_mu, null_df) = if has_intercept {
        (yf.iter().sum::<f64>() / n as f64, n - 1)
    } else {
        (1.0, n)
    };
    let null_deviance = poisson_deviance(&yf, &vec![null_mu; n]);
    let loglik: f64 = yf
        .iter()
        .zip(&mu)
        .map(|(&y, &m)| y * m.ln() - m - ln_gamma(y + 1.0))
        .sum();
    let residuals: Vec<f64> = yf
        .iter()
        .zip(&mu)
        .map(|(&y, &m)| (y - m).signum() * (2.0 * unit_deviance(y, m)).max(0.0).sqrt())
        .collect();

    Ok(TemporalGlmFit {
        labels: design.labels.clone(),
        coefficients,
        std_errors,
        z_values,
        p_values,
        null_deviance,
        null_df,
        residual_deviance: deviance,
        residual_df: n - p,
        aic: -2.0 * loglik + 2.0 * p as f64,
        median_deviance_residual: median(residuals),
        iterations,
        deviance_trace: trace,
        days: design.days.clone(),
        fitted: mu,
        options: design.options.clone(),
    })
}

/// Expected count on day `t`, which may lie beyond the fitted range.
pub fn predict_lambda1(fit: &TemporalGlmFit, t: i64) -> f64 {
    let row = fit.options.row(t);
    row.iter()
        .zip(&fit.coefficients)
        .map(|(x, b)| x * b)
        .sum::<f64>()
        .exp()
}

impl TemporalGlmFit {
    /// Coefficient table `term,estimate,std_error,z_value,p_value`.
    pub fn write_coefficients<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["term", "estimate", "std_error", "z_value", "p_value"])?;
        for k in 0..self.labels.len() {
            wtr.write_record(&[
                self.labels[k].clone(),
                self.coefficients[k].to_string(),
                self.std_errors[k].to_string(),
                self.z_values[k].to_string(),
                self.p_values[k].to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Deviance summary `quantity,value,df`.
    pub fn write_summary<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["quantity", "value", "df"])?;
        wtr.write_record(&[
            "median_deviance_residual".to_string(),
            self.median_deviance_residual.to_string(),
            String::new(),
        ])?;
        wtr.write_record(&[
            "null_deviance".to_string(),
            self.null_deviance.to_string(),
            self.null_df.to_string(),
        ])?;
        wtr.write_record(&[
            "residual_deviance".to_string(),
            self.residual_deviance.to_string(),
            self.residual_df.to_string(),
        ])?;
        wtr.write_record(&["aic".to_string(), self.aic.to_string(), String::new()])?;
        wtr.flush()?;
        Ok(())
    }
}
