//! Pipeline configuration read from TOML. Every section and field is
//! optional; omitted values take the defaults of the owning module.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bandwidth::{DEFAULT_EPSILON, DEFAULT_K, DEFAULT_MAX_ITER};
use crate::covfit::{SpatialFitOptions, TemporalFitOptions};
use crate::error::{Error, Result};
use crate::glm::{DesignOptions, IrlsOptions};
use crate::intensity::DEFAULT_GRID_SIZE;
use crate::mala::TARGET_ACCEPT;
use crate::summary::STOYAN_C;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// `x,y,t` event file.
    pub pattern: Option<PathBuf>,
    /// `x,y` polygon vertex file.
    pub window: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            pattern: None,
            window: None,
            out_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// First day; the earliest stamp in the file when omitted.
    pub t_start: Option<i64>,
    /// Last day; the latest stamp in the file when omitted.
    pub t_end: Option<i64>,
    /// Multiplier applied to raw coordinates and window vertices.
    pub coordinate_scale: f64,
    /// Trailing days withheld from fitting and used to judge forecasts.
    pub holdout: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            t_start: None,
            t_end: None,
            coordinate_scale: 1.0,
            holdout: 6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub m: usize,
    pub p: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            m: DEFAULT_GRID_SIZE,
            p: DEFAULT_GRID_SIZE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandwidthConfig {
    pub k: usize,
    pub epsilon: f64,
    pub max_iter: usize,
    /// Fixed spatial bandwidth; skips clustering when set.
    pub fixed: Option<f64>,
}

impl Default for BandwidthConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            epsilon: DEFAULT_EPSILON,
            max_iter: DEFAULT_MAX_ITER,
            fixed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlmConfig {
    pub design: DesignOptions,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for GlmConfig {
    fn default() -> Self {
        let irls = IrlsOptions::default();
        Self {
            design: DesignOptions::default(),
            tol: irls.tol,
            max_iter: irls.max_iter,
        }
    }
}

impl GlmConfig {
    pub fn irls(&self) -> IrlsOptions {
        IrlsOptions {
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SummariesConfig {
    /// Spatial lags of the K-functions; derived from the window when omitted.
    pub r_grid: Option<Vec<f64>>,
    /// Temporal lags of the spatio-temporal K-function.
    pub t_grid: Vec<f64>,
    /// Lags of the pair correlation; derived from the window when omitted.
    pub u_grid: Option<Vec<f64>>,
    pub v_max: usize,
    /// Half-width in days of the temporal kernel used inside K.
    pub temporal_bandwidth: f64,
    pub stoyan_c: f64,
    /// Permutations of the space-time test; zero skips the test.
    pub n_perm: usize,
    pub n_sim: usize,
}

impl Default for SummariesConfig {
    fn default() -> Self {
        Self {
            r_grid: None,
            t_grid: (0..7).map(|k| k as f64 + 0.5).collect(),
            u_grid: None,
            v_max: 10,
            temporal_bandwidth: 7.0,
            stoyan_c: STOYAN_C,
            n_perm: 200,
            n_sim: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CovfitConfig {
    pub spatial: SpatialFitOptions,
    pub temporal: TemporalFitOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MalaConfig {
    pub n_iter: usize,
    pub burn_in: Option<usize>,
    pub thin: usize,
    /// Number of trailing days modelled jointly.
    pub zeta: usize,
    pub target_accept: f64,
    pub initial_xi2: Option<f64>,
}

impl Default for MalaConfig {
    fn default() -> Self {
        Self {
            n_iter: 5000,
            burn_in: None,
            thin: 10,
            zeta: 7,
            target_accept: TARGET_ACCEPT,
            initial_xi2: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastConfig {
    /// Horizons in days after the last fitted day.
    pub deltas: Vec<u32>,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            deltas: (1..=6).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    /// Forecast patterns drawn per horizon; also the envelope size.
    pub n_realizations: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            n_realizations: 200,
        }
    }
}

/// The whole configuration file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Root seed; every random consumer derives its own seed from it.
    pub seed: u64,
    pub threads: Option<usize>,
    pub paths: PathsConfig,
    pub data: DataConfig,
    pub grid: GridConfig,
    pub bandwidth: BandwidthConfig,
    pub glm: GlmConfig,
    pub summaries: SummariesConfig,
    pub covfit: CovfitConfig,
    pub mala: MalaConfig,
    pub forecast: ForecastConfig,
    pub simulate: SimulateConfig,
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(
            field,
            format!("must be positive and finite, got {v}"),
        ))
    }
}

fn at_least(field: &str, v: usize, min: usize) -> Result<()> {
    if v >= min {
        Ok(())
    } else {
        Err(Error::config(
            field,
            format!("must be at least {min}, got {v}"),
        ))
    }
}

fn increasing_positive(field: &str, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::config(field, "must not be empty"));
    }
    if grid.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::config(field, "entries must be positive and finite"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::config(field, "entries must be strictly increasing"));
    }
    Ok(())
}

fn ordered_pair(field: &str, (lo, hi): (f64, f64)) -> Result<()> {
    if lo > 0.0 && hi.is_finite() && lo < hi {
        Ok(())
    } else {
        Err(Error::config(
            field,
            format!("needs 0 < lower < upper, got ({lo}, {hi})"),
        ))
    }
}

impl PipelineConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a file. Relative paths inside it are resolved
    /// against the file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Some(dir) = path.parent() {
            let fix = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            };
            cfg.paths.pattern.as_mut().map(fix);
            cfg.paths.window.as_mut().map(fix);
            fix(&mut cfg.paths.out_dir);
        }
        Ok(cfg)
    }

    /// Range checks on every numeric field.
    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.threads {
            at_least("threads", t, 1)?;
        }
        let d = &self.data;
        positive("data.coordinate_scale", d.coordinate_scale)?;
        if let (Some(a), Some(b)) = (d.t_start, d.t_end) {
            if b < a {
                return Err(Error::config(
                    "data.t_end",
                    format!("{b} precedes data.t_start {a}"),
                ));
            }
            let days = (b - a + 1) as usize;
            if d.holdout + 2 > days {
                return Err(Error::config(
                    "data.holdout",
                    format!(
                        "{} held-out days leave fewer than 2 of {days} for fitting",
                        d.holdout
                    ),
                ));
            }
        }
        at_least("grid.m", self.grid.m, 1)?;
        at_least("grid.p", self.grid.p, 1)?;

        let b = &self.bandwidth;
        at_least("bandwidth.k", b.k, 1)?;
        positive("bandwidth.epsilon", b.epsilon)?;
        at_least("bandwidth.max_iter", b.max_iter, 1)?;
        if let Some(h) = b.fixed {
            positive("bandwidth.fixed", h)?;
        }

        positive("glm.tol", self.glm.tol)?;
        at_least("glm.max_iter", self.glm.max_iter, 1)?;

        let s = &self.summaries;
        if let Some(r) = &s.r_grid {
            increasing_positive("summaries.r_grid", r)?;
        }
        increasing_positive("summaries.t_grid", &s.t_grid)?;
        if let Some(u) = &s.u_grid {
            increasing_positive("summaries.u_grid", u)?;
        }
        at_least("summaries.v_max", s.v_max, 1)?;
        positive("summaries.temporal_bandwidth", s.temporal_bandwidth)?;
        positive("summaries.stoyan_c", s.stoyan_c)?;
        at_least("summaries.n_sim", s.n_sim, 2)?;

        let c = &self.covfit;
        positive("covfit.spatial.exponent", c.spatial.exponent)?;
        ordered_pair("covfit.spatial.sigma2_bounds", c.spatial.sigma2_bounds)?;
        ordered_pair("covfit.spatial.phi_bounds_rel", c.spatial.phi_bounds_rel)?;
        ordered_pair("covfit.temporal.theta_bounds", c.temporal.theta_bounds)?;
        if let Some((lo, hi)) = c.spatial.u_range {
            if !(lo >= 0.0 && lo < hi && hi.is_finite()) {
                return Err(Error::config(
                    "covfit.spatial.u_range",
                    format!("needs 0 <= lower < upper, got ({lo}, {hi})"),
                ));
            }
        }
        if let Some(w) = &c.spatial.weights {
            if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(Error::config(
                    "covfit.spatial.weights",
                    "entries must be non-negative",
                ));
            }
        }
        if let Some((lo, hi)) = c.temporal.v_range {
            if lo == 0 || hi < lo {
                return Err(Error::config(
                    "covfit.temporal.v_range",
                    format!("needs 1 <= lower <= upper, got ({lo}, {hi})"),
                ));
            }
        }

        let m = &self.mala;
        at_least("mala.n_iter", m.n_iter, 1)?;
        if let Some(b) = m.burn_in {
            if b >= m.n_iter {
                return Err(Error::config(
                    "mala.burn_in",
                    format!("must be below mala.n_iter {}", m.n_iter),
                ));
            }
        }
        at_least("mala.thin", m.thin, 1)?;
        at_least("mala.zeta", m.zeta, 1)?;
        if !(m.target_accept > 0.0 && m.target_accept < 1.0) {
            return Err(Error::config(
                "mala.target_accept",
                format!("must lie in (0, 1), got {}", m.target_accept),
            ));
        }
        if let Some(x) = m.initial_xi2 {
            positive("mala.initial_xi2", x)?;
        }

        if self.forecast.deltas.is_empty() {
            return Err(Error::config("forecast.deltas", "must not be empty"));
        }
        if self.forecast.deltas.contains(&0) {
            return Err(Error::config(
                "forecast.deltas",
                "horizons must be at least 1",
            ));
        }
        at_least("simulate.n_realizations", self.simulate.n_realizations, 2)?;
        Ok(())
    }

    /// Checks that the input files exist.
    pub fn validate_paths(&self) -> Result<()> {
        for (field, p) in [
            ("paths.pattern", &self.paths.pattern),
            ("paths.window", &self.paths.window),
        ] {
            match p {
                None => return Err(Error::config(field, "is required")),
                Some(p) if !p.is_file() => {
                    return Err(Error::config(
                        field,
                        format!("`{}` is not a readable file", p.display()),
                    ))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }
}
